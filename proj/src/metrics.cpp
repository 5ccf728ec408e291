#include "spantrace/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace spantrace {

CharSet::CharSet(const std::vector<CharInterval>& intervals) {
  for (const auto& iv : intervals) add(iv);
}

void CharSet::add(CharInterval iv) {
  if (iv.first >= iv.second) return;
  std::vector<CharInterval> merged;
  for (const auto& r : intervals_) {
    if (r.second < iv.first || r.first > iv.second) {
      merged.push_back(r);
    } else {
      iv.first = std::min(iv.first, r.first);
      iv.second = std::max(iv.second, r.second);
    }
  }
  merged.push_back(iv);
  std::sort(merged.begin(), merged.end());
  intervals_ = std::move(merged);
}

std::size_t CharSet::size() const {
  std::size_t n = 0;
  for (const auto& r : intervals_) n += r.second - r.first;
  return n;
}

CharSet CharSet::intersect(const CharSet& other) const {
  CharSet out;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < intervals_.size() && j < other.intervals_.size()) {
    const auto& a = intervals_[i];
    const auto& b = other.intervals_[j];
    const std::size_t lo = std::max(a.first, b.first);
    const std::size_t hi = std::min(a.second, b.second);
    if (lo < hi) out.add({lo, hi});
    if (a.second < b.second) {
      ++i;
    } else {
      ++j;
    }
  }
  return out;
}

CharSet CharSet::unite(const CharSet& other) const {
  CharSet out = *this;
  for (const auto& r : other.intervals_) out.add(r);
  return out;
}

CharSet CharSet::subtract(const CharSet& other) const {
  CharSet out;
  for (auto r : intervals_) {
    std::size_t cursor = r.first;
    for (const auto& cut : other.intervals_) {
      if (cut.second <= cursor || cut.first >= r.second) continue;
      if (cut.first > cursor) out.add({cursor, cut.first});
      cursor = std::max(cursor, cut.second);
      if (cursor >= r.second) break;
    }
    if (cursor < r.second) out.add({cursor, r.second});
  }
  return out;
}

double char_iou(const CharSet& pred, const CharSet& gold) {
  if (pred.empty()) return 0.0;
  const std::size_t inter = pred.intersect(gold).size();
  const std::size_t uni = pred.unite(gold).size();
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

PrecisionRecallF1 char_f1(const CharSet& pred, const CharSet& gold) {
  PrecisionRecallF1 out;
  const std::size_t inter = pred.intersect(gold).size();
  out.precision =
      pred.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(pred.size());
  out.recall = gold.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(gold.size());
  const double denom = out.precision + out.recall;
  out.f1 = denom == 0.0 ? 0.0 : 2.0 * out.precision * out.recall / denom;
  return out;
}

double char_fpr(const CharSet& pred, const CharSet& gold) {
  if (pred.empty()) return 0.0;
  const std::size_t fp = pred.subtract(gold).size();
  return static_cast<double>(fp) / static_cast<double>(pred.size());
}

void score_event(EventScore& e) {
  e.pred_empty = e.pred.empty();
  e.iou = char_iou(e.pred, e.gold);
  const auto prf = char_f1(e.pred, e.gold);
  e.precision = prf.precision;
  e.recall = prf.recall;
  e.f1 = prf.f1;
  e.fpr = char_fpr(e.pred, e.gold);
}

std::vector<AggregateRow> aggregate(const std::vector<EventScore>& events,
                                    const std::string& group_by) {
  std::map<std::string, AggregateRow> rows;
  std::map<std::string, std::vector<const EventScore*>> scored;
  for (const auto& e : events) {
    std::string key = "all";
    if (!group_by.empty()) {
      auto it = e.labels.find(group_by);
      key = it != e.labels.end() ? it->second : "unlabeled";
    }
    auto& row = rows[key];
    row.group = key;
    ++row.events;
    if (e.outcome == "Unknown") ++row.unknown;
    else if (e.outcome == "Confusion") ++row.confusion;
    else if (e.outcome == "EVT") ++row.evt;
    if (!e.gold.empty()) scored[key].push_back(&e);
  }
  std::vector<AggregateRow> out;
  for (auto& [key, row] : rows) {
    const auto& group_scored = scored[key];
    row.scored_events = static_cast<int>(group_scored.size());
    if (!group_scored.empty()) {
      double iou = 0, f1 = 0, prec = 0, rec = 0, fpr = 0;
      for (const EventScore* e : group_scored) {
        iou += e->iou;
        f1 += e->f1;
        prec += e->precision;
        rec += e->recall;
        fpr += e->fpr;
      }
      const double n = static_cast<double>(group_scored.size());
      row.mean_iou = iou / n;
      row.mean_f1 = f1 / n;
      row.mean_precision = prec / n;
      row.mean_recall = rec / n;
      row.mean_fpr = fpr / n;
    }
    if (row.events > 0) {
      // Fractions are ratios of exact counts, so they sum to 1 by construction.
      row.frac_unknown = static_cast<double>(row.unknown) / row.events;
      row.frac_confusion = static_cast<double>(row.confusion) / row.events;
      row.frac_evt = static_cast<double>(row.evt) / row.events;
    }
    out.push_back(row);
  }
  return out;
}

std::string render_aggregate_table(const std::vector<AggregateRow>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  auto cell = [&](const std::optional<double>& v) {
    std::ostringstream c;
    if (v) {
      c << std::fixed << std::setprecision(4) << *v;
    } else {
      c << "-";
    }
    return c.str();
  };
  os << "group\tevents\tscored\tiou\tf1\tprecision\trecall\tfpr\tunknown\tconfusion\tevt\n";
  for (const auto& r : rows) {
    os << r.group << '\t' << r.events << '\t' << r.scored_events << '\t' << cell(r.mean_iou)
       << '\t' << cell(r.mean_f1) << '\t' << cell(r.mean_precision) << '\t' << cell(r.mean_recall)
       << '\t' << cell(r.mean_fpr) << '\t' << r.frac_unknown << '\t' << r.frac_confusion << '\t'
       << r.frac_evt << '\n';
  }
  return os.str();
}

}  // namespace spantrace
