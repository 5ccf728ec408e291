#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spantrace/text.hpp"

namespace spantrace {

// Set of character positions, stored canonically as sorted disjoint
// non-adjacent half-open intervals.
class CharSet {
 public:
  CharSet() = default;
  explicit CharSet(const std::vector<CharInterval>& intervals);

  void add(CharInterval iv);
  const std::vector<CharInterval>& intervals() const { return intervals_; }
  std::size_t size() const;
  bool empty() const { return intervals_.empty(); }

  CharSet intersect(const CharSet& other) const;
  CharSet unite(const CharSet& other) const;
  CharSet subtract(const CharSet& other) const;

 private:
  std::vector<CharInterval> intervals_;
};

// Eq-style character metrics. Empty pred yields 0 (flagged upstream).
double char_iou(const CharSet& pred, const CharSet& gold);

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};
PrecisionRecallF1 char_f1(const CharSet& pred, const CharSet& gold);

double char_fpr(const CharSet& pred, const CharSet& gold);

struct EventScore {
  std::string query_id;
  std::string trace_id;
  std::map<std::string, std::string> labels;  // dataset / attack / model / method ...
  CharSet pred;
  CharSet gold;
  bool pred_empty = false;  // flagged: precision defined as 0
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double fpr = 0.0;
  std::string outcome;  // Unknown | Confusion | EVT
  bool resolved = false;
  int total_calls = 0;
};

// Computes all metric fields of an EventScore from pred/gold.
void score_event(EventScore& e);

struct AggregateRow {
  std::string group;
  int events = 0;            // events in the group
  int scored_events = 0;     // events with non-empty gold
  std::optional<double> mean_iou;   // absent when scored_events == 0
  std::optional<double> mean_f1;
  std::optional<double> mean_precision;
  std::optional<double> mean_recall;
  std::optional<double> mean_fpr;
  int unknown = 0;
  int confusion = 0;
  int evt = 0;
  double frac_unknown = 0.0;
  double frac_confusion = 0.0;
  double frac_evt = 0.0;
};

// Macro (per-event) averages per group; group key taken from labels[group_by]
// ("" groups everything under "all"). Events with empty gold contribute to
// outcome fractions but not to the span metrics.
std::vector<AggregateRow> aggregate(const std::vector<EventScore>& events,
                                    const std::string& group_by);

// Delimited table rendering of aggregate rows (absent metrics shown as "-").
std::string render_aggregate_table(const std::vector<AggregateRow>& rows);

}  // namespace spantrace
