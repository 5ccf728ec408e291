#include "spantrace/harness.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace spantrace {

EventContext make_event_context(const Benchmark& bench, const Trace& trace) {
  EventContext ctx;
  ctx.trace = &trace;
  ctx.injected = &bench.injected;
  for (const auto& q : bench.queries) {
    if (q.query_id == trace.query_id) {
      ctx.gold = q.gold;
      ctx.target = q.target;
      break;
    }
  }
  return ctx;
}

EventScore build_event_score(const Benchmark& bench, const Trace& trace,
                             const AttributionResult* attribution, const std::string& method) {
  EventScore e;
  e.query_id = trace.query_id;
  e.trace_id = trace.trace_id;
  e.outcome = outcome_name(outcome_bucket(trace.signals));
  e.labels["method"] = method;
  for (const auto& g : bench.ground_truth) {
    if (g.query_id == trace.query_id) {
      e.labels["family"] = g.family;
      break;
    }
  }

  // Shared per-event coordinate space: one disjoint stripe per chunk.
  std::vector<Span> pred_spans;
  if (attribution) {
    e.resolved = attribution->resolved;
    e.total_calls = attribution->total_calls;
    if (!attribution->causal_spans.empty()) {
      pred_spans = attribution->causal_spans;
    } else if (attribution->attribution_span) {
      pred_spans.push_back(*attribution->attribution_span);
    }
  }
  std::set<std::string> chunk_ids;
  for (const auto& s : pred_spans) chunk_ids.insert(s.chunk_id);
  for (const auto& g : bench.ground_truth) {
    if (g.query_id == trace.query_id) chunk_ids.insert(g.chunk_id);
  }
  std::map<std::string, std::size_t> base;
  std::size_t next = 0;
  constexpr std::size_t kStripe = 1'000'000;  // far larger than any chunk
  for (const auto& id : chunk_ids) {
    base[id] = next;
    next += kStripe;
  }
  for (const auto& s : pred_spans) {
    e.pred.add({base[s.chunk_id] + s.local_start, base[s.chunk_id] + s.local_end});
  }
  for (const auto& g : bench.ground_truth) {
    if (g.query_id != trace.query_id) continue;
    e.gold.add({base[g.chunk_id] + g.start, base[g.chunk_id] + g.end});
  }
  score_event(e);
  return e;
}

namespace {

// Deterministic strided fan-out: output slots are fixed per index, so job
// count never changes any result.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < n;
             i += static_cast<std::size_t>(workers)) {
          fn(i);
        }
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
}

}  // namespace

PipelineResult run_pipeline(const Benchmark& bench, const PipelineConfig& config,
                            std::shared_ptr<GeneratorBackend> backend) {
  PipelineResult out;
  BackendConfigSnapshot snapshot;
  snapshot.backend = backend->identity() == "oracle" ? "oracle" : "remote";
  snapshot.model = backend->identity();
  snapshot.temperature = config.pass0.decode.temperature;
  snapshot.max_output_chars = config.pass0.decode.max_output_chars;

  CachedGenerator pass0_gen(backend, true);
  out.pass0 =
      run_pass0(bench.corpus, bench.queries, config.pass0, pass0_gen, bench.injected, snapshot);

  // Attribution over triggered traces; each event owns its replay cache, so
  // call counts are independent of scheduling.
  std::vector<const Trace*> triggered;
  for (const auto& id : out.pass0.triggered) {
    for (const auto& t : out.pass0.traces) {
      if (t.trace_id == id) {
        triggered.push_back(&t);
        break;
      }
    }
  }
  out.attributions.resize(triggered.size());
  parallel_for(triggered.size(), config.pass0.jobs, [&](std::size_t i) {
    const Trace& trace = *triggered[i];
    const EventContext ctx = make_event_context(bench, trace);
    if (config.method == "whole_chunk") {
      out.attributions[i] = whole_chunk_baseline(ctx, config.pass1, backend);
    } else if (config.method == "ppl_character") {
      PplCharConfig ppl = config.ppl;
      ppl.engine = config.pass1;
      out.attributions[i] = ppl_character_baseline(ctx, ppl, backend);
    } else {
      out.attributions[i] = run_pass1(ctx, config.pass1, backend);
    }
  });

  std::map<std::string, const AttributionResult*> by_trace;
  for (const auto& a : out.attributions) by_trace[a.trace_id] = &a;
  for (const auto& t : out.pass0.traces) {
    auto it = by_trace.find(t.trace_id);
    out.scores.push_back(
        build_event_score(bench, t, it == by_trace.end() ? nullptr : it->second, config.method));
  }
  out.rows = aggregate(out.scores, "family");
  return out;
}

std::vector<KSweepRow> k_sweep(const Benchmark& bench, const std::vector<int>& ks,
                               PipelineConfig config, std::shared_ptr<GeneratorBackend> backend) {
  std::vector<KSweepRow> rows;
  for (int k : ks) {
    const bool saturated = static_cast<std::size_t>(k) > bench.corpus.size();
    config.pass0.k = std::min<std::size_t>(static_cast<std::size_t>(k), bench.corpus.size());
    config.pass0.u = config.pass0.k;  // U = K
    const PipelineResult run = run_pipeline(bench, config, backend);
    // Pooled row plus one row per family.
    auto emit = [&](const std::string& family, const std::vector<const EventScore*>& events) {
      if (events.empty()) return;
      KSweepRow row;
      row.k = k;
      row.family = family;
      row.events = static_cast<int>(events.size());
      row.saturated = saturated;
      int unknown = 0, confusion = 0, evt = 0, scored = 0;
      double iou = 0.0, fpr = 0.0;
      for (const EventScore* e : events) {
        if (e->outcome == "Unknown") ++unknown;
        else if (e->outcome == "Confusion") ++confusion;
        else if (e->outcome == "EVT") ++evt;
        if (!e->gold.empty()) {
          ++scored;
          iou += e->iou;
          fpr += e->fpr;
        }
      }
      row.frac_unknown = static_cast<double>(unknown) / row.events;
      row.frac_confusion = static_cast<double>(confusion) / row.events;
      row.frac_evt = static_cast<double>(evt) / row.events;
      if (scored > 0) {
        row.mean_iou = iou / scored;
        row.mean_fpr = fpr / scored;
      }
      rows.push_back(row);
    };
    std::vector<const EventScore*> all;
    std::map<std::string, std::vector<const EventScore*>> by_family;
    for (const auto& e : run.scores) {
      all.push_back(&e);
      auto it = e.labels.find("family");
      by_family[it != e.labels.end() ? it->second : "unlabeled"].push_back(&e);
    }
    emit("all", all);
    for (const auto& [family, events] : by_family) emit(family, events);
  }
  return rows;
}

std::string k_sweep_csv(const std::vector<KSweepRow>& rows) {
  std::ostringstream os;
  os << "k,family,events,frac_unknown,frac_confusion,frac_evt,mean_iou,mean_fpr,saturated\n";
  for (const auto& r : rows) {
    os << r.k << ',' << r.family << ',' << r.events << ',' << r.frac_unknown << ','
       << r.frac_confusion << ',' << r.frac_evt << ',';
    if (r.mean_iou) os << *r.mean_iou;
    os << ',';
    if (r.mean_fpr) os << *r.mean_fpr;
    os << ',' << (r.saturated ? 1 : 0) << '\n';
  }
  return os.str();
}

}  // namespace spantrace
