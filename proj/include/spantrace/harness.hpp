#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spantrace/baselines.hpp"
#include "spantrace/metrics.hpp"
#include "spantrace/pass0.hpp"
#include "spantrace/pass1.hpp"
#include "spantrace/poison.hpp"

namespace spantrace {

struct PipelineConfig {
  Pass0Config pass0;
  Pass1Config pass1;
  std::string method = "engine";  // engine | whole_chunk | ppl_character
  PplCharConfig ppl;
};

struct PipelineResult {
  Pass0Result pass0;
  // One entry per triggered trace, in trace order.
  std::vector<AttributionResult> attributions;
  // One entry per query, in query order.
  std::vector<EventScore> scores;
  std::vector<AggregateRow> rows;  // grouped by family
};

// Builds the event context for one trace out of a benchmark's labels.
EventContext make_event_context(const Benchmark& bench, const Trace& trace);

// Scores one query: prediction = union of the causal spans, falling back to
// the attribution span when no causal span was validated. Pred and gold spans
// are laid into a shared per-event coordinate space (one disjoint stripe per
// involved chunk) so the set metrics work across chunks.
EventScore build_event_score(const Benchmark& bench, const Trace& trace,
                             const AttributionResult* attribution, const std::string& method);

// Full in-memory run: pass0 over all queries, the selected attribution method
// over triggered traces, per-event scores, per-family aggregate rows.
// jobs > 1 parallelizes across events without changing any output.
PipelineResult run_pipeline(const Benchmark& bench, const PipelineConfig& config,
                            std::shared_ptr<GeneratorBackend> backend);

struct KSweepRow {
  int k = 0;
  std::string family;
  int events = 0;
  double frac_unknown = 0.0;
  double frac_confusion = 0.0;
  double frac_evt = 0.0;
  std::optional<double> mean_iou;
  std::optional<double> mean_fpr;
  bool saturated = false;  // K exceeded corpus size
};

// One full pass0+pass1 run per K with U = K; rows per (K, family) plus a
// pooled "all" row per K.
std::vector<KSweepRow> k_sweep(const Benchmark& bench, const std::vector<int>& ks,
                               PipelineConfig config, std::shared_ptr<GeneratorBackend> backend);

std::string k_sweep_csv(const std::vector<KSweepRow>& rows);

}  // namespace spantrace
