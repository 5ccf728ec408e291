#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spantrace/generator.hpp"
#include "spantrace/pass0.hpp"
#include "spantrace/text.hpp"

namespace spantrace {

// A text region in dual coordinates. snippet equals both the chunk-local and
// the prompt-global extraction from the original (unmasked) prompt.
struct Span {
  std::string chunk_id;
  std::size_t local_start = 0;
  std::size_t local_end = 0;
  std::size_t prompt_start = 0;
  std::size_t prompt_end = 0;
  std::string snippet;
};

// Cumulative prompt-global mask regions; canonically merged and disjoint.
class MaskSet {
 public:
  void add(CharInterval region);
  bool overlaps(CharInterval region) const;
  bool contains(CharInterval region) const;  // region fully inside one stored region
  const std::vector<CharInterval>& regions() const { return regions_; }
  std::size_t total_chars() const;
  bool empty() const { return regions_.empty(); }

 private:
  std::vector<CharInterval> regions_;  // sorted, disjoint, non-adjacent
};

// Equal-length space replacement of every masked region.
std::string mask_prompt(std::string_view prompt, const MaskSet& masks);

enum class Stage { kFastPath, kChunk, kSentence, kSpan, kBisect };
std::string stage_name(Stage s);

struct StageRecord {
  Stage stage = Stage::kChunk;
  std::optional<Span> candidate_span;  // absent for whole-chunk candidates
  std::string candidate_chunk_id;
  EventSignals pre_signals;
  EventSignals post_signals;
  double influence = 0.0;
  bool success = false;  // post-mask trigger predicate is false
  int calls_used = 0;
};

struct AttributionResult {
  std::string trace_id;
  std::optional<Span> attribution_span;  // deterministic, answer-anchored
  std::vector<Span> causal_spans;        // one per resolving/masking round
  MaskSet final_mask;
  std::string sanitized_completion;
  bool resolved = false;
  std::string mode;  // "mask_span" | "mask_multi" | "" when unresolved
  std::string unresolved_reason;
  std::vector<StageRecord> stages;
  int total_calls = 0;           // logical replay count (cache hits included)
  std::uint64_t backend_calls = 0;
  int rounds_used = 0;
};

enum class Objective { kEvent, kOracle };
std::optional<Objective> parse_objective(std::string_view name);
std::string objective_name(Objective o);

struct Budgets {
  int max_chunks = 5;          // B_c
  int max_sentences = 5;       // B_s
  int retained_regions = 2;    // B_t
  int max_span_candidates = 12;  // B_p
  int bisect_steps = 6;        // T_b (cap on bisection replays)
  std::size_t min_span_len = 4;  // eta
  int rounds = 3;
};

struct Pass1Config {
  TriggerPredicate trigger = TriggerPredicate::kPar;
  Objective objective = Objective::kEvent;
  Budgets budgets;
  bool fast_path = true;
  bool early_stop = true;       // stop chunk screening on first success
  std::size_t window_width = 40;  // sliding-window proposal width
  std::size_t max_sentence_candidates = 50;
  std::size_t min_sentence_len = 8;
  bool cache = true;
  DecodeParams decode;
};

// Labels and event index needed to re-classify replayed completions.
struct EventContext {
  const Trace* trace = nullptr;
  const InjectedAnswerIndex* injected = nullptr;
  std::optional<std::string> gold;
  std::optional<std::string> target;
  const std::vector<std::string>* abstain_patterns = nullptr;  // defaults when null
};

// Stepped counterfactual influence: 1.0 when the trigger flipped false,
// 0.5 when it persists but the adopted answer changed, else 0.0. The oracle
// objective layers a +0.25 gold-recovery bonus as a tie-break.
double influence_score(const EventSignals& pre, const EventSignals& post, Objective objective,
                       TriggerPredicate trigger, std::string_view pre_answer,
                       std::string_view post_answer, const std::optional<std::string>& gold,
                       const std::optional<std::string>& target);

// Answer-anchored span extraction inside one block, applied to the block's
// current (possibly partially masked) text. Priority: (i) exact
// case-insensitive match of bad_answer, (ii) leading capitalized phrase of
// 1-6 words, (iii) first non-space token. All-whitespace block -> nullopt.
std::optional<Span> extract_attribution_span(const PromptBlock& block,
                                             std::string_view current_block_text,
                                             std::string_view bad_answer,
                                             std::string_view original_prompt);

// Sentence candidates of a chunk, filtered (>= min_len chars, no overlap with
// existing masks) and sorted by: contains answer (desc), length (desc),
// position (asc). Intervals are chunk-local. At most max_candidates returned.
std::vector<CharInterval> sentence_candidates(std::string_view chunk_text,
                                              std::string_view current_answer,
                                              const MaskSet& masks, const PromptBlock& block,
                                              std::size_t max_candidates = 50,
                                              std::size_t min_len = 8);

// Fine-grained span proposals (chunk-local intervals), in priority order:
// answer matches, clause splits of retained regions, fixed-width windows
// centered on answer matches. Mask-overlapping and duplicate candidates are
// dropped; candidates are restricted to retained regions whenever that leaves
// at least one; capped at max_candidates.
std::vector<CharInterval> propose_span_candidates(std::string_view chunk_text,
                                                  std::string_view current_answer,
                                                  const std::vector<CharInterval>& retained_regions,
                                                  const MaskSet& masks, const PromptBlock& block,
                                                  std::size_t max_candidates = 12,
                                                  std::size_t window_width = 40);

// One masked generation plus outcome re-classification against the masked
// view of the evidence blocks. Shared by the engine and the baselines.
struct ReplayResult {
  EventSignals signals;
  std::string completion;
};
ReplayResult replay_masked(const EventContext& ctx, const Pass1Config& config,
                           CachedGenerator& generator, const MaskSet& masks);

// Tests one extra masked interval on top of the accumulated masks; returns
// true when the trigger is suppressed. Used by bisection.
using SuppressProbe = std::function<bool(CharInterval prompt_interval)>;

// Midpoint bisection of a suppressing seed span. Each step splits the current
// span and probes both halves (subject to the replay cap): exactly one
// suppressing half -> recurse into it; both -> shorter then earlier; neither
// -> stop. Never returns a span shorter than min_len; total probes <= max_replays.
Span bisect_minimal_span(const Span& seed, std::string_view original_prompt,
                         const SuppressProbe& probe, int max_replays, std::size_t min_len,
                         int* replays_used = nullptr);

// Full event-conditioned traceback: up to budgets.rounds rounds of
// fast path -> chunk screening -> sentence refinement -> span proposals ->
// bisection -> sanitize-and-replay, with a per-event replay cache.
AttributionResult run_pass1(const EventContext& ctx, const Pass1Config& config,
                            std::shared_ptr<GeneratorBackend> backend);

// Attribution report persistence (line-delimited, config header first).
std::string attribution_to_json_line(const AttributionResult& r);
AttributionResult attribution_from_json_line(const std::string& line);
void save_attributions(const std::string& path, const std::vector<AttributionResult>& results,
                       const std::string& config_echo_json);
struct AttributionFile {
  std::string config_echo;
  std::vector<AttributionResult> results;
};
AttributionFile load_attributions(const std::string& path);

}  // namespace spantrace
