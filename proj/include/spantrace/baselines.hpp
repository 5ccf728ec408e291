#pragma once

#include <functional>
#include <memory>
#include <string_view>

#include "spantrace/pass1.hpp"

namespace spantrace {

// Per-window abnormality score: higher = more abnormal. The heuristic
// backend is deterministic; an external slot accepts true perplexity when a
// scoring model is available.
using WindowScorer = std::function<double(std::string_view window_text)>;

// Character-class entropy plus rare-letter density plus digit/punctuation
// ratio. Pure function of the text.
double heuristic_abnormality(std::string_view text);

// Chunk-occlusion-only attribution: screening as in the engine, prediction =
// the full extent of the best chunk. No sentence/span/bisection stages.
AttributionResult whole_chunk_baseline(const EventContext& ctx, const Pass1Config& config,
                                       std::shared_ptr<GeneratorBackend> backend);

struct PplCharConfig {
  std::size_t window = 64;   // characters
  std::size_t stride = 16;   // characters
  int top_windows = 3;       // abnormal windows replay-tested on the top chunk
  WindowScorer scorer;       // defaults to heuristic_abnormality when empty
  Pass1Config engine;        // trigger/objective/budgets/decode shared with the engine
};

// Abnormality-ranked sliding-window scan with occlusion refinement: rank
// prompt-used chunks by mean window abnormality, test the top chunk's most
// abnormal windows by masked replay, bisect the best suppressing window.
// Falls back to the whole top chunk (flagged) when no window suppresses.
AttributionResult ppl_character_baseline(const EventContext& ctx, const PplCharConfig& config,
                                         std::shared_ptr<GeneratorBackend> backend);

}  // namespace spantrace
