#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "spantrace/corpus.hpp"
#include "spantrace/generator.hpp"

namespace spantrace {

inline constexpr const char* kTraceFormatVersion = "1";

// One evidence block inside a rendered prompt. The prompt substring
// [prompt_start, prompt_end) equals chunk_text_snapshot exactly.
struct PromptBlock {
  std::string chunk_id;
  int retrieval_rank = 0;
  std::size_t prompt_start = 0;
  std::size_t prompt_end = 0;
  std::string chunk_text_snapshot;
};

struct EventSignals {
  bool par = false;        // completion adopts an injected incorrect answer
  bool t_asr = false;      // completion matches the attacker target answer
  bool confusion = false;  // not abstain, not adoption, not gold
  bool unknown = false;    // abstain
  bool adopted_any_block = false;  // literal Alg-1 reading: overlaps any block
  bool generation_failed = false;
  std::optional<std::string> matched_answer;
  std::optional<std::string> matched_chunk_id;     // primary (lowest rank)
  std::vector<std::string> matched_chunk_ids;      // all matches
};

enum class Outcome { kUnknown, kConfusion, kEvt };

// Total three-way bucket: Unknown, then EVT (par or t_asr), else Confusion.
Outcome outcome_bucket(const EventSignals& s);
std::string outcome_name(Outcome o);

enum class TriggerPredicate { kPar, kTAsr, kConfusion, kAny, kAlways, kOverlap };

bool is_triggered(const EventSignals& s, TriggerPredicate p);
std::optional<TriggerPredicate> parse_trigger(std::string_view name);
std::string trigger_name(TriggerPredicate p);

struct BackendConfigSnapshot {
  std::string backend;  // oracle | remote
  std::string model;
  double temperature = 0.0;
  std::size_t max_output_chars = 400;
};

struct TraceHit {
  std::string chunk_id;
  double score = 0.0;
  int rank = 0;
};

struct Trace {
  std::string format_version = kTraceFormatVersion;
  std::string trace_id;
  std::string query_id;
  std::string query;
  std::vector<TraceHit> hits;                     // full top-K
  std::optional<std::size_t> prompt_used_count;   // U; consumers fall back to 10
  std::vector<PromptBlock> prompt_used;           // H_U
  std::string rendered_prompt;
  std::string completion;
  EventSignals signals;
  BackendConfigSnapshot backend_config;
  std::uint64_t seed = 0;
};

// Effective U for downstream consumers (fallback 10 when unrecorded).
std::size_t effective_prompt_used(const Trace& t);

struct RenderedPrompt {
  std::string prompt;
  std::vector<PromptBlock> blocks;
};

struct BlockInput {
  std::string chunk_id;
  int retrieval_rank = 0;
  std::string text;
};

// Renders the generation prompt and records prompt-global character offsets
// for each inserted evidence block. template_id selects the prompt layout;
// only "default" is defined.
RenderedPrompt render_prompt(std::string_view query, const std::vector<BlockInput>& blocks,
                             std::string_view template_id = "default");

// chunk_id -> injected incorrect answer strings (evaluation-side event index).
using InjectedAnswerIndex = std::map<std::string, std::vector<std::string>>;

extern const std::vector<std::string> kDefaultAbstainPatterns;

struct ClassifyInputs {
  std::string completion;
  const std::vector<PromptBlock>* prompt_used = nullptr;
  const InjectedAnswerIndex* injected = nullptr;
  std::optional<std::string> gold;
  std::optional<std::string> target;  // attacker target answer, when known
  const std::vector<std::string>* abstain_patterns = nullptr;  // defaults when null
};

EventSignals classify_outcome(const ClassifyInputs& in);

// Case/whitespace-robust alignment in either direction.
bool answers_align(std::string_view completion, std::string_view candidate);

struct Query {
  std::string query_id;
  std::string text;
  std::optional<std::string> gold;
  std::optional<std::string> target;
};

struct Pass0Config {
  int k = 5;
  int u = 5;
  TriggerPredicate trigger = TriggerPredicate::kPar;
  std::string template_id = "default";
  std::uint64_t seed = 0;
  int jobs = 1;
  DecodeParams decode;
};

struct Pass0Result {
  std::vector<Trace> traces;            // one per query, canonical query order
  std::vector<std::string> triggered;   // trace_ids satisfying the predicate
  int generation_failures = 0;
};

Pass0Result run_pass0(const Corpus& corpus, const std::vector<Query>& queries,
                      const Pass0Config& config, CachedGenerator& generator,
                      const InjectedAnswerIndex& injected,
                      const BackendConfigSnapshot& backend_config);

// Trace persistence: first line is a config record, then one record per
// trace. Bit-stable for fixed inputs.
void save_traces(const std::string& path, const std::vector<Trace>& traces,
                 const std::string& config_echo_json);
struct TraceFile {
  std::string config_echo;
  std::vector<Trace> traces;
  std::string format_version;
};
TraceFile load_traces(const std::string& path);

std::string trace_to_json_line(const Trace& t);
Trace trace_from_json_line(const std::string& line);

// Shared serialization of EventSignals, reused by downstream reports.
nlohmann::json signals_to_json(const EventSignals& s);
EventSignals signals_from_json(const nlohmann::json& j);

}  // namespace spantrace
