#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spantrace/corpus.hpp"
#include "spantrace/generator.hpp"
#include "spantrace/pass0.hpp"

namespace spantrace {

enum class Family { kAbvStyle, kCorpusStyle, kGasliteStyle, kPragBlackStyle, kPragWhiteStyle };
std::string family_name(Family f);
std::optional<Family> parse_family(std::string_view name);
extern const std::vector<Family> kAllFamilies;

enum class Placement { kPrepend, kAppend, kMidSentence };
std::string placement_name(Placement p);

struct PoisonRecipe {
  Family family = Family::kPragBlackStyle;
  std::string target_query_id;
  std::string incorrect_answer;
  std::string payload_template;  // "{answer}" substituted
  Placement placement = Placement::kAppend;
  std::string host_chunk_id;  // empty -> standalone poisoned chunk
  std::string swap_target;    // mid_sentence: substring replaced by the payload
};

struct GroundTruthSpan {
  std::string query_id;
  std::string chunk_id;
  std::size_t start = 0;  // chunk-local character offsets, half-open
  std::size_t end = 0;
  std::string answer;
  std::string family;
};

inline constexpr const char* kBenchmarkFormatVersion = "1";

// Self-contained poisoned benchmark bundle.
struct Benchmark {
  std::string format_version = kBenchmarkFormatVersion;
  Corpus corpus;
  std::vector<Query> queries;
  std::vector<GroundTruthSpan> ground_truth;
  InjectedAnswerIndex injected;
  std::vector<OracleRule> oracle_rules;
  std::uint64_t seed = 0;
  std::string description;
};

struct InjectionResult {
  Corpus corpus;
  std::vector<GroundTruthSpan> ground_truth;
  InjectedAnswerIndex injected;
  bool standalone_chunk = false;
};

// Applies one recipe to a corpus. mid_sentence replaces recipe.swap_target in
// the host chunk with the payload; prepend/append splice the payload (plus a
// joining space) onto the host; an empty host_chunk_id creates a standalone
// poisoned chunk. The recorded spans cover exactly the injected characters.
InjectionResult inject_poison(const Corpus& corpus, const PoisonRecipe& recipe,
                              std::uint64_t seed);

// Deterministic fictional-name generator. Produced names are pairwise
// substring-free (case-insensitive), so answer matching cannot cross events.
class NamePool {
 public:
  explicit NamePool(std::uint64_t seed);
  std::string next();

 private:
  std::uint64_t state_;
  std::vector<std::string> issued_;
};

// Seeded benchmark: n_topics base queries, each instantiated once per family
// with its own fictional entities, benign evidence, single-span poison, exact
// ground truth, and scripted oracle rules. 20 topics -> 100 events.
Benchmark build_benchmark(int n_topics, std::uint64_t seed);

// One-query fixture whose poisoned chunk sits at lexical retrieval rank 6,
// used for K-sweep sanity checks.
Benchmark build_rank6_fixture(std::uint64_t seed);

// The three-chunk capital-of-Australia fixture with its scripted oracle.
Benchmark build_worked_example();

// Bundle persistence under a directory: corpus.jsonl, queries.jsonl,
// ground_truth.jsonl, oracle_rules.jsonl, manifest.json.
void save_benchmark(const std::string& dir, const Benchmark& bench);
Benchmark load_benchmark(const std::string& dir);

}  // namespace spantrace
