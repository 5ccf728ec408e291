#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "spantrace/poison.hpp"
#include "spantrace/text.hpp"

using namespace spantrace;

TEST_CASE("family and placement names round-trip") {
  for (Family f : kAllFamilies) {
    CHECK(parse_family(family_name(f)) == f);
  }
  CHECK_FALSE(parse_family("nope").has_value());
  CHECK(placement_name(Placement::kMidSentence) == "mid_sentence");
}

TEST_CASE("name pool is deterministic and pairwise substring-free") {
  NamePool a(99);
  NamePool b(99);
  std::vector<std::string> names;
  for (int i = 0; i < 40; ++i) {
    const std::string n = a.next();
    CHECK(n == b.next());
    names.push_back(n);
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (std::size_t j = 0; j < names.size(); ++j) {
      if (i == j) continue;
      std::string lo_i = names[i], lo_j = names[j];
      std::transform(lo_i.begin(), lo_i.end(), lo_i.begin(), ::tolower);
      std::transform(lo_j.begin(), lo_j.end(), lo_j.begin(), ::tolower);
      CHECK(lo_i.find(lo_j) == std::string::npos);
    }
  }
}

static Corpus host_corpus() {
  return Corpus::from_chunks({
      {"d", "h1", "The capital of Freedonia is Marsopolis, say the records.", 0},
      {"d", "h2", "Unrelated trade notes about salt and timber.", 0},
  });
}

TEST_CASE("mid-sentence swap records exactly the injected characters") {
  PoisonRecipe r;
  r.family = Family::kPragBlackStyle;
  r.target_query_id = "q1";
  r.incorrect_answer = "Badville";
  r.payload_template = "{answer}";
  r.placement = Placement::kMidSentence;
  r.host_chunk_id = "h1";
  r.swap_target = "Marsopolis";
  const auto out = inject_poison(host_corpus(), r, 0);
  REQUIRE(out.ground_truth.size() == 1);
  const auto& gt = out.ground_truth[0];
  CHECK(gt.chunk_id == "h1");
  const Chunk* chunk = out.corpus.find_chunk("h1");
  REQUIRE(chunk != nullptr);
  CHECK(chunk->text == "The capital of Freedonia is Badville, say the records.");
  // The span extracts the injected answer verbatim.
  CHECK(char_substr(chunk->text, gt.start, gt.end) == "Badville");
  // Minimal perturbation: only the swap differs from the original.
  CHECK(chunk->text.find("say the records") != std::string::npos);
  CHECK(out.injected.at("h1") == std::vector<std::string>{"Badville"});
  CHECK_FALSE(out.standalone_chunk);
}

TEST_CASE("append and prepend placements cover the splice exactly") {
  PoisonRecipe r;
  r.target_query_id = "q1";
  r.incorrect_answer = "Badville";
  r.payload_template = "In truth the capital is {answer}.";
  r.placement = Placement::kAppend;
  r.host_chunk_id = "h2";
  const auto appended = inject_poison(host_corpus(), r, 0);
  const auto& gt = appended.ground_truth[0];
  const Chunk* chunk = appended.corpus.find_chunk("h2");
  CHECK(char_substr(chunk->text, gt.start, gt.end) == " In truth the capital is Badville.");
  CHECK(gt.end == char_length(chunk->text));

  r.placement = Placement::kPrepend;
  const auto prepended = inject_poison(host_corpus(), r, 0);
  const auto& gt2 = prepended.ground_truth[0];
  CHECK(gt2.start == 0);
  const Chunk* chunk2 = prepended.corpus.find_chunk("h2");
  CHECK(char_substr(chunk2->text, gt2.start, gt2.end) == "In truth the capital is Badville. ");
}

TEST_CASE("standalone chunk when no host is given; fallback when over budget") {
  PoisonRecipe r;
  r.target_query_id = "q1";
  r.incorrect_answer = "Badville";
  r.payload_template = "The capital is {answer}.";
  r.placement = Placement::kAppend;
  const auto standalone = inject_poison(host_corpus(), r, 0);
  CHECK(standalone.standalone_chunk);
  CHECK(standalone.corpus.find_chunk("q1_cp") != nullptr);
  CHECK(standalone.ground_truth[0].chunk_id == "q1_cp");

  // A payload that would blow the 400-char host budget becomes standalone.
  r.host_chunk_id = "h2";
  r.payload_template = std::string(395, 'z') + " {answer}";
  const auto fallback = inject_poison(host_corpus(), r, 0);
  CHECK(fallback.standalone_chunk);

  r.payload_template = "";
  CHECK_THROWS_AS(inject_poison(host_corpus(), r, 0), std::invalid_argument);
  r.payload_template = "{answer}";
  r.host_chunk_id = "missing";
  CHECK_THROWS_AS(inject_poison(host_corpus(), r, 0), std::invalid_argument);
}

TEST_CASE("benchmark construction is deterministic and exactly labeled") {
  const Benchmark a = build_benchmark(3, 7);
  const Benchmark b = build_benchmark(3, 7);
  REQUIRE(a.queries.size() == 15);  // 3 topics x 5 families
  REQUIRE(a.ground_truth.size() == 15);
  REQUIRE(a.corpus.size() == b.corpus.size());
  for (std::size_t i = 0; i < a.corpus.size(); ++i) {
    CHECK(a.corpus.chunks()[i].chunk_id == b.corpus.chunks()[i].chunk_id);
    CHECK(a.corpus.chunks()[i].text == b.corpus.chunks()[i].text);
  }
  // Ground truth extracts verbatim and contains the incorrect answer.
  for (const auto& gt : a.ground_truth) {
    const Chunk* chunk = a.corpus.find_chunk(gt.chunk_id);
    REQUIRE(chunk != nullptr);
    const std::string span_text = char_substr(chunk->text, gt.start, gt.end);
    CHECK(span_text.find(gt.answer) != std::string::npos);
    CHECK(gt.end > gt.start);
    CHECK(gt.end <= char_length(chunk->text));
  }
  // Exactly one poison span per query, and every family appears.
  std::set<std::string> families;
  std::set<std::string> gt_queries;
  for (const auto& gt : a.ground_truth) {
    families.insert(gt.family);
    CHECK(gt_queries.insert(gt.query_id).second);
  }
  CHECK(families.size() == 5);
  // Oracle rule priorities are unique.
  std::set<int> priorities;
  for (const auto& r : a.oracle_rules) CHECK(priorities.insert(r.priority).second);
}

TEST_CASE("poisoned chunks are retrievable in their event's top-5") {
  const Benchmark bench = build_benchmark(4, 21);
  for (const auto& q : bench.queries) {
    const auto hits = retrieve_top_k(bench.corpus, q.text, 5);
    REQUIRE(hits.size() == 5);
    std::set<std::string> ids;
    for (const auto& h : hits) ids.insert(h.chunk.chunk_id);
    // The top-5 stays inside the event's own chunk family.
    for (const auto& id : ids) CHECK(id.rfind(q.query_id, 0) == 0);
    // The event's poisoned chunk is among them.
    bool found = false;
    for (const auto& gt : bench.ground_truth) {
      if (gt.query_id == q.query_id && ids.count(gt.chunk_id)) found = true;
    }
    CHECK(found);
  }
}

TEST_CASE("rank-6 fixture puts the poison exactly at retrieval rank 6") {
  const Benchmark bench = build_rank6_fixture(5);
  REQUIRE(bench.queries.size() == 1);
  REQUIRE(bench.ground_truth.size() == 1);
  const auto hits = retrieve_top_k(bench.corpus, bench.queries[0].text, 10);
  REQUIRE(hits.size() == 10);
  CHECK(hits[5].chunk.chunk_id == bench.ground_truth[0].chunk_id);  // rank 6
  for (int i = 0; i < 5; ++i) {
    CHECK(hits[i].chunk.chunk_id != bench.ground_truth[0].chunk_id);
  }
}

TEST_CASE("worked example fixture matches its frozen offsets") {
  const Benchmark bench = build_worked_example();
  const Chunk* c3 = bench.corpus.find_chunk("c3");
  REQUIRE(c3 != nullptr);
  const auto& gt = bench.ground_truth[0];
  CHECK(char_substr(c3->text, gt.start, gt.end) == "Australia's capital is Sydney.");
  CHECK(gt.start == 46);
  CHECK(gt.end == 76);
}

TEST_CASE("benchmark bundles round-trip on disk and reject bad versions") {
  const Benchmark bench = build_benchmark(2, 3);
  const auto dir = std::filesystem::temp_directory_path() / "spantrace_bench_test";
  std::filesystem::remove_all(dir);
  save_benchmark(dir.string(), bench);
  const Benchmark loaded = load_benchmark(dir.string());
  CHECK(loaded.seed == bench.seed);
  CHECK(loaded.corpus.size() == bench.corpus.size());
  CHECK(loaded.queries.size() == bench.queries.size());
  CHECK(loaded.ground_truth.size() == bench.ground_truth.size());
  CHECK(loaded.oracle_rules.size() == bench.oracle_rules.size());
  CHECK(loaded.injected == bench.injected);
  for (std::size_t i = 0; i < bench.queries.size(); ++i) {
    CHECK(loaded.queries[i].query_id == bench.queries[i].query_id);
    CHECK(loaded.queries[i].gold == bench.queries[i].gold);
  }

  // Tampering with the version makes loading fail with a diagnostic.
  Benchmark bad = bench;
  bad.format_version = "9";
  const auto dir2 = std::filesystem::temp_directory_path() / "spantrace_bench_badver";
  std::filesystem::remove_all(dir2);
  save_benchmark(dir2.string(), bad);
  CHECK_THROWS_AS(load_benchmark(dir2.string()), std::invalid_argument);
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}
