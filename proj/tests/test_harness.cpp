#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>

#include "spantrace/harness.hpp"

using namespace spantrace;

TEST_CASE("run_pipeline produces one score per query and per-family rows") {
  const Benchmark bench = build_benchmark(2, 17);
  auto backend = std::make_shared<OracleBackend>(bench.oracle_rules);
  PipelineConfig cfg;
  const PipelineResult result = run_pipeline(bench, cfg, backend);

  CHECK(result.pass0.traces.size() == bench.queries.size());
  CHECK(result.scores.size() == bench.queries.size());
  CHECK(result.attributions.size() == result.pass0.triggered.size());
  REQUIRE(!result.rows.empty());
  for (const auto& row : result.rows) {
    CHECK(row.frac_unknown + row.frac_confusion + row.frac_evt == doctest::Approx(1.0));
  }
  // Every attribution belongs to a triggered trace.
  for (std::size_t i = 0; i < result.attributions.size(); ++i) {
    CHECK(result.attributions[i].trace_id == result.pass0.triggered[i]);
  }
}

TEST_CASE("pipeline output is identical across jobs counts") {
  const Benchmark bench = build_benchmark(2, 29);
  auto backend = std::make_shared<OracleBackend>(bench.oracle_rules);
  PipelineConfig cfg1;
  cfg1.pass0.jobs = 1;
  PipelineConfig cfg4 = cfg1;
  cfg4.pass0.jobs = 4;
  const PipelineResult r1 = run_pipeline(bench, cfg1, backend);
  const PipelineResult r4 = run_pipeline(bench, cfg4, backend);
  REQUIRE(r1.attributions.size() == r4.attributions.size());
  for (std::size_t i = 0; i < r1.attributions.size(); ++i) {
    CHECK(attribution_to_json_line(r1.attributions[i]) ==
          attribution_to_json_line(r4.attributions[i]));
  }
  for (std::size_t i = 0; i < r1.pass0.traces.size(); ++i) {
    CHECK(trace_to_json_line(r1.pass0.traces[i]) == trace_to_json_line(r4.pass0.traces[i]));
  }
}

TEST_CASE("event scores lay pred and gold into a shared stripe space") {
  const Benchmark bench = build_worked_example();
  auto backend = std::make_shared<OracleBackend>(bench.oracle_rules);
  PipelineConfig cfg;
  cfg.pass0.k = 3;
  cfg.pass0.u = 3;
  const PipelineResult result = run_pipeline(bench, cfg, backend);
  REQUIRE(result.scores.size() == 1);
  const EventScore& e = result.scores[0];
  CHECK(e.labels.at("method") == "engine");
  CHECK(e.labels.at("family") == "prag_black_style");
  CHECK(e.outcome == "EVT");
  CHECK(e.resolved);
  // Pred and gold share the same single-chunk stripe, so the overlap is real.
  CHECK(e.iou > 0.0);
  CHECK(e.fpr == 0.0);  // the causal span sits inside the gold payload
  CHECK(e.recall <= 1.0);
}

TEST_CASE("baseline methods flow through the same pipeline") {
  const Benchmark bench = build_worked_example();
  auto backend = std::make_shared<OracleBackend>(bench.oracle_rules);
  PipelineConfig cfg;
  cfg.pass0.k = 3;
  cfg.pass0.u = 3;
  cfg.method = "whole_chunk";
  const PipelineResult result = run_pipeline(bench, cfg, backend);
  REQUIRE(result.scores.size() == 1);
  CHECK(result.scores[0].labels.at("method") == "whole_chunk");
  CHECK(result.scores[0].fpr == doctest::Approx(46.0 / 76.0).epsilon(1e-12));
}

TEST_CASE("k-sweep on the rank-6 fixture crosses the poison rank") {
  const Benchmark bench = build_rank6_fixture(5);
  auto backend = std::make_shared<OracleBackend>(bench.oracle_rules);
  PipelineConfig cfg;
  const auto rows = k_sweep(bench, {1, 3, 5, 10}, cfg, backend);
  REQUIRE(!rows.empty());
  double evt_at_5 = -1.0, evt_at_10 = -1.0;
  bool saw_saturated = false;
  for (const auto& row : rows) {
    if (row.family != "all") continue;
    CHECK(row.frac_unknown + row.frac_confusion + row.frac_evt == doctest::Approx(1.0));
    if (row.k == 5) evt_at_5 = row.frac_evt;
    if (row.k == 10) evt_at_10 = row.frac_evt;
    if (row.saturated) saw_saturated = true;
  }
  CHECK(evt_at_5 == 0.0);   // poison sits at rank 6, out of reach
  CHECK(evt_at_10 > 0.0);   // deep retrieval pulls it in
  CHECK_FALSE(saw_saturated);  // the fixture has exactly 10 chunks

  const std::string csv = k_sweep_csv(rows);
  CHECK(csv.find("k,family,events") == 0);
  CHECK(csv.find("\nall,") == std::string::npos);  // k leads each row
}
