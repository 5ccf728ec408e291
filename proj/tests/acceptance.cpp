// Acceptance gate: one pass/fail line per criterion, exit 0 only when all
// criteria hold.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spantrace/harness.hpp"
#include "spantrace/text.hpp"

using namespace spantrace;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int criterion, const std::string& name, bool ok, const std::string& detail = "") {
  std::printf("criterion %d (%s): %s%s%s\n", criterion, name.c_str(), ok ? "PASS" : "FAIL",
              detail.empty() ? "" : " — ", detail.c_str());
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Brute-force per-position metric reference.
struct Ref {
  double iou, precision, recall, f1, fpr;
};

Ref brute_force(const CharSet& pred, const CharSet& gold) {
  std::set<std::size_t> p, g;
  for (const auto& [a, b] : pred.intervals())
    for (std::size_t i = a; i < b; ++i) p.insert(i);
  for (const auto& [a, b] : gold.intervals())
    for (std::size_t i = a; i < b; ++i) g.insert(i);
  std::size_t inter = 0;
  for (auto i : p) inter += g.count(i);
  const std::size_t uni = p.size() + g.size() - inter;
  Ref r{};
  r.iou = (p.empty() || uni == 0) ? 0.0 : double(inter) / double(uni);
  r.precision = p.empty() ? 0.0 : double(inter) / double(p.size());
  r.recall = g.empty() ? 0.0 : double(inter) / double(g.size());
  r.f1 = (r.precision + r.recall) == 0.0 ? 0.0
                                         : 2 * r.precision * r.recall / (r.precision + r.recall);
  r.fpr = p.empty() ? 0.0 : double(p.size() - inter) / double(p.size());
  return r;
}

void criterion1() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  bool ok = true;
  std::string detail;
  for (int iter = 0; iter < 1000 && ok; ++iter) {
    auto random_set = [&]() {
      CharSet s;
      const int n = static_cast<int>(rng() % 6);
      for (int i = 0; i < n; ++i) {
        const std::size_t a = rng() % 500;
        s.add({a, a + rng() % 60});
      }
      return s;
    };
    const CharSet pred = random_set();
    const CharSet gold = random_set();
    const Ref ref = brute_force(pred, gold);
    const auto prf = char_f1(pred, gold);
    ok = std::fabs(char_iou(pred, gold) - ref.iou) <= 1e-12 &&
         std::fabs(prf.precision - ref.precision) <= 1e-12 &&
         std::fabs(prf.recall - ref.recall) <= 1e-12 &&
         std::fabs(prf.f1 - ref.f1) <= 1e-12 &&
         std::fabs(char_fpr(pred, gold) - ref.fpr) <= 1e-12;
    if (!ok) detail = "mismatch at iteration " + std::to_string(iter);
  }
  const double elapsed = seconds_since(start);
  if (ok && elapsed >= 5.0) {
    ok = false;
    detail = "too slow: " + std::to_string(elapsed) + "s";
  }
  report(1, "metric oracle equivalence", ok, detail);
}

void criterion2() {
  const auto start = Clock::now();
  const Benchmark bench = build_worked_example();
  auto backend = std::make_shared<OracleBackend>(bench.oracle_rules);
  PipelineConfig cfg;
  cfg.pass0.k = 3;
  cfg.pass0.u = 3;
  const PipelineResult result = run_pipeline(bench, cfg, backend);

  bool ok = result.attributions.size() == 1;
  std::string detail;
  if (ok) {
    const AttributionResult& res = result.attributions[0];
    const Trace& trace = result.pass0.traces[0];
    const bool span_ok = !res.causal_spans.empty() &&
                         res.causal_spans[0].chunk_id == "c3" &&
                         res.causal_spans[0].local_start >= 46 &&
                         res.causal_spans[0].local_end <= 76;
    const bool answered_from_rest = res.sanitized_completion == "Canberra";
    ok = res.resolved && span_ok && answered_from_rest && trace.completion == "Sydney";
    if (!ok) {
      detail = "resolved=" + std::to_string(res.resolved) +
               " sanitized='" + res.sanitized_completion + "'";
    }
  } else {
    detail = "expected exactly one triggered event";
  }
  const double elapsed = seconds_since(start);
  if (ok && elapsed >= 1.0) {
    ok = false;
    detail = "too slow: " + std::to_string(elapsed) + "s";
  }
  report(2, "worked-example reproduction", ok, detail);
}

struct BundleRun {
  Benchmark bench;
  PipelineResult engine;
  PipelineResult whole_chunk;
  double build_seconds = 0.0;
};

BundleRun run_bundle() {
  BundleRun run;
  const auto start = Clock::now();
  run.bench = build_benchmark(20, 424242);
  auto backend = std::make_shared<OracleBackend>(run.bench.oracle_rules);
  PipelineConfig cfg;
  cfg.pass0.jobs = 4;
  run.engine = run_pipeline(run.bench, cfg, backend);
  run.build_seconds = seconds_since(start);
  PipelineConfig baseline = cfg;
  baseline.method = "whole_chunk";
  run.whole_chunk = run_pipeline(run.bench, baseline, backend);
  return run;
}

void criterion3(const BundleRun& run) {
  bool ok = run.engine.scores.size() == 100;
  std::ostringstream detail;
  double iou_sum = 0.0, fpr_sum = 0.0;
  int scored = 0;
  for (const auto& e : run.engine.scores) {
    if (e.gold.empty()) continue;
    ++scored;
    iou_sum += e.iou;
    fpr_sum += e.fpr;
  }
  const double macro_iou = scored ? iou_sum / scored : 0.0;
  const double macro_fpr = scored ? fpr_sum / scored : 1.0;
  if (macro_iou < 0.90 || macro_fpr > 0.10) ok = false;

  // Causal validity: every resolved event's final mask suppresses the trigger
  // on a fresh verification replay.
  auto backend = std::make_shared<OracleBackend>(run.bench.oracle_rules);
  Pass1Config eng;
  int resolved = 0, valid = 0;
  for (const auto& res : run.engine.attributions) {
    if (!res.resolved) continue;
    ++resolved;
    for (const auto& t : run.engine.pass0.traces) {
      if (t.trace_id != res.trace_id) continue;
      const EventContext ctx = make_event_context(run.bench, t);
      CachedGenerator verify(backend, true);
      if (!is_triggered(replay_masked(ctx, eng, verify, res.final_mask).signals, eng.trigger)) {
        ++valid;
      }
      break;
    }
  }
  if (resolved == 0 || valid != resolved) ok = false;
  if (run.build_seconds >= 30.0) ok = false;
  detail << "events=" << run.engine.scores.size() << " macro_iou=" << macro_iou
         << " macro_fpr=" << macro_fpr << " causal_valid=" << valid << "/" << resolved
         << " runtime=" << run.build_seconds << "s";
  report(3, "synthetic benchmark quality", ok, detail.str());
}

void criterion4(const BundleRun& run) {
  bool ok = !run.engine.attributions.empty();
  std::vector<int> calls;
  for (const auto& res : run.engine.attributions) {
    calls.push_back(res.total_calls);
    if (res.total_calls > 90) ok = false;
    // StageRecord accounting agrees with the total.
    int from_stages = 0;
    for (const auto& st : res.stages) from_stages += st.calls_used;
    if (from_stages > res.total_calls) ok = false;
  }
  std::sort(calls.begin(), calls.end());
  const int median = calls.empty() ? 0 : calls[calls.size() / 2];
  if (median > 3) ok = false;
  std::ostringstream detail;
  detail << "events=" << calls.size() << " median_calls=" << median
         << " max_calls=" << (calls.empty() ? 0 : calls.back());
  report(4, "budget bound", ok, detail.str());
}

void criterion5(const BundleRun& run) {
  std::map<std::string, const EventScore*> engine_by_query, chunk_by_query;
  for (const auto& e : run.engine.scores) engine_by_query[e.query_id] = &e;
  for (const auto& e : run.whole_chunk.scores) chunk_by_query[e.query_id] = &e;

  bool ok = true;
  int compared = 0;
  for (const auto& gt : run.bench.ground_truth) {
    const Chunk* chunk = run.bench.corpus.find_chunk(gt.chunk_id);
    if (!chunk) continue;
    const std::size_t chunk_len = char_length(chunk->text);
    const std::size_t gold_len = gt.end - gt.start;
    if (gold_len * 2 >= chunk_len) continue;  // criterion applies below 50%
    const auto* eng = engine_by_query[gt.query_id];
    const auto* base = chunk_by_query[gt.query_id];
    if (!eng || !base) {
      ok = false;
      continue;
    }
    ++compared;
    if (!(base->fpr > eng->fpr)) ok = false;
  }
  if (compared == 0) ok = false;
  report(5, "baseline ordering", ok,
         "events compared=" + std::to_string(compared));
}

void criterion6() {
  auto one_run = [](int jobs) {
    const Benchmark bench = build_benchmark(5, 777);
    auto backend = std::make_shared<OracleBackend>(bench.oracle_rules);
    PipelineConfig cfg;
    cfg.pass0.jobs = jobs;
    const PipelineResult r = run_pipeline(bench, cfg, backend);
    std::ostringstream bytes;
    for (const auto& t : r.pass0.traces) bytes << trace_to_json_line(t) << '\n';
    for (const auto& a : r.attributions) bytes << attribution_to_json_line(a) << '\n';
    bytes << render_aggregate_table(r.rows);
    return bytes.str();
  };
  const std::string a = one_run(1);
  const std::string b = one_run(1);
  const std::string c = one_run(8);
  const bool ok = a == b && a == c && !a.empty();
  report(6, "determinism", ok,
         ok ? "trace+report bytes identical across reruns and jobs=1/8" : "outputs diverged");
}

void criterion7(const BundleRun& run) {
  bool ok = !run.engine.rows.empty();
  for (const auto& row : run.engine.rows) {
    // Exact integer partition, which the fractions are derived from.
    if (row.unknown + row.confusion + row.evt != row.events) ok = false;
    if (std::fabs(row.frac_unknown + row.frac_confusion + row.frac_evt - 1.0) > 1e-12) ok = false;
  }
  report(7, "outcome partition", ok,
         "groups=" + std::to_string(run.engine.rows.size()));
}

void criterion8() {
  const Benchmark bench = build_rank6_fixture(5);
  auto backend = std::make_shared<OracleBackend>(bench.oracle_rules);
  PipelineConfig cfg;
  const auto rows = k_sweep(bench, {1, 2, 3, 4, 5, 10}, cfg, backend);
  bool ok = !rows.empty();
  double evt10 = -1.0;
  for (const auto& row : rows) {
    if (row.family != "all") continue;
    if (row.k <= 5 && row.frac_evt != 0.0) ok = false;
    if (row.k == 10) evt10 = row.frac_evt;
  }
  if (evt10 <= 0.0) ok = false;
  std::ostringstream detail;
  detail << "evt@k<=5 all zero, evt@10=" << evt10;
  report(8, "k-sweep sanity", ok, detail.str());
}

void criterion9() {
  std::mt19937_64 rng(4242);
  const std::vector<std::string> alphabet = {"a", "b", " ", "é", "日", "x", ".", "\n"};
  bool ok = true;
  int cases = 0;
  std::string detail;
  for (int iter = 0; iter < 2600 && ok; ++iter) {
    // Random prompt with multibyte content.
    std::string prompt;
    const std::size_t len = 20 + rng() % 180;
    for (std::size_t i = 0; i < len; ++i) prompt += alphabet[rng() % alphabet.size()];
    const std::size_t n = char_length(prompt);

    MaskSet masks;
    const int regions = 1 + static_cast<int>(rng() % 4);
    for (int r = 0; r < regions; ++r) {
      const std::size_t a = rng() % n;
      masks.add({a, std::min(n, a + 1 + rng() % 12)});
    }

    // Length preservation.
    const std::string masked = mask_prompt(prompt, masks);
    ok = ok && char_length(masked) == n;
    ++cases;

    // Union idempotence: re-applying the same masks changes nothing, and
    // masking incrementally equals masking the union.
    ok = ok && mask_prompt(masked, masks) == masked;
    ++cases;
    MaskSet grown = masks;
    const std::size_t extra_a = rng() % n;
    const CharInterval extra{extra_a, std::min(n, extra_a + 1 + rng() % 9)};
    grown.add(extra);
    ok = ok && mask_prompt(prompt, grown) == mask_intervals(masked, {extra});
    ++cases;

    // Monotone growth.
    ok = ok && grown.total_chars() >= masks.total_chars();
    ++cases;

    // Dual-coordinate snippet consistency: a block inside the prompt reads
    // the same span through local and global offsets.
    const std::size_t block_start = rng() % (n / 2 + 1);
    const std::size_t block_len = 1 + rng() % (n - block_start);
    const std::string block_text = char_substr(prompt, block_start, block_start + block_len);
    const std::size_t s_local = rng() % block_len;
    const std::size_t e_local = s_local + 1 + rng() % (block_len - s_local);
    Span sp;
    sp.prompt_start = block_start + s_local;
    sp.prompt_end = block_start + e_local;
    sp.local_start = s_local;
    sp.local_end = e_local;
    sp.snippet = char_substr(prompt, sp.prompt_start, sp.prompt_end);
    ok = ok && sp.snippet == char_substr(block_text, sp.local_start, sp.local_end);
    ++cases;
    if (!ok) detail = "failure at iteration " + std::to_string(iter);
  }
  if (ok && cases < 10000) {
    ok = false;
    detail = "only " + std::to_string(cases) + " cases";
  }
  report(9, "masking invariants", ok,
         ok ? std::to_string(cases) + " randomized cases" : detail);
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  const BundleRun bundle = run_bundle();
  criterion3(bundle);
  criterion4(bundle);
  criterion5(bundle);
  criterion6();
  criterion7(bundle);
  criterion8();
  criterion9();
  if (failures) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
