#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "spantrace/harness.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace spantrace;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitMissingFile = 2;
constexpr int kExitValidation = 3;
constexpr int kExitBackend = 4;

struct CliOptions {
  std::string bundle;
  std::string traces_path;
  std::string attributions_path;
  std::string out;
  std::string backend = "oracle";
  std::string method = "engine";
  std::string trigger = "par";
  std::string objective = "event";
  int k = 5;
  int u = 5;
  int jobs = 1;
  std::uint64_t seed = 0;
  int bc = 5, bs = 5, bt = 2, bp = 12, tb = 6;
  std::size_t eta = 4;
  int rounds = 3;
  bool fast_path = true;
  int topics = 20;
  std::string fixture = "benchmark";
  std::string ks = "1,3,5,10";
};

void require_file(const std::string& path) {
  if (!fs::exists(path)) {
    throw fs::filesystem_error("input not found", path,
                               std::make_error_code(std::errc::no_such_file_or_directory));
  }
}

std::shared_ptr<GeneratorBackend> make_backend(const CliOptions& opt, const Benchmark& bench) {
  if (opt.backend == "oracle") {
    return std::make_shared<OracleBackend>(bench.oracle_rules);
  }
  if (opt.backend == "remote") {
    RemoteConfig rc;
    const char* base = std::getenv("SPANTRACE_BASE_URL");
    const char* model = std::getenv("SPANTRACE_MODEL");
    const char* key = std::getenv("SPANTRACE_API_KEY");
    if (!base || !model) {
      throw std::invalid_argument(
          "remote backend needs SPANTRACE_BASE_URL and SPANTRACE_MODEL in the environment");
    }
    rc.base_url = base;
    rc.model = model;
    if (key) rc.api_key = key;  // never echoed into outputs
    return std::make_shared<RemoteBackend>(rc);
  }
  throw std::invalid_argument("unknown backend: " + opt.backend);
}

PipelineConfig make_pipeline_config(const CliOptions& opt) {
  PipelineConfig cfg;
  cfg.pass0.k = opt.k;
  cfg.pass0.u = opt.u;
  cfg.pass0.jobs = opt.jobs;
  cfg.pass0.seed = opt.seed;
  const auto trig = parse_trigger(opt.trigger);
  if (!trig) throw std::invalid_argument("unknown trigger predicate: " + opt.trigger);
  cfg.pass0.trigger = *trig;
  cfg.pass1.trigger = *trig;
  const auto obj = parse_objective(opt.objective);
  if (!obj) throw std::invalid_argument("unknown objective: " + opt.objective);
  cfg.pass1.objective = *obj;
  cfg.pass1.budgets.max_chunks = opt.bc;
  cfg.pass1.budgets.max_sentences = opt.bs;
  cfg.pass1.budgets.retained_regions = opt.bt;
  cfg.pass1.budgets.max_span_candidates = opt.bp;
  cfg.pass1.budgets.bisect_steps = opt.tb;
  cfg.pass1.budgets.min_span_len = opt.eta;
  cfg.pass1.budgets.rounds = opt.rounds;
  cfg.pass1.fast_path = opt.fast_path;
  cfg.method = opt.method;
  return cfg;
}

std::string config_echo(const CliOptions& opt, const std::string& command) {
  json j;
  j["command"] = command;
  j["backend"] = opt.backend;
  j["method"] = opt.method;
  j["trigger"] = opt.trigger;
  j["objective"] = opt.objective;
  j["k"] = opt.k;
  j["u"] = opt.u;
  // jobs is deliberately not echoed: it cannot affect any result byte, and
  // output files must be identical across worker counts.
  j["seed"] = opt.seed;
  j["bc"] = opt.bc;
  j["bs"] = opt.bs;
  j["bt"] = opt.bt;
  j["bp"] = opt.bp;
  j["tb"] = opt.tb;
  j["eta"] = opt.eta;
  j["rounds"] = opt.rounds;
  j["fast_path"] = opt.fast_path;
  return j.dump();
}

void check_trace_version(const TraceFile& file) {
  if (file.format_version != kTraceFormatVersion) {
    throw std::invalid_argument("trace format version mismatch: found '" + file.format_version +
                                "', expected '" + kTraceFormatVersion + "'");
  }
}

int cmd_synth(const CliOptions& opt) {
  Benchmark bench;
  if (opt.fixture == "benchmark") {
    bench = build_benchmark(opt.topics, opt.seed);
  } else if (opt.fixture == "rank6") {
    bench = build_rank6_fixture(opt.seed);
  } else if (opt.fixture == "worked-example") {
    bench = build_worked_example();
  } else {
    throw std::invalid_argument("unknown fixture: " + opt.fixture);
  }
  save_benchmark(opt.out, bench);
  std::cout << "wrote bundle: " << opt.out << " (" << bench.queries.size() << " queries, "
            << bench.corpus.size() << " chunks, " << bench.ground_truth.size()
            << " ground-truth spans)\n";
  return kExitOk;
}

void require_bundle(const std::string& dir) {
  require_file((fs::path(dir) / "manifest.json").string());
}

int cmd_pass0(const CliOptions& opt) {
  require_bundle(opt.bundle);
  const Benchmark bench = load_benchmark(opt.bundle);
  const auto backend = make_backend(opt, bench);
  const PipelineConfig cfg = make_pipeline_config(opt);
  BackendConfigSnapshot snapshot;
  snapshot.backend = opt.backend;
  snapshot.model = backend->identity();
  snapshot.temperature = cfg.pass0.decode.temperature;
  snapshot.max_output_chars = cfg.pass0.decode.max_output_chars;
  CachedGenerator gen(backend, true);
  const Pass0Result result =
      run_pass0(bench.corpus, bench.queries, cfg.pass0, gen, bench.injected, snapshot);
  save_traces(opt.out, result.traces, config_echo(opt, "pass0"));
  std::cout << "wrote traces: " << opt.out << " (" << result.traces.size() << " traces, "
            << result.triggered.size() << " triggered, " << result.generation_failures
            << " generation failures)\n";
  return kExitOk;
}

int cmd_pass1(const CliOptions& opt) {
  require_bundle(opt.bundle);
  require_file(opt.traces_path);
  const Benchmark bench = load_benchmark(opt.bundle);
  const TraceFile traces = load_traces(opt.traces_path);
  check_trace_version(traces);
  const auto backend = make_backend(opt, bench);
  const PipelineConfig cfg = make_pipeline_config(opt);

  std::vector<const Trace*> triggered;
  for (const auto& t : traces.traces) {
    if (!t.signals.generation_failed && is_triggered(t.signals, cfg.pass1.trigger)) {
      triggered.push_back(&t);
    }
  }
  std::vector<AttributionResult> results(triggered.size());
  // Deterministic slot assignment; each event owns its replay cache, so the
  // job count can never change an output byte.
  auto run_event = [&](std::size_t i) {
    const EventContext ctx = make_event_context(bench, *triggered[i]);
    if (cfg.method == "whole_chunk") {
      results[i] = whole_chunk_baseline(ctx, cfg.pass1, backend);
    } else if (cfg.method == "ppl_character") {
      PplCharConfig ppl = cfg.ppl;
      ppl.engine = cfg.pass1;
      results[i] = ppl_character_baseline(ctx, ppl, backend);
    } else {
      results[i] = run_pass1(ctx, cfg.pass1, backend);
    }
  };
  const std::size_t workers =
      std::min<std::size_t>(std::max(opt.jobs, 1), std::max<std::size_t>(triggered.size(), 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < triggered.size(); ++i) run_event(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        for (std::size_t i = w; i < triggered.size(); i += workers) run_event(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  save_attributions(opt.out, results, config_echo(opt, "pass1"));
  int resolved = 0;
  for (const auto& r : results) resolved += r.resolved ? 1 : 0;
  std::cout << "wrote attributions: " << opt.out << " (" << results.size() << " events, "
            << resolved << " resolved)\n";
  if (results.empty()) std::cout << "note: zero triggered events\n";
  return kExitOk;
}

int cmd_eval(const CliOptions& opt) {
  require_bundle(opt.bundle);
  require_file(opt.traces_path);
  require_file(opt.attributions_path);
  const Benchmark bench = load_benchmark(opt.bundle);
  const TraceFile traces = load_traces(opt.traces_path);
  check_trace_version(traces);
  const AttributionFile attrs = load_attributions(opt.attributions_path);

  std::map<std::string, const AttributionResult*> by_trace;
  for (const auto& a : attrs.results) by_trace[a.trace_id] = &a;
  std::vector<EventScore> scores;
  for (const auto& t : traces.traces) {
    auto it = by_trace.find(t.trace_id);
    scores.push_back(
        build_event_score(bench, t, it == by_trace.end() ? nullptr : it->second, opt.method));
  }
  const auto rows = aggregate(scores, "family");

  std::ofstream out(opt.out, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + opt.out);
  out << "# config: " << config_echo(opt, "eval") << '\n';
  out << render_aggregate_table(rows);
  // Machine-readable per-event rows next to the table.
  const std::string scores_path = opt.out + ".events.jsonl";
  std::ofstream ev(scores_path, std::ios::binary);
  for (const auto& s : scores) {
    json j;
    j["query_id"] = s.query_id;
    j["trace_id"] = s.trace_id;
    j["outcome"] = s.outcome;
    j["resolved"] = s.resolved;
    j["total_calls"] = s.total_calls;
    j["iou"] = s.iou;
    j["f1"] = s.f1;
    j["precision"] = s.precision;
    j["recall"] = s.recall;
    j["fpr"] = s.fpr;
    j["pred_empty"] = s.pred_empty;
    j["labels"] = s.labels;
    ev << j.dump() << '\n';
  }
  std::cout << "wrote report: " << opt.out << " and " << scores_path << '\n';
  std::cout << render_aggregate_table(rows);
  return kExitOk;
}

int cmd_report(const CliOptions& opt) {
  require_bundle(opt.bundle);
  require_file(opt.traces_path);
  require_file(opt.attributions_path);
  const Benchmark bench = load_benchmark(opt.bundle);
  const TraceFile traces = load_traces(opt.traces_path);
  check_trace_version(traces);
  const AttributionFile attrs = load_attributions(opt.attributions_path);

  std::map<std::string, const Trace*> trace_by_id;
  for (const auto& t : traces.traces) trace_by_id[t.trace_id] = &t;

  std::ofstream out(opt.out, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + opt.out);
  out << "forensic report\n===============\n";
  out << "config: " << config_echo(opt, "report") << "\n\n";
  if (attrs.results.empty()) out << "zero triggered events\n";
  for (const auto& a : attrs.results) {
    const Trace* t = trace_by_id.count(a.trace_id) ? trace_by_id.at(a.trace_id) : nullptr;
    out << "event " << a.trace_id;
    if (t) out << "  query: " << t->query;
    out << '\n';
    out << "  resolved: " << (a.resolved ? "yes" : "no");
    if (!a.resolved && !a.unresolved_reason.empty()) out << " (" << a.unresolved_reason << ")";
    out << "  mode: " << (a.mode.empty() ? "-" : a.mode) << "  replay calls: " << a.total_calls
        << '\n';
    if (t) out << "  observed completion: " << t->completion << '\n';
    if (!a.sanitized_completion.empty()) {
      out << "  sanitized completion: " << a.sanitized_completion << '\n';
    }
    auto annotate = [&](const char* label, const Span& s) {
      out << "  " << label << " [" << s.chunk_id << " " << s.local_start << ".." << s.local_end
          << "): " << s.snippet << '\n';
      if (t) {
        for (const auto& b : t->prompt_used) {
          if (b.chunk_id != s.chunk_id) continue;
          // Annotated excerpt: the span underlined inside its chunk.
          out << "    | " << b.chunk_text_snapshot << '\n';
          out << "    | ";
          const std::size_t len = char_length(b.chunk_text_snapshot);
          for (std::size_t i = 0; i < len; ++i) {
            out << (i >= s.local_start && i < s.local_end ? '^' : ' ');
          }
          out << '\n';
          break;
        }
      }
    };
    if (a.attribution_span) annotate("attribution span", *a.attribution_span);
    for (const auto& s : a.causal_spans) annotate("causal span", s);
    out << "  stages:";
    for (const auto& st : a.stages) {
      out << ' ' << stage_name(st.stage) << (st.success ? "+" : "-");
    }
    out << "\n\n";
  }
  std::cout << "wrote report: " << opt.out << '\n';
  return kExitOk;
}

int cmd_sweep_k(const CliOptions& opt) {
  require_bundle(opt.bundle);
  const Benchmark bench = load_benchmark(opt.bundle);
  const auto backend = make_backend(opt, bench);
  PipelineConfig cfg = make_pipeline_config(opt);
  std::vector<int> ks;
  std::stringstream ss(opt.ks);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) ks.push_back(std::stoi(item));
  }
  if (ks.empty() || !std::is_sorted(ks.begin(), ks.end())) {
    throw std::invalid_argument("--ks must be a non-empty ascending list");
  }
  const auto rows = k_sweep(bench, ks, cfg, backend);
  std::ofstream out(opt.out, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + opt.out);
  out << "# config: " << config_echo(opt, "sweep-k") << '\n';
  out << k_sweep_csv(rows);
  std::cout << "wrote sweep: " << opt.out << " (" << rows.size() << " rows)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"black-box RAG poisoning traceback toolkit"};
  app.require_subcommand(1);
  CliOptions opt;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--trigger", opt.trigger, "trigger predicate: par|t_asr|confusion|any|always|overlap");
    cmd->add_option("--objective", opt.objective, "influence objective: event|oracle");
    cmd->add_option("--backend", opt.backend, "generator backend: oracle|remote");
    cmd->add_option("--jobs", opt.jobs, "worker threads across events");
    cmd->add_option("--seed", opt.seed, "run seed");
    cmd->add_option("-k", opt.k, "retrieval depth K");
    cmd->add_option("-u", opt.u, "prompt-used hits U");
    cmd->add_option("--bc", opt.bc, "chunk budget B_c");
    cmd->add_option("--bs", opt.bs, "sentence budget B_s");
    cmd->add_option("--bt", opt.bt, "focus-region budget B_t");
    cmd->add_option("--bp", opt.bp, "span budget B_p");
    cmd->add_option("--tb", opt.tb, "bisection budget T_b");
    cmd->add_option("--eta", opt.eta, "minimum span length");
    cmd->add_option("--rounds", opt.rounds, "maximum traceback rounds");
    cmd->add_flag("--fast-path,!--no-fast-path", opt.fast_path, "answer-anchored fast path");
    cmd->add_option("--method", opt.method, "attribution method: engine|whole_chunk|ppl_character");
  };

  auto* synth = app.add_subcommand("synth", "build a poisoned benchmark bundle");
  synth->add_option("--out", opt.out, "bundle directory")->required();
  synth->add_option("--topics", opt.topics, "base topics (x5 families)");
  synth->add_option("--fixture", opt.fixture, "benchmark|rank6|worked-example");
  synth->add_option("--seed", opt.seed, "generation seed");

  auto* pass0 = app.add_subcommand("pass0", "run RAG and log prompt-anchored traces");
  pass0->add_option("--bundle", opt.bundle, "benchmark bundle directory")->required();
  pass0->add_option("--out", opt.out, "trace file (jsonl)")->required();
  add_common(pass0);

  auto* pass1 = app.add_subcommand("pass1", "trace triggered events back to character spans");
  pass1->add_option("--bundle", opt.bundle, "benchmark bundle directory")->required();
  pass1->add_option("--traces", opt.traces_path, "trace file from pass0")->required();
  pass1->add_option("--out", opt.out, "attribution report (jsonl)")->required();
  add_common(pass1);

  auto* eval = app.add_subcommand("eval", "score attributions against ground truth");
  eval->add_option("--bundle", opt.bundle, "benchmark bundle directory")->required();
  eval->add_option("--traces", opt.traces_path, "trace file")->required();
  eval->add_option("--attributions", opt.attributions_path, "attribution report")->required();
  eval->add_option("--out", opt.out, "aggregate table output")->required();
  eval->add_option("--method", opt.method, "method label for the report rows");

  auto* report = app.add_subcommand("report", "render human-readable span highlights");
  report->add_option("--bundle", opt.bundle, "benchmark bundle directory")->required();
  report->add_option("--traces", opt.traces_path, "trace file")->required();
  report->add_option("--attributions", opt.attributions_path, "attribution report")->required();
  report->add_option("--out", opt.out, "report text output")->required();

  auto* sweep = app.add_subcommand("sweep-k", "pass0+pass1 across K values with U=K");
  sweep->add_option("--bundle", opt.bundle, "benchmark bundle directory")->required();
  sweep->add_option("--out", opt.out, "curve csv output")->required();
  sweep->add_option("--ks", opt.ks, "comma-separated ascending K values");
  add_common(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (synth->parsed()) return cmd_synth(opt);
    if (pass0->parsed()) return cmd_pass0(opt);
    if (pass1->parsed()) return cmd_pass1(opt);
    if (eval->parsed()) return cmd_eval(opt);
    if (report->parsed()) return cmd_report(opt);
    if (sweep->parsed()) return cmd_sweep_k(opt);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: missing input: " << e.path1().string() << '\n';
    return kExitMissingFile;
  } catch (const TransportError& e) {
    std::cerr << "error: backend unreachable: " << e.what() << '\n';
    return kExitBackend;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: invalid configuration: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
