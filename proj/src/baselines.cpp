#include "spantrace/baselines.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "spantrace/text.hpp"

namespace spantrace {

double heuristic_abnormality(std::string_view text) {
  const auto cps = decode_utf8(text);
  if (cps.empty()) return 0.0;
  // Character classes: lower, upper, digit, punctuation, space, other.
  std::array<std::size_t, 6> counts{};
  std::size_t rare = 0;
  for (char32_t c : cps) {
    if (c >= U'a' && c <= U'z') counts[0]++;
    else if (c >= U'A' && c <= U'Z') counts[1]++;
    else if (c >= U'0' && c <= U'9') counts[2]++;
    else if (is_space_cp(c)) counts[4]++;
    else if (c < 0x80) counts[3]++;
    else counts[5]++;
    const char32_t l = (c >= U'A' && c <= U'Z') ? c + 32 : c;
    if (l == U'q' || l == U'x' || l == U'z' || l == U'j') ++rare;
  }
  const double n = static_cast<double>(cps.size());
  double entropy = 0.0;
  for (std::size_t k : counts) {
    if (k == 0) continue;
    const double p = static_cast<double>(k) / n;
    entropy -= p * std::log2(p);
  }
  const double rare_density = static_cast<double>(rare) / n;
  const double digit_ratio = static_cast<double>(counts[2]) / n;
  const double punct_ratio = static_cast<double>(counts[3]) / n;
  return entropy + 8.0 * rare_density + 4.0 * digit_ratio + 3.0 * punct_ratio;
}

namespace {

Span whole_chunk_span(const PromptBlock& b) {
  Span s;
  s.chunk_id = b.chunk_id;
  s.local_start = 0;
  s.local_end = char_length(b.chunk_text_snapshot);
  s.prompt_start = b.prompt_start;
  s.prompt_end = b.prompt_end;
  s.snippet = b.chunk_text_snapshot;
  return s;
}

void finish(AttributionResult& res, const MaskSet& masks, int calls, CachedGenerator& gen) {
  res.final_mask = masks;
  res.total_calls = calls;
  res.backend_calls = gen.backend_calls();
}

}  // namespace

AttributionResult whole_chunk_baseline(const EventContext& ctx, const Pass1Config& config,
                                       std::shared_ptr<GeneratorBackend> backend) {
  const Trace& trace = *ctx.trace;
  AttributionResult res;
  res.trace_id = trace.trace_id;
  res.mode = "whole_chunk";
  CachedGenerator gen(std::move(backend), config.cache);
  MaskSet masks;
  int calls = 0;
  if (!is_triggered(trace.signals, config.trigger)) {
    res.resolved = true;
    res.sanitized_completion = trace.completion;
    finish(res, masks, calls, gen);
    return res;
  }
  if (trace.prompt_used.empty()) {
    res.unresolved_reason = "no prompt-used evidence blocks";
    finish(res, masks, calls, gen);
    return res;
  }
  const std::string anchor = trace.signals.matched_answer.value_or(trace.completion);

  std::vector<const PromptBlock*> candidates;
  for (const auto& b : trace.prompt_used) {
    if (contains_norm(b.chunk_text_snapshot, anchor)) candidates.push_back(&b);
  }
  if (candidates.empty()) {
    for (const auto& b : trace.prompt_used) candidates.push_back(&b);
  }
  if (candidates.size() > static_cast<std::size_t>(config.budgets.max_chunks)) {
    candidates.resize(static_cast<std::size_t>(config.budgets.max_chunks));
  }

  const PromptBlock* best = nullptr;
  double best_influence = -1.0;
  bool best_success = false;
  try {
    for (const PromptBlock* b : candidates) {
      MaskSet m;
      m.add({b->prompt_start, b->prompt_end});
      ++calls;
      const ReplayResult out = replay_masked(ctx, config, gen, m);
      const bool success = !is_triggered(out.signals, config.trigger);
      const std::string post_answer = out.signals.matched_answer.value_or(out.completion);
      const double infl = influence_score(trace.signals, out.signals, config.objective,
                                          config.trigger, anchor, post_answer, ctx.gold,
                                          ctx.target);
      StageRecord rec;
      rec.stage = Stage::kChunk;
      rec.candidate_chunk_id = b->chunk_id;
      rec.pre_signals = trace.signals;
      rec.post_signals = out.signals;
      rec.influence = infl;
      rec.success = success;
      rec.calls_used = 1;
      res.stages.push_back(rec);
      if (infl > best_influence) {
        best_influence = infl;
        best = b;
        best_success = success;
      }
      if (success && config.early_stop) {
        if (res.sanitized_completion.empty()) res.sanitized_completion = out.completion;
        break;
      }
      if (success && res.sanitized_completion.empty()) {
        res.sanitized_completion = out.completion;
      }
    }
  } catch (const TransportError& e) {
    res.unresolved_reason = std::string("untestable: ") + e.what();
    finish(res, masks, calls, gen);
    return res;
  }
  if (best) {
    const Span pred = whole_chunk_span(*best);
    res.attribution_span = pred;
    masks.add({pred.prompt_start, pred.prompt_end});
    if (best_success) {
      res.causal_spans.push_back(pred);
      res.resolved = true;
      res.rounds_used = 1;
    } else {
      res.unresolved_reason = "no chunk mask suppressed the trigger";
    }
  }
  finish(res, masks, calls, gen);
  return res;
}

AttributionResult ppl_character_baseline(const EventContext& ctx, const PplCharConfig& config,
                                         std::shared_ptr<GeneratorBackend> backend) {
  const Trace& trace = *ctx.trace;
  const Pass1Config& eng = config.engine;
  const WindowScorer scorer =
      config.scorer ? config.scorer
                    : WindowScorer([](std::string_view t) { return heuristic_abnormality(t); });
  AttributionResult res;
  res.trace_id = trace.trace_id;
  res.mode = "ppl_character";
  CachedGenerator gen(std::move(backend), eng.cache);
  MaskSet masks;
  int calls = 0;
  if (!is_triggered(trace.signals, eng.trigger)) {
    res.resolved = true;
    res.sanitized_completion = trace.completion;
    finish(res, masks, calls, gen);
    return res;
  }
  if (trace.prompt_used.empty()) {
    res.unresolved_reason = "no prompt-used evidence blocks";
    finish(res, masks, calls, gen);
    return res;
  }

  // Rank chunks by mean window abnormality; ties keep retrieval order.
  auto windows_of = [&](const std::string& text) {
    std::vector<CharInterval> out;
    const std::size_t len = char_length(text);
    if (len == 0) return out;
    if (len <= config.window) {
      out.emplace_back(0, len);
      return out;
    }
    for (std::size_t start = 0; start + config.window <= len; start += config.stride) {
      out.emplace_back(start, start + config.window);
      if (start + config.window == len) break;
    }
    if (out.empty() || out.back().second < len) {
      out.emplace_back(len - config.window, len);
    }
    return out;
  };
  const PromptBlock* top = nullptr;
  double top_score = -1.0;
  for (const auto& b : trace.prompt_used) {
    const auto wins = windows_of(b.chunk_text_snapshot);
    if (wins.empty()) continue;
    double sum = 0.0;
    for (const auto& w : wins) {
      sum += scorer(char_substr(b.chunk_text_snapshot, w.first, w.second));
    }
    const double mean = sum / static_cast<double>(wins.size());
    if (mean > top_score) {
      top_score = mean;
      top = &b;
    }
  }
  if (!top) {
    res.unresolved_reason = "no scorable chunks";
    finish(res, masks, calls, gen);
    return res;
  }

  // Top windows of the most abnormal chunk, by descending score.
  std::vector<std::pair<double, CharInterval>> scored;
  for (const auto& w : windows_of(top->chunk_text_snapshot)) {
    scored.emplace_back(scorer(char_substr(top->chunk_text_snapshot, w.first, w.second)), w);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  if (scored.size() > static_cast<std::size_t>(config.top_windows)) {
    scored.resize(static_cast<std::size_t>(config.top_windows));
  }

  const std::string anchor = trace.signals.matched_answer.value_or(trace.completion);
  auto record = [&](Stage stage, std::optional<Span> sp, const ReplayResult& out, double infl,
                    bool success) {
    StageRecord rec;
    rec.stage = stage;
    rec.candidate_span = std::move(sp);
    rec.candidate_chunk_id = top->chunk_id;
    rec.pre_signals = trace.signals;
    rec.post_signals = out.signals;
    rec.influence = infl;
    rec.success = success;
    rec.calls_used = 1;
    res.stages.push_back(std::move(rec));
  };
  auto block_span = [&](CharInterval local) {
    Span s;
    s.chunk_id = top->chunk_id;
    s.local_start = local.first;
    s.local_end = local.second;
    s.prompt_start = top->prompt_start + local.first;
    s.prompt_end = top->prompt_start + local.second;
    s.snippet = char_substr(top->chunk_text_snapshot, local.first, local.second);
    return s;
  };

  try {
    std::optional<Span> seed;
    for (const auto& [score, w] : scored) {
      MaskSet m;
      m.add({top->prompt_start + w.first, top->prompt_start + w.second});
      ++calls;
      const ReplayResult out = replay_masked(ctx, eng, gen, m);
      const bool success = !is_triggered(out.signals, eng.trigger);
      const std::string post_answer = out.signals.matched_answer.value_or(out.completion);
      const double infl = influence_score(trace.signals, out.signals, eng.objective, eng.trigger,
                                          anchor, post_answer, ctx.gold, ctx.target);
      record(Stage::kSpan, block_span(w), out, infl, success);
      if (success) {
        seed = block_span(w);
        break;
      }
    }
    if (seed) {
      res.attribution_span = seed;
      const SuppressProbe probe = [&](CharInterval g) {
        MaskSet m;
        m.add(g);
        ++calls;
        const ReplayResult out = replay_masked(ctx, eng, gen, m);
        const bool success = !is_triggered(out.signals, eng.trigger);
        Span half;
        half.chunk_id = top->chunk_id;
        half.prompt_start = g.first;
        half.prompt_end = g.second;
        half.local_start = g.first - top->prompt_start;
        half.local_end = g.second - top->prompt_start;
        half.snippet = char_substr(trace.rendered_prompt, g.first, g.second);
        const std::string post_answer = out.signals.matched_answer.value_or(out.completion);
        record(Stage::kBisect, half, out,
               influence_score(trace.signals, out.signals, eng.objective, eng.trigger, anchor,
                               post_answer, ctx.gold, ctx.target),
               success);
        return success;
      };
      const Span final_span =
          bisect_minimal_span(*seed, trace.rendered_prompt, probe, eng.budgets.bisect_steps,
                              eng.budgets.min_span_len);
      masks.add({final_span.prompt_start, final_span.prompt_end});
      res.causal_spans.push_back(final_span);
      ++calls;
      const ReplayResult out = replay_masked(ctx, eng, gen, masks);
      if (!is_triggered(out.signals, eng.trigger)) {
        res.resolved = true;
        res.rounds_used = 1;
        res.sanitized_completion = out.completion;
      } else {
        res.unresolved_reason = "refined window stopped suppressing under final mask";
      }
    } else {
      // Flagged fallback: the whole top chunk becomes the prediction.
      const Span whole = whole_chunk_span(*top);
      res.attribution_span = whole;
      masks.add({whole.prompt_start, whole.prompt_end});
      ++calls;
      const ReplayResult out = replay_masked(ctx, eng, gen, masks);
      const bool success = !is_triggered(out.signals, eng.trigger);
      record(Stage::kChunk, whole, out, success ? 1.0 : 0.0, success);
      res.unresolved_reason = "no abnormal window suppressed; whole-chunk fallback";
      if (success) {
        res.causal_spans.push_back(whole);
        res.resolved = true;
        res.rounds_used = 1;
        res.sanitized_completion = out.completion;
      }
    }
  } catch (const TransportError& e) {
    res.unresolved_reason = std::string("untestable: ") + e.what();
  }
  finish(res, masks, calls, gen);
  return res;
}

}  // namespace spantrace
