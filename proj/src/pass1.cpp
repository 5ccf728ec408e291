#include "spantrace/pass1.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace spantrace {

using json = nlohmann::json;

void MaskSet::add(CharInterval region) {
  if (region.first >= region.second) return;
  std::vector<CharInterval> merged;
  for (const auto& r : regions_) {
    if (r.second < region.first || r.first > region.second) {
      merged.push_back(r);  // disjoint and non-adjacent
    } else {
      region.first = std::min(region.first, r.first);
      region.second = std::max(region.second, r.second);
    }
  }
  merged.push_back(region);
  std::sort(merged.begin(), merged.end());
  regions_ = std::move(merged);
}

bool MaskSet::overlaps(CharInterval region) const {
  for (const auto& r : regions_) {
    if (r.first < region.second && region.first < r.second) return true;
  }
  return false;
}

bool MaskSet::contains(CharInterval region) const {
  for (const auto& r : regions_) {
    if (r.first <= region.first && region.second <= r.second) return true;
  }
  return false;
}

std::size_t MaskSet::total_chars() const {
  std::size_t n = 0;
  for (const auto& r : regions_) n += r.second - r.first;
  return n;
}

std::string mask_prompt(std::string_view prompt, const MaskSet& masks) {
  return mask_intervals(prompt, masks.regions());
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kFastPath: return "fast_path";
    case Stage::kChunk: return "chunk";
    case Stage::kSentence: return "sentence";
    case Stage::kSpan: return "span";
    case Stage::kBisect: return "bisect";
  }
  return "unknown";
}

std::optional<Objective> parse_objective(std::string_view name) {
  if (name == "event") return Objective::kEvent;
  if (name == "oracle") return Objective::kOracle;
  return std::nullopt;
}

std::string objective_name(Objective o) {
  return o == Objective::kEvent ? "event" : "oracle";
}

double influence_score(const EventSignals& pre, const EventSignals& post, Objective objective,
                       TriggerPredicate trigger, std::string_view pre_answer,
                       std::string_view post_answer, const std::optional<std::string>& gold,
                       const std::optional<std::string>& target) {
  (void)pre;
  if (objective == Objective::kOracle && !gold && !target) {
    throw std::invalid_argument("oracle objective requires a gold or target label");
  }
  double score = 0.0;
  if (!is_triggered(post, trigger)) {
    score = 1.0;
  } else if (!answers_align(pre_answer, post_answer)) {
    score = 0.5;
  }
  if (objective == Objective::kOracle && gold && answers_align(post_answer, *gold)) {
    score += 0.25;  // gold-recovery tie-break layer
  }
  return score;
}

namespace {

Span make_block_span(const PromptBlock& block, CharInterval local) {
  Span s;
  s.chunk_id = block.chunk_id;
  s.local_start = local.first;
  s.local_end = local.second;
  s.prompt_start = block.prompt_start + local.first;
  s.prompt_end = block.prompt_start + local.second;
  s.snippet = char_substr(block.chunk_text_snapshot, local.first, local.second);
  return s;
}

// Leading run of words whose first alphabetic character is uppercase, capped
// at max_words, starting at the first word of the text.
std::optional<CharInterval> leading_capitalized_phrase(const std::vector<char32_t>& cps,
                                                       int max_words) {
  std::size_t i = 0;
  while (i < cps.size() && is_space_cp(cps[i])) ++i;
  std::optional<std::size_t> phrase_start;
  std::size_t phrase_end = 0;
  int words = 0;
  while (i < cps.size() && words < max_words) {
    const std::size_t word_start = i;
    while (i < cps.size() && !is_space_cp(cps[i])) ++i;
    const std::size_t word_end = i;
    // First alphabetic character decides capitalization; treat ASCII plus
    // Latin-1 letters, matching the case folder.
    bool capitalized = false;
    bool has_alpha = false;
    for (std::size_t k = word_start; k < word_end; ++k) {
      const char32_t c = cps[k];
      const bool upper = (c >= U'A' && c <= U'Z') || (c >= 0xC0 && c <= 0xDE && c != 0xD7);
      const bool lower = (c >= U'a' && c <= U'z') || (c >= 0xDF && c <= 0xFF && c != 0xF7);
      if (upper || lower) {
        has_alpha = true;
        capitalized = upper;
        break;
      }
    }
    if (!has_alpha || !capitalized) break;
    if (!phrase_start) phrase_start = word_start;
    phrase_end = word_end;
    ++words;
    while (i < cps.size() && is_space_cp(cps[i])) ++i;
  }
  if (!phrase_start) return std::nullopt;
  return CharInterval{*phrase_start, phrase_end};
}

}  // namespace

std::optional<Span> extract_attribution_span(const PromptBlock& block,
                                             std::string_view current_block_text,
                                             std::string_view bad_answer,
                                             std::string_view original_prompt) {
  (void)original_prompt;
  // Rule (i): exact case-insensitive match of the bad answer.
  if (!bad_answer.empty()) {
    if (auto hit = locate_ci(current_block_text, bad_answer)) {
      return make_block_span(block, *hit);
    }
  }
  const auto cps = decode_utf8(current_block_text);
  // Rule (ii): leading capitalized phrase of 1-6 words.
  if (auto phrase = leading_capitalized_phrase(cps, 6)) {
    return make_block_span(block, *phrase);
  }
  // Rule (iii): first non-space token.
  std::size_t i = 0;
  while (i < cps.size() && is_space_cp(cps[i])) ++i;
  if (i == cps.size()) return std::nullopt;  // all whitespace
  std::size_t j = i;
  while (j < cps.size() && !is_space_cp(cps[j])) ++j;
  return make_block_span(block, CharInterval{i, j});
}

std::vector<CharInterval> sentence_candidates(std::string_view chunk_text,
                                              std::string_view current_answer,
                                              const MaskSet& masks, const PromptBlock& block,
                                              std::size_t max_candidates, std::size_t min_len) {
  struct Candidate {
    CharInterval local;
    bool has_answer;
    std::size_t len;
  };
  std::vector<Candidate> cands;
  for (const auto& iv : split_sentences(chunk_text)) {
    const std::size_t len = iv.second - iv.first;
    if (len < min_len) continue;
    const CharInterval global{block.prompt_start + iv.first, block.prompt_start + iv.second};
    if (masks.overlaps(global)) continue;
    const std::string sentence = char_substr(chunk_text, iv.first, iv.second);
    cands.push_back({iv, contains_norm(sentence, current_answer), len});
  }
  // Three-key order: contains answer desc, length desc, position asc (the
  // stable sort preserves the original positional order on full ties).
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.has_answer != b.has_answer) return a.has_answer;
    return a.len > b.len;
  });
  std::vector<CharInterval> out;
  for (const auto& c : cands) {
    if (out.size() >= max_candidates) break;
    out.push_back(c.local);
  }
  return out;
}

namespace {

bool is_clause_delimiter(char32_t c) {
  return c == U',' || c == U';' || c == U':' || c == U'-' || c == 0x2013 || c == 0x2014;
}

}  // namespace

std::vector<CharInterval> propose_span_candidates(std::string_view chunk_text,
                                                  std::string_view current_answer,
                                                  const std::vector<CharInterval>& retained_regions,
                                                  const MaskSet& masks, const PromptBlock& block,
                                                  std::size_t max_candidates,
                                                  std::size_t window_width) {
  const auto cps = decode_utf8(chunk_text);
  std::vector<CharInterval> out;
  auto push = [&](CharInterval iv) {
    if (iv.first >= iv.second || iv.second > cps.size()) return;
    const CharInterval global{block.prompt_start + iv.first, block.prompt_start + iv.second};
    if (masks.overlaps(global)) return;
    if (std::find(out.begin(), out.end(), iv) != out.end()) return;
    out.push_back(iv);
  };

  // Priority 1: normalized matches of the current answer.
  const auto matches = locate_norm_all(chunk_text, current_answer);
  for (const auto& m : matches) push(m);

  // Priority 2: clause-level splits of the retained regions.
  for (const auto& region : retained_regions) {
    std::size_t start = region.first;
    for (std::size_t i = region.first; i <= region.second && i <= cps.size(); ++i) {
      const bool cut = i == region.second || is_clause_delimiter(cps[i]);
      if (!cut) continue;
      std::size_t a = start;
      std::size_t b = std::min(i, cps.size());
      while (a < b && is_space_cp(cps[a])) ++a;
      while (b > a && is_space_cp(cps[b - 1])) --b;
      push(CharInterval{a, b});
      start = i + 1;
    }
  }

  // Priority 3: fixed-width windows centered on answer matches.
  for (const auto& m : matches) {
    const std::size_t center = (m.first + m.second) / 2;
    const std::size_t half = window_width / 2;
    const std::size_t a = center > half ? center - half : 0;
    const std::size_t b = std::min(a + window_width, cps.size());
    push(CharInterval{a, b});
  }

  // Restrict to the retained focus regions whenever that leaves a candidate.
  if (!retained_regions.empty()) {
    std::vector<CharInterval> inside;
    for (const auto& c : out) {
      for (const auto& r : retained_regions) {
        if (r.first <= c.first && c.second <= r.second) {
          inside.push_back(c);
          break;
        }
      }
    }
    if (!inside.empty()) out = std::move(inside);
  }
  if (out.size() > max_candidates) out.resize(max_candidates);
  return out;
}

Span bisect_minimal_span(const Span& seed, std::string_view original_prompt,
                         const SuppressProbe& probe, int max_replays, std::size_t min_len,
                         int* replays_used) {
  CharInterval cur{seed.prompt_start, seed.prompt_end};
  int used = 0;
  // Split only while both halves can stay at or above the length floor.
  while (cur.second - cur.first >= 2 * min_len && used + 2 <= max_replays) {
    const std::size_t mid = cur.first + (cur.second - cur.first) / 2;
    const CharInterval left{cur.first, mid};
    const CharInterval right{mid, cur.second};
    const bool left_ok = probe(left);
    ++used;
    const bool right_ok = probe(right);
    ++used;
    if (left_ok && right_ok) {
      const std::size_t ll = left.second - left.first;
      const std::size_t rl = right.second - right.first;
      cur = rl < ll ? right : left;  // shorter wins; earlier on ties
    } else if (left_ok) {
      cur = left;
    } else if (right_ok) {
      cur = right;
    } else {
      break;  // distributed cue: neither half suppresses alone
    }
  }
  if (replays_used) *replays_used = used;
  Span s;
  s.chunk_id = seed.chunk_id;
  s.prompt_start = cur.first;
  s.prompt_end = cur.second;
  const std::size_t base = seed.prompt_start - seed.local_start;
  s.local_start = cur.first - base;
  s.local_end = cur.second - base;
  s.snippet = char_substr(original_prompt, cur.first, cur.second);
  return s;
}

ReplayResult replay_masked(const EventContext& ctx, const Pass1Config& config,
                           CachedGenerator& generator, const MaskSet& masks) {
  const std::string masked = mask_prompt(ctx.trace->rendered_prompt, masks);
  GenerationRequest req;
  req.prompt = masked;
  req.params = config.decode;
  const GenerationResult g = generator.generate(req);  // TransportError propagates
  // Classify against the masked view of the evidence blocks so that
  // overlap-style predicates see what the generator saw.
  std::vector<PromptBlock> blocks = ctx.trace->prompt_used;
  for (auto& b : blocks) {
    b.chunk_text_snapshot = char_substr(masked, b.prompt_start, b.prompt_end);
  }
  ClassifyInputs ci;
  ci.completion = g.completion;
  ci.prompt_used = &blocks;
  ci.injected = ctx.injected;
  ci.gold = ctx.gold;
  ci.target = ctx.target;
  ci.abstain_patterns = ctx.abstain_patterns;
  return {classify_outcome(ci), g.completion};
}

namespace {

using ReplayOutcome = ReplayResult;

// Sequential per-event traceback state. One instance per triggered trace.
class EventRunner {
 public:
  EventRunner(const EventContext& ctx, const Pass1Config& cfg,
              std::shared_ptr<GeneratorBackend> backend)
      : ctx_(ctx), cfg_(cfg), gen_(std::move(backend), cfg.cache) {}

  AttributionResult run() {
    const Trace& trace = *ctx_.trace;
    res_.trace_id = trace.trace_id;
    cur_signals_ = trace.signals;
    if (!is_triggered(cur_signals_, cfg_.trigger)) {
      // Pass-0 already shows no event under this predicate; nothing to mask.
      res_.resolved = true;
      res_.sanitized_completion = trace.completion;
      finish();
      return res_;
    }
    if (trace.prompt_used.empty()) {
      res_.unresolved_reason = "no prompt-used evidence blocks";
      finish();
      return res_;
    }
    anchor_ = cur_signals_.matched_answer.value_or(trace.completion);
    try {
      for (int round = 1; round <= cfg_.budgets.rounds; ++round) {
        res_.rounds_used = round;
        if (run_round()) {
          res_.resolved = true;
          break;
        }
      }
    } catch (const TransportError& e) {
      res_.unresolved_reason = std::string("untestable: ") + e.what();
    }
    if (!res_.resolved && res_.unresolved_reason.empty()) {
      res_.unresolved_reason = "trigger persisted after round budget";
    }
    finish();
    return res_;
  }

 private:
  void finish() {
    res_.final_mask = masks_;
    res_.total_calls = calls_;
    res_.backend_calls = gen_.backend_calls();
    if (res_.resolved && !res_.causal_spans.empty()) {
      res_.mode = res_.causal_spans.size() == 1 ? "mask_span" : "mask_multi";
    }
  }

  const std::string& prompt() const { return ctx_.trace->rendered_prompt; }

  // Block text with the accumulated masks applied.
  std::string current_text(const PromptBlock& b) const {
    std::vector<CharInterval> local;
    for (const auto& r : masks_.regions()) {
      const std::size_t a = std::max(r.first, b.prompt_start);
      const std::size_t z = std::min(r.second, b.prompt_end);
      if (a < z) local.emplace_back(a - b.prompt_start, z - b.prompt_start);
    }
    return mask_intervals(b.chunk_text_snapshot, local);
  }

  ReplayOutcome replay(const MaskSet& m) {
    ++calls_;
    return replay_masked(ctx_, cfg_, gen_, m);
  }

  double influence(const ReplayOutcome& out) const {
    const std::string post_answer = out.signals.matched_answer.value_or(out.completion);
    return influence_score(cur_signals_, out.signals, cfg_.objective, cfg_.trigger, anchor_,
                           post_answer, ctx_.gold, ctx_.target);
  }

  bool suppressed(const ReplayOutcome& out) const {
    return !is_triggered(out.signals, cfg_.trigger);
  }

  void record(Stage stage, std::optional<Span> span, const std::string& chunk_id,
              const ReplayOutcome& out, double infl, int calls) {
    StageRecord r;
    r.stage = stage;
    r.candidate_span = std::move(span);
    r.candidate_chunk_id = chunk_id;
    r.pre_signals = cur_signals_;
    r.post_signals = out.signals;
    r.influence = infl;
    r.success = suppressed(out);
    r.calls_used = calls;
    res_.stages.push_back(std::move(r));
  }

  // One traceback round; true when the trigger was suppressed.
  bool run_round() {
    const auto& blocks = ctx_.trace->prompt_used;

    if (cfg_.fast_path) {
      // Highest-ranked block containing the current bad answer.
      for (const auto& b : blocks) {
        if (!contains_norm(current_text(b), anchor_)) continue;
        auto span = extract_attribution_span(b, current_text(b), anchor_, prompt());
        if (span) {
          if (!res_.attribution_span) res_.attribution_span = span;
          MaskSet m = masks_;
          m.add({span->prompt_start, span->prompt_end});
          const ReplayOutcome out = replay(m);
          record(Stage::kFastPath, span, b.chunk_id, out, influence(out), 1);
          if (suppressed(out)) {
            masks_ = std::move(m);
            res_.causal_spans.push_back(*span);
            res_.sanitized_completion = out.completion;
            cur_signals_ = out.signals;
            return true;
          }
        }
        break;  // only the single best-ranked containing block gets the shortcut
      }
    }

    // Chunk screening: containing blocks first, else all of H_U, by rank.
    std::vector<const PromptBlock*> candidates;
    for (const auto& b : blocks) {
      if (contains_norm(current_text(b), anchor_)) candidates.push_back(&b);
    }
    if (candidates.empty()) {
      for (const auto& b : blocks) candidates.push_back(&b);
    }
    if (candidates.size() > static_cast<std::size_t>(cfg_.budgets.max_chunks)) {
      candidates.resize(static_cast<std::size_t>(cfg_.budgets.max_chunks));
    }
    const PromptBlock* best = nullptr;
    double best_influence = -1.0;
    for (const PromptBlock* b : candidates) {
      MaskSet m = masks_;
      m.add({b->prompt_start, b->prompt_end});
      const ReplayOutcome out = replay(m);
      const double infl = influence(out);
      record(Stage::kChunk, std::nullopt, b->chunk_id, out, infl, 1);
      if (infl > best_influence) {  // strict: retrieval rank is the tie-break
        best_influence = infl;
        best = b;
      }
      if (cfg_.early_stop && suppressed(out)) break;
    }
    if (!best) {
      res_.unresolved_reason = "no candidate chunks to screen";
      return false;
    }
    const PromptBlock& cstar = *best;
    if (!res_.attribution_span) {
      res_.attribution_span =
          extract_attribution_span(cstar, current_text(cstar), anchor_, prompt());
    }

    // Sentence-first refinement inside the selected chunk.
    std::optional<Span> seed;
    const auto sentences =
        sentence_candidates(cstar.chunk_text_snapshot, anchor_, masks_, cstar,
                            cfg_.max_sentence_candidates, cfg_.min_sentence_len);
    struct TestedSentence {
      CharInterval local;
      double influence;
    };
    std::vector<TestedSentence> tested;
    for (const auto& iv : sentences) {
      if (tested.size() >= static_cast<std::size_t>(cfg_.budgets.max_sentences)) break;
      MaskSet m = masks_;
      m.add({cstar.prompt_start + iv.first, cstar.prompt_start + iv.second});
      const ReplayOutcome out = replay(m);
      const double infl = influence(out);
      record(Stage::kSentence, make_block_span(cstar, iv), cstar.chunk_id, out, infl, 1);
      tested.push_back({iv, infl});
      if (suppressed(out)) {
        seed = make_block_span(cstar, iv);  // forwarded to bisection, not accepted whole
        break;
      }
    }
    // Retain the top regions to focus the span search: tested sentences by
    // influence, then untested ones in candidate order.
    std::vector<CharInterval> retained;
    std::stable_sort(tested.begin(), tested.end(),
                     [](const TestedSentence& a, const TestedSentence& b) {
                       return a.influence > b.influence;
                     });
    for (const auto& t : tested) {
      if (retained.size() >= static_cast<std::size_t>(cfg_.budgets.retained_regions)) break;
      retained.push_back(t.local);
    }
    for (std::size_t i = tested.size();
         i < sentences.size() &&
         retained.size() < static_cast<std::size_t>(cfg_.budgets.retained_regions);
         ++i) {
      retained.push_back(sentences[i]);
    }

    if (!seed) {
      const auto proposals = propose_span_candidates(
          cstar.chunk_text_snapshot, anchor_, retained, masks_, cstar,
          static_cast<std::size_t>(cfg_.budgets.max_span_candidates), cfg_.window_width);
      std::optional<CharInterval> best_span;
      double best_span_influence = -1.0;
      bool best_span_success = false;
      for (const auto& iv : proposals) {
        MaskSet m = masks_;
        m.add({cstar.prompt_start + iv.first, cstar.prompt_start + iv.second});
        const ReplayOutcome out = replay(m);
        const double infl = influence(out);
        record(Stage::kSpan, make_block_span(cstar, iv), cstar.chunk_id, out, infl, 1);
        if (infl > best_span_influence) {  // ties keep proposal priority order
          best_span_influence = infl;
          best_span = iv;
          best_span_success = suppressed(out);
        }
      }
      if (best_span && best_span_success) {
        seed = make_block_span(cstar, *best_span);
      } else {
        // No suppressing fine-grained candidate: mask the whole chunk so the
        // sanitize-and-replay loop stays well-defined.
        MaskSet m = masks_;
        m.add({cstar.prompt_start, cstar.prompt_end});
        const ReplayOutcome out = replay(m);
        const Span whole =
            make_block_span(cstar, {0, char_length(cstar.chunk_text_snapshot)});
        record(Stage::kSpan, whole, cstar.chunk_id, out, influence(out), 1);
        masks_ = std::move(m);
        if (suppressed(out)) res_.causal_spans.push_back(whole);
      }
    }

    if (seed) {
      const SuppressProbe probe = [&](CharInterval g) {
        MaskSet m = masks_;
        m.add(g);
        const ReplayOutcome out = replay(m);
        Span half;
        half.chunk_id = cstar.chunk_id;
        half.prompt_start = g.first;
        half.prompt_end = g.second;
        half.local_start = g.first - cstar.prompt_start;
        half.local_end = g.second - cstar.prompt_start;
        half.snippet = char_substr(prompt(), g.first, g.second);
        record(Stage::kBisect, half, cstar.chunk_id, out, influence(out), 1);
        return suppressed(out);
      };
      const Span final_span = bisect_minimal_span(*seed, prompt(), probe,
                                                  cfg_.budgets.bisect_steps,
                                                  cfg_.budgets.min_span_len);
      masks_.add({final_span.prompt_start, final_span.prompt_end});
      res_.causal_spans.push_back(final_span);
    }

    // Sanitize-and-replay with the accumulated mask.
    const ReplayOutcome out = replay(masks_);
    cur_signals_ = out.signals;
    if (suppressed(out)) {
      res_.sanitized_completion = out.completion;
      return true;
    }
    // The new prediction anchors the next round.
    anchor_ = out.signals.matched_answer.value_or(out.completion);
    return false;
  }

  const EventContext& ctx_;
  const Pass1Config& cfg_;
  CachedGenerator gen_;
  AttributionResult res_;
  MaskSet masks_;
  EventSignals cur_signals_;
  std::string anchor_;
  int calls_ = 0;
};

}  // namespace

AttributionResult run_pass1(const EventContext& ctx, const Pass1Config& config,
                            std::shared_ptr<GeneratorBackend> backend) {
  if (!ctx.trace) throw std::invalid_argument("run_pass1: null trace");
  if (config.budgets.max_chunks <= 0 || config.budgets.max_sentences <= 0 ||
      config.budgets.retained_regions <= 0 || config.budgets.max_span_candidates <= 0 ||
      config.budgets.bisect_steps < 0 || config.budgets.min_span_len == 0 ||
      config.budgets.rounds <= 0) {
    throw std::invalid_argument("run_pass1: budgets must be positive");
  }
  if (config.objective == Objective::kOracle && !ctx.gold && !ctx.target) {
    throw std::invalid_argument("run_pass1: oracle objective requires gold or target");
  }
  EventRunner runner(ctx, config, std::move(backend));
  return runner.run();
}

namespace {

json span_to_json(const Span& s) {
  json j;
  j["chunk_id"] = s.chunk_id;
  j["local_start"] = s.local_start;
  j["local_end"] = s.local_end;
  j["prompt_start"] = s.prompt_start;
  j["prompt_end"] = s.prompt_end;
  j["snippet"] = s.snippet;
  return j;
}

Span span_from_json(const json& j) {
  Span s;
  s.chunk_id = j.value("chunk_id", std::string());
  s.local_start = j.value("local_start", std::size_t{0});
  s.local_end = j.value("local_end", std::size_t{0});
  s.prompt_start = j.value("prompt_start", std::size_t{0});
  s.prompt_end = j.value("prompt_end", std::size_t{0});
  s.snippet = j.value("snippet", std::string());
  return s;
}

json stage_to_json(const StageRecord& r) {
  json j;
  j["stage"] = stage_name(r.stage);
  if (r.candidate_span) j["candidate_span"] = span_to_json(*r.candidate_span);
  j["candidate_chunk_id"] = r.candidate_chunk_id;
  j["pre_signals"] = signals_to_json(r.pre_signals);
  j["post_signals"] = signals_to_json(r.post_signals);
  j["influence"] = r.influence;
  j["success"] = r.success;
  j["calls_used"] = r.calls_used;
  return j;
}

StageRecord stage_from_json(const json& j) {
  StageRecord r;
  const std::string name = j.value("stage", "chunk");
  if (name == "fast_path") r.stage = Stage::kFastPath;
  else if (name == "chunk") r.stage = Stage::kChunk;
  else if (name == "sentence") r.stage = Stage::kSentence;
  else if (name == "span") r.stage = Stage::kSpan;
  else if (name == "bisect") r.stage = Stage::kBisect;
  if (j.contains("candidate_span")) r.candidate_span = span_from_json(j["candidate_span"]);
  r.candidate_chunk_id = j.value("candidate_chunk_id", std::string());
  r.pre_signals = signals_from_json(j.value("pre_signals", json::object()));
  r.post_signals = signals_from_json(j.value("post_signals", json::object()));
  r.influence = j.value("influence", 0.0);
  r.success = j.value("success", false);
  r.calls_used = j.value("calls_used", 0);
  return r;
}

}  // namespace

std::string attribution_to_json_line(const AttributionResult& r) {
  json j;
  j["trace_id"] = r.trace_id;
  if (r.attribution_span) j["attribution_span"] = span_to_json(*r.attribution_span);
  json spans = json::array();
  for (const auto& s : r.causal_spans) spans.push_back(span_to_json(s));
  j["causal_spans"] = std::move(spans);
  json regions = json::array();
  for (const auto& reg : r.final_mask.regions()) {
    regions.push_back(json::array({reg.first, reg.second}));
  }
  j["final_mask"] = std::move(regions);
  j["sanitized_completion"] = r.sanitized_completion;
  j["resolved"] = r.resolved;
  j["mode"] = r.mode;
  j["unresolved_reason"] = r.unresolved_reason;
  json stages = json::array();
  for (const auto& st : r.stages) stages.push_back(stage_to_json(st));
  j["stages"] = std::move(stages);
  j["total_calls"] = r.total_calls;
  j["backend_calls"] = r.backend_calls;
  j["rounds_used"] = r.rounds_used;
  return j.dump();
}

AttributionResult attribution_from_json_line(const std::string& line) {
  const json j = json::parse(line);
  AttributionResult r;
  r.trace_id = j.value("trace_id", std::string());
  if (j.contains("attribution_span")) r.attribution_span = span_from_json(j["attribution_span"]);
  for (const auto& s : j.value("causal_spans", json::array())) {
    r.causal_spans.push_back(span_from_json(s));
  }
  for (const auto& reg : j.value("final_mask", json::array())) {
    r.final_mask.add({reg.at(0).get<std::size_t>(), reg.at(1).get<std::size_t>()});
  }
  r.sanitized_completion = j.value("sanitized_completion", std::string());
  r.resolved = j.value("resolved", false);
  r.mode = j.value("mode", std::string());
  r.unresolved_reason = j.value("unresolved_reason", std::string());
  for (const auto& st : j.value("stages", json::array())) {
    r.stages.push_back(stage_from_json(st));
  }
  r.total_calls = j.value("total_calls", 0);
  r.backend_calls = j.value("backend_calls", std::uint64_t{0});
  r.rounds_used = j.value("rounds_used", 0);
  return r;
}

void save_attributions(const std::string& path, const std::vector<AttributionResult>& results,
                       const std::string& config_echo_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  json header;
  header["record"] = "config";
  header["format_version"] = kTraceFormatVersion;
  header["config"] = config_echo_json.empty() ? json::object() : json::parse(config_echo_json);
  out << header.dump() << '\n';
  for (const auto& r : results) out << attribution_to_json_line(r) << '\n';
}

AttributionFile load_attributions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  AttributionFile file;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      const json j = json::parse(line);
      if (j.value("record", "") == "config") {
        file.config_echo = j.value("config", json::object()).dump();
        continue;
      }
    }
    file.results.push_back(attribution_from_json_line(line));
  }
  return file;
}

}  // namespace spantrace
