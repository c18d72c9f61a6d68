#pragma once

/**
 * Token-stream backends feeding the suppressor.
 *
 *  - ReplayStream / replay_measure: walk a recorded trace read-only and
 *    report where the intervention would have fired.
 *  - ScriptedModel / run_scripted: a deterministic state machine with a
 *    known "reflection detour", so the effect of suppression on length and
 *    answer is known exactly by construction.
 *
 * The live HTTP backend lives in live.hpp.
 *
 * Event logs carry interventions only (Zeroed and PenaltyApplied); the
 * per-entry Untouched-* actions are visible on SuppressionResult.
 */

#include "leadtok/error.hpp"
#include "leadtok/segmenter.hpp"
#include "leadtok/suppressor.hpp"
#include "leadtok/trace.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace leadtok {

class BackendStream {
 public:
  virtual ~BackendStream() = default;
  /// Distribution over the next token at the current position.
  virtual TokenDistribution next_distribution() = 0;
  /// Advances with `token`, which must be present in the last distribution.
  virtual void commit(const std::string& token) = 0;
  virtual bool finished() const = 0;
  virtual std::size_t tokens_generated() const = 0;
};

inline TokenDistribution distribution_of(const TokenEvent& ev) {
  TokenDistribution d;
  d.truncated = true;
  for (const auto& alt : ev.top_alternatives) d.entries.emplace_back(alt.text, std::exp(alt.logprob));
  return d;
}

inline bool is_intervention(SuppressionAction a) {
  return a == SuppressionAction::Zeroed || a == SuppressionAction::PenaltyApplied;
}

/// Intervention events at one position: Underthink penalties (inside the
/// window) followed by threshold zeroing, both only when the gate is on.
struct PositionOutcome {
  TokenDistribution distribution;  // after underthink and threshold rules
  std::vector<SuppressionEvent> events;
  bool all_mass_removed = false;
};

/// `underthink_upstream`: the distribution already includes the Underthink shift
/// (applied server-side), so penalties are logged but not re-applied.
inline PositionOutcome apply_interventions(const TokenDistribution& dist, const SuppressionConfig& cfg,
                                           const SentenceStartTracker& tracker, bool gate, std::size_t index,
                                           bool underthink_upstream = false) {
  PositionOutcome out;
  TokenDistribution working = dist;
  if (cfg.underthink && gate && cfg.underthink->in_window(index) && cfg.underthink->alpha != 0.0) {
    for (const auto& [tok, p] : dist.entries)
      if (cfg.is_target(tok)) out.events.push_back({index, tok, p, SuppressionAction::PenaltyApplied});
    if (!underthink_upstream)
      working = from_logits(underthink_adjust(to_logits(dist), cfg, index), dist.total(), dist.truncated);
  }
  try {
    auto r = suppress_distribution(
        working, cfg, [&](std::string_view tok) { return tracker.at_start(tok); }, gate, index);
    for (auto& ev : r.events) {
      if (!is_intervention(ev.action)) continue;
      // Report the probability the model assigned, before any Underthink shift.
      for (const auto& [tok, p] : dist.entries)
        if (tok == ev.token) { ev.original_probability = p; break; }
      out.events.push_back(ev);
    }
    out.distribution = std::move(r.distribution);
  } catch (const AllMassRemoved&) {
    // Every entry was zeroed; log that, then keep the single most likely
    // token unmodified as the recovery.
    for (const auto& [tok, p] : dist.entries) out.events.push_back({index, tok, p, SuppressionAction::Zeroed});
    out.all_mass_removed = true;
    out.distribution.truncated = true;
    if (!working.entries.empty()) out.distribution.entries.push_back(working.entries.front());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

class ReplayStream final : public BackendStream {
 public:
  explicit ReplayStream(const TraceRecord& trace) : trace_(&trace) {}

  TokenDistribution next_distribution() override { return distribution_of(trace_->tokens.at(pos_)); }

  void commit(const std::string& token) override {
    if (token != trace_->tokens.at(pos_).text)
      throw Error("replay stream is read-only: commit must follow the recorded token");
    ++pos_;
  }
  bool finished() const override { return pos_ >= trace_->tokens.size(); }
  std::size_t tokens_generated() const override { return pos_; }

 private:
  const TraceRecord* trace_;
  std::size_t pos_ = 0;
};

struct ReplayReport {
  std::vector<SuppressionEvent> events;
  // Positions where the recorded token itself would have been removed.
  std::vector<std::size_t> sampled_bans;
  // First sampled ban; recorded continuations after it are not valid counterfactuals.
  std::optional<std::size_t> divergence_index;
  bool gate_active = true;
};

inline ReplayReport replay_measure(const TraceRecord& trace, const SuppressionConfig& cfg,
                                   const SegmenterConfig& seg = {}) {
  ReplayReport rep;
  rep.gate_active = rollout_gate(cfg.seed, trace.id, cfg.rollout_probability);
  ReplayStream stream(trace);
  const bool upstream = trace.meta.count("underthink_applied") && trace.meta.at("underthink_applied") == "upstream";
  SentenceStartTracker tracker(seg);
  while (!stream.finished()) {
    const std::size_t i = stream.tokens_generated();
    const auto& recorded = trace.tokens[i];
    auto outcome = apply_interventions(stream.next_distribution(), cfg, tracker, rep.gate_active, i, upstream);
    for (auto& ev : outcome.events) {
      if (ev.action == SuppressionAction::Zeroed && ev.token == recorded.text && !outcome.all_mass_removed)
        rep.sampled_bans.push_back(i);
      rep.events.push_back(std::move(ev));
    }
    tracker.push(recorded.text);
    stream.commit(recorded.text);
  }
  if (!rep.sampled_bans.empty()) rep.divergence_index = rep.sampled_bans.front();
  return rep;
}

// ---------------------------------------------------------------------------
// Scripted model
// ---------------------------------------------------------------------------

struct ScriptState {
  std::string name;
  TokenDistribution emit;
  std::map<std::string, std::size_t> next;  // token -> state index
  bool terminal = false;
};

struct DetourSpec {
  std::size_t entry = 0;
  std::string trigger;
  std::size_t rejoin = 0;
  std::size_t length = 0;  // tokens from the trigger (inclusive) until reaching `rejoin`
};

struct ScriptedModel {
  std::vector<ScriptState> states;
  std::size_t start = 0;
  std::optional<DetourSpec> detour;

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < states.size(); ++i)
      if (states[i].name == name) return i;
    throw ScriptInvalid("unknown state '" + name + "'");
  }

  /// Greedy successor of a state (no suppression).
  std::size_t greedy_next(std::size_t s) const {
    const auto& st = states.at(s);
    return st.next.at(st.emit.entries.front().first);
  }

  void validate() const {
    if (states.empty()) throw ScriptInvalid("script has no states");
    if (start >= states.size()) throw ScriptInvalid("start state out of range");
    for (const auto& st : states) {
      if (st.terminal) {
        if (!st.emit.entries.empty()) throw ScriptInvalid("terminal state '" + st.name + "' must not emit");
        continue;
      }
      if (st.emit.entries.empty()) throw ScriptInvalid("state '" + st.name + "' emits nothing");
      if (st.emit.truncated) throw ScriptInvalid("state '" + st.name + "' must carry a full distribution");
      try {
        st.emit.validate();
      } catch (const ConfigError& e) {
        throw ScriptInvalid("state '" + st.name + "': " + e.what());
      }
      for (const auto& [tok, p] : st.emit.entries) {
        auto it = st.next.find(tok);
        if (it == st.next.end()) throw ScriptInvalid("state '" + st.name + "' has no transition for '" + tok + "'");
        if (it->second >= states.size()) throw ScriptInvalid("state '" + st.name + "' transitions out of range");
      }
    }
    if (detour) {
      const auto& d = *detour;
      const auto& entry = states.at(d.entry);
      if (!entry.next.count(d.trigger))
        throw ScriptInvalid("detour entry '" + entry.name + "' does not emit '" + d.trigger + "'");
      std::size_t s = entry.next.at(d.trigger);
      std::size_t steps = 1;
      while (s != d.rejoin) {
        if (states[s].terminal || steps > states.size())
          throw ScriptInvalid("detour from '" + entry.name + "' never reaches '" + states[d.rejoin].name + "'");
        s = greedy_next(s);
        ++steps;
      }
      if (steps != d.length)
        throw ScriptInvalid("detour length is " + std::to_string(steps) + ", annotation says " +
                            std::to_string(d.length));
    }
  }
};

/**
 * Script file (JSON):
 *   {"start": "s0",
 *    "states": {
 *      "s0":   {"emit": [["Wait", 0.2], ["So", 0.18], ...], "next": {"Wait": "d", "So": "s1", ...}},
 *      "d":    {"chain": [",", " let", ...], "next": "resume"},
 *      "done": {"terminal": true}},
 *    "detour": {"entry": "s0", "token": "Wait", "rejoin": "resume", "length": 40}}
 * A chain state emits its tokens in order, each with probability 1.
 * "emit" may also be an object {"Wait": 0.2, ...}.
 */
inline ScriptedModel script_from_json(const nlohmann::json& j) {
  ScriptedModel m;
  try {
    const auto& states = j.at("states");
    if (!states.is_object()) throw ScriptInvalid("'states' must be an object");
    // Pass 1: names (chains expand to name, name#1, name#2, ...).
    for (const auto& [name, def] : states.items()) {
      if (def.contains("chain")) {
        const auto& chain = def.at("chain");
        if (!chain.is_array() || chain.empty()) throw ScriptInvalid("chain '" + name + "' must be a non-empty array");
        for (std::size_t k = 0; k < chain.size(); ++k)
          m.states.push_back({k == 0 ? name : name + "#" + std::to_string(k), {}, {}, false});
      } else {
        m.states.push_back({name, {}, {}, def.value("terminal", false)});
      }
    }
    // Pass 2: emissions and transitions.
    for (const auto& [name, def] : states.items()) {
      if (def.contains("chain")) {
        const auto& chain = def.at("chain");
        for (std::size_t k = 0; k < chain.size(); ++k) {
          auto& st = m.states[m.index_of(k == 0 ? name : name + "#" + std::to_string(k))];
          const auto tok = chain[k].get<std::string>();
          st.emit = {{{tok, 1.0}}, false};
          st.next[tok] = k + 1 < chain.size() ? m.index_of(name + "#" + std::to_string(k + 1))
                                              : m.index_of(def.at("next").get<std::string>());
        }
        continue;
      }
      auto& st = m.states[m.index_of(name)];
      if (st.terminal) continue;
      std::vector<std::pair<std::string, double>> entries;
      const auto& emit = def.at("emit");
      if (emit.is_object()) {
        for (const auto& [tok, p] : emit.items()) entries.emplace_back(tok, p.get<double>());
      } else {
        for (const auto& e : emit) entries.emplace_back(e.at(0).get<std::string>(), e.at(1).get<double>());
      }
      st.emit = TokenDistribution::from_unsorted(std::move(entries), false);
      for (const auto& [tok, target] : def.at("next").items()) st.next[tok] = m.index_of(target.get<std::string>());
    }
    m.start = m.index_of(j.at("start").get<std::string>());
    if (j.contains("detour")) {
      const auto& d = j.at("detour");
      m.detour = DetourSpec{m.index_of(d.at("entry").get<std::string>()), d.at("token").get<std::string>(),
                            m.index_of(d.at("rejoin").get<std::string>()), d.at("length").get<std::size_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ScriptInvalid(std::string("script schema: ") + e.what());
  }
  m.validate();
  return m;
}

inline ScriptedModel load_script(const std::string& path) {
  auto in = open_input(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ScriptInvalid(path + ": " + e.what());
  }
  return script_from_json(j);
}

class ScriptedStream final : public BackendStream {
 public:
  explicit ScriptedStream(const ScriptedModel& model) : model_(&model), state_(model.start) {}

  TokenDistribution next_distribution() override { return model_->states[state_].emit; }

  void commit(const std::string& token) override {
    const auto& st = model_->states[state_];
    auto it = st.next.find(token);
    if (it == st.next.end()) throw Error("scripted stream: '" + token + "' not emitted by state '" + st.name + "'");
    state_ = it->second;
    ++count_;
  }
  bool finished() const override { return model_->states[state_].terminal; }
  std::size_t tokens_generated() const override { return count_; }

 private:
  const ScriptedModel* model_;
  std::size_t state_;
  std::size_t count_ = 0;
};

struct DecodeOptions {
  std::size_t max_tokens = 32768;
  std::string response_id = "scripted";
  // Greedy argmax when unset; otherwise sample with this seed.
  std::optional<std::uint64_t> sample_seed;
};

struct DecodeRun {
  TraceRecord trace;  // committed tokens with the pre-intervention distribution
  std::string text;
  std::size_t token_count = 0;
  std::vector<SuppressionEvent> events;
  std::vector<std::size_t> recoveries;  // positions where AllMassRemoved was recovered
  bool gate_active = true;

  std::string final_token() const { return trace.tokens.empty() ? std::string{} : trace.tokens.back().text; }
  std::size_t interventions() const {
    std::size_t n = 0;
    for (const auto& e : events) n += e.action == SuppressionAction::Zeroed ? 1 : 0;
    return n;
  }
};

/// Decodes a stream to completion applying every configured intervention.
inline DecodeRun decode_stream(BackendStream& stream, const SuppressionConfig& cfg, const SegmenterConfig& seg,
                               const DecodeOptions& opt) {
  DecodeRun run;
  run.trace.id = opt.response_id;
  run.gate_active = rollout_gate(cfg.seed, opt.response_id, cfg.rollout_probability);
  SentenceStartTracker tracker(seg);
  std::mt19937_64 rng(opt.sample_seed.value_or(0));
  while (!stream.finished()) {
    const std::size_t i = stream.tokens_generated();
    if (i >= opt.max_tokens) throw MaxTokensExceeded(opt.max_tokens);
    const TokenDistribution original = stream.next_distribution();
    auto outcome = apply_interventions(original, cfg, tracker, run.gate_active, i);
    if (outcome.all_mass_removed) run.recoveries.push_back(i);
    for (auto& ev : outcome.events) run.events.push_back(std::move(ev));

    const auto& entries = outcome.distribution.entries;
    std::size_t pick = 0;
    if (opt.sample_seed) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * outcome.distribution.total();
      double acc = 0.0;
      for (pick = 0; pick + 1 < entries.size(); ++pick) {
        acc += entries[pick].second;
        if (u < acc) break;
      }
    }
    const std::string token = entries.at(pick).first;

    TokenEvent ev;
    ev.index = i;
    ev.text = token;
    for (const auto& [tok, p] : original.entries) {
      if (p <= 0.0) continue;
      ev.top_alternatives.push_back({tok, std::log(p)});
      if (tok == token) ev.logprob = std::log(p);
    }
    run.trace.tokens.push_back(std::move(ev));
    run.text += token;
    tracker.push(token);
    stream.commit(token);
  }
  run.token_count = run.trace.tokens.size();
  run.trace.meta["rollout_gate"] = run.gate_active ? "on" : "off";
  return run;
}

inline DecodeRun run_scripted(const ScriptedModel& model, const SuppressionConfig& cfg, const SegmenterConfig& seg = {},
                              DecodeOptions opt = {}) {
  ScriptedStream stream(model);
  return decode_stream(stream, cfg, seg, opt);
}

}  // namespace leadtok
