#pragma once

/**
 * Decoding-time suppression of low-probability leading tokens.
 *
 * Threshold rule: at an eligible position, every configured target token
 * whose probability is strictly below the threshold is removed, and the
 * remaining entries are rescaled so the distribution keeps its original
 * total mass. Nothing removed means the input is returned unchanged.
 *
 * Also provides the Underthink baseline (a fixed logit offset on target
 * tokens inside a window of generated tokens) and the per-response rollout
 * gate (a seeded Bernoulli decision keyed by response id).
 */

#include "leadtok/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace leadtok {

struct TokenDistribution {
  std::vector<std::pair<std::string, double>> entries;  // sorted by probability, descending
  bool truncated = false;

  double total() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.second;
    return s;
  }

  void validate() const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (!(entries[i].second >= 0.0)) throw ConfigError("distribution: negative or NaN probability");
      if (i > 0 && entries[i].second > entries[i - 1].second) throw ConfigError("distribution: entries not sorted");
    }
    const double s = total();
    if (truncated ? s > 1.0 + 1e-9 : std::abs(s - 1.0) > 1e-9)
      throw ConfigError("distribution: probabilities sum to " + std::to_string(s));
  }

  /// Builds a sorted distribution from unsorted (token, probability) pairs.
  static TokenDistribution from_unsorted(std::vector<std::pair<std::string, double>> entries, bool truncated) {
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return {std::move(entries), truncated};
  }

  bool operator==(const TokenDistribution&) const = default;
};

enum class SuppressionMode { Global, SentenceStartGated };

inline std::string_view mode_name(SuppressionMode m) {
  return m == SuppressionMode::Global ? "global" : "sentence_start";
}

inline SuppressionMode parse_mode(std::string_view s) {
  if (s == "global") return SuppressionMode::Global;
  if (s == "sentence_start" || s == "gated") return SuppressionMode::SentenceStartGated;
  throw ConfigError("unknown suppression mode '" + std::string(s) + "' (expected global or sentence_start)");
}

struct UnderthinkConfig {
  double alpha = 3.0;
  std::optional<std::size_t> beta = 600;  // nullopt: infinite window

  bool in_window(std::size_t generated_count) const { return !beta || generated_count < *beta; }
};

inline const std::set<std::string>& default_target_tokens() {
  static const std::set<std::string> tokens = {"Wait", "wait"};
  return tokens;
}

/// Extended set: "wait" + "alternatively" + "but" tokens.
inline const std::set<std::string>& extended_target_tokens() {
  static const std::set<std::string> tokens = {"Wait", "wait", "Alternatively", "alternatively", "But", "but"};
  return tokens;
}

struct SuppressionConfig {
  // Exact surface text of one decoding token; include space-prefixed
  // variants (" wait") when the backend's tokenizer emits them.
  std::set<std::string> target_tokens = default_target_tokens();
  double threshold = 0.3;
  SuppressionMode mode = SuppressionMode::Global;
  std::optional<UnderthinkConfig> underthink;
  double rollout_probability = 1.0;
  std::uint64_t seed = 0;

  bool is_target(std::string_view token) const { return target_tokens.count(std::string(token)) > 0; }

  void validate() const {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must be in [0,1]");
    if (!(rollout_probability >= 0.0 && rollout_probability <= 1.0)) throw ConfigError("rollout_p must be in [0,1]");
    if (underthink && !(underthink->alpha >= 0.0)) throw ConfigError("underthink.alpha must be >= 0");
  }
};

enum class SuppressionAction { Zeroed, PenaltyApplied, UntouchedAboveThreshold, UntouchedNotSentenceStart, UntouchedGateOff };

inline std::string_view action_name(SuppressionAction a) {
  switch (a) {
    case SuppressionAction::Zeroed: return "Zeroed";
    case SuppressionAction::PenaltyApplied: return "PenaltyApplied";
    case SuppressionAction::UntouchedAboveThreshold: return "Untouched-AboveThreshold";
    case SuppressionAction::UntouchedNotSentenceStart: return "Untouched-NotSentenceStart";
    case SuppressionAction::UntouchedGateOff: return "Untouched-GateOff";
  }
  return "Zeroed";
}

inline SuppressionAction parse_action(std::string_view s) {
  for (auto a : {SuppressionAction::Zeroed, SuppressionAction::PenaltyApplied, SuppressionAction::UntouchedAboveThreshold,
                 SuppressionAction::UntouchedNotSentenceStart, SuppressionAction::UntouchedGateOff})
    if (action_name(a) == s) return a;
  throw ConfigError("unknown suppression action '" + std::string(s) + "'");
}

struct SuppressionEvent {
  std::size_t token_index = 0;
  std::string token;
  double original_probability = 0.0;
  SuppressionAction action = SuppressionAction::Zeroed;
  bool operator==(const SuppressionEvent&) const = default;
};

enum class Decision { Allow, Ban };

/// Action the threshold rule takes on one candidate token (targets only).
inline SuppressionAction classify_candidate(double probability, const SuppressionConfig& cfg, bool at_sentence_start,
                                            bool gate_active) {
  if (!gate_active) return SuppressionAction::UntouchedGateOff;
  if (cfg.mode == SuppressionMode::SentenceStartGated && !at_sentence_start)
    return SuppressionAction::UntouchedNotSentenceStart;
  if (!(probability < cfg.threshold)) return SuppressionAction::UntouchedAboveThreshold;
  return SuppressionAction::Zeroed;
}

inline Decision decide(std::string_view token, double probability, const SuppressionConfig& cfg, bool at_sentence_start,
                       bool gate_active) {
  if (!cfg.is_target(token)) return Decision::Allow;
  return classify_candidate(probability, cfg, at_sentence_start, gate_active) == SuppressionAction::Zeroed
             ? Decision::Ban
             : Decision::Allow;
}

struct SuppressionResult {
  TokenDistribution distribution;
  std::vector<SuppressionEvent> events;  // one per target entry, in entry order
  double removed_mass = 0.0;
};

/**
 * Applies the threshold rule to one position. `at_start(token)` tells,
 * per candidate, whether choosing it would start a sentence (only read in
 * gated mode). Throws AllMassRemoved when every entry is a removed target.
 */
inline SuppressionResult suppress_distribution(const TokenDistribution& dist, const SuppressionConfig& cfg,
                                               const std::function<bool(std::string_view)>& at_start, bool gate_active,
                                               std::size_t token_index = 0) {
  SuppressionResult r;
  std::vector<char> removed(dist.entries.size(), 0);
  for (std::size_t i = 0; i < dist.entries.size(); ++i) {
    const auto& [tok, p] = dist.entries[i];
    if (!cfg.is_target(tok)) continue;
    const bool start = cfg.mode == SuppressionMode::SentenceStartGated ? at_start(tok) : true;
    const auto action = classify_candidate(p, cfg, start, gate_active);
    r.events.push_back({token_index, tok, p, action});
    if (action == SuppressionAction::Zeroed) {
      removed[i] = 1;
      r.removed_mass += p;
    }
  }
  if (std::none_of(removed.begin(), removed.end(), [](char c) { return c != 0; })) {
    r.distribution = dist;
    return r;
  }
  const double total = dist.total();
  double kept = 0.0;
  for (std::size_t i = 0; i < dist.entries.size(); ++i)
    if (!removed[i]) kept += dist.entries[i].second;
  if (!(kept > 0.0)) throw AllMassRemoved();
  const double scale = total / kept;
  r.distribution.truncated = dist.truncated;
  for (std::size_t i = 0; i < dist.entries.size(); ++i)
    if (!removed[i]) r.distribution.entries.emplace_back(dist.entries[i].first, dist.entries[i].second * scale);
  return r;
}

inline SuppressionResult suppress_distribution(const TokenDistribution& dist, const SuppressionConfig& cfg,
                                               bool at_sentence_start, bool gate_active, std::size_t token_index = 0) {
  return suppress_distribution(
      dist, cfg, [at_sentence_start](std::string_view) { return at_sentence_start; }, gate_active, token_index);
}

// ---------------------------------------------------------------------------
// Underthink baseline
// ---------------------------------------------------------------------------

using Logits = std::vector<std::pair<std::string, double>>;

/// Subtracts alpha from every target logit while generated_count < beta.
inline Logits underthink_adjust(Logits logits, const SuppressionConfig& cfg, std::size_t generated_count) {
  if (!cfg.underthink) throw ConfigError("underthink_adjust called without underthink config");
  const auto& ut = *cfg.underthink;
  if (!ut.in_window(generated_count) || ut.alpha == 0.0) return logits;
  for (auto& [tok, logit] : logits)
    if (cfg.is_target(tok)) logit -= ut.alpha;
  return logits;
}

inline Logits to_logits(const TokenDistribution& dist) {
  Logits out;
  out.reserve(dist.entries.size());
  for (const auto& [tok, p] : dist.entries)
    out.emplace_back(tok, p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity());
  return out;
}

/// Softmax back to a distribution with the given total mass.
inline TokenDistribution from_logits(const Logits& logits, double total_mass, bool truncated) {
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& l : logits) mx = std::max(mx, l.second);
  std::vector<std::pair<std::string, double>> entries;
  double z = 0.0;
  for (const auto& [tok, l] : logits) {
    const double e = std::isinf(l) ? 0.0 : std::exp(l - mx);
    entries.emplace_back(tok, e);
    z += e;
  }
  for (auto& e : entries) e.second = z > 0 ? e.second / z * total_mass : 0.0;
  return TokenDistribution::from_unsorted(std::move(entries), truncated);
}

// ---------------------------------------------------------------------------
// Rollout gate
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Uniform value in [0,1) determined by (seed, response_id).
inline double gate_uniform(std::uint64_t seed, std::string_view response_id) {
  const std::uint64_t h = detail::splitmix64(detail::splitmix64(seed) ^ detail::fnv1a64(response_id));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline bool rollout_gate(std::uint64_t seed, std::string_view response_id, double p) {
  return gate_uniform(seed, response_id) < p;
}

// ---------------------------------------------------------------------------
// Event log
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json event_to_json(const std::string& trace_id, const SuppressionEvent& ev) {
  nlohmann::ordered_json j;
  j["trace_id"] = trace_id;
  j["i"] = ev.token_index;
  j["token"] = ev.token;
  j["p"] = ev.original_probability;
  j["action"] = action_name(ev.action);
  return j;
}

inline void write_event_line(std::ostream& out, const std::string& trace_id, const SuppressionEvent& ev) {
  out << event_to_json(trace_id, ev).dump() << '\n';
}

}  // namespace leadtok
