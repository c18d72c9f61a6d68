#pragma once

/**
 * Live generation against an HTTP completions endpoint (the OpenAI-style
 * /v1/completions wire format with `logprobs` and `logit_bias`).
 *
 * Tokens are requested in chunks. When the threshold rule removes the token
 * the server sampled, the chunk is cut at that position and the position is
 * re-requested with the banned token biased out (ban-and-resample). This
 * samples from the same distribution the renormalized rule describes.
 *
 * The recorded TokenEvent keeps the distribution observed on the first
 * request at each position, so replay_measure over the output trace
 * recomputes exactly the events logged here. Underthink runs server-side
 * through logit_bias inside its window; returned probabilities already
 * include that shift, which the trace marks with meta "underthink_applied".
 */

#include "leadtok/backends.hpp"
#include "leadtok/error.hpp"
#include "leadtok/http.hpp"
#include "leadtok/segmenter.hpp"
#include "leadtok/suppressor.hpp"
#include "leadtok/trace.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace leadtok {

struct LiveEndpointConfig {
  HttpEndpoint endpoint;
  int top_logprobs = 8;
  std::size_t chunk_tokens = 64;
  // Token ids used in logit_bias; a target without an id cannot be banned.
  std::map<std::string, long long> bias_token_ids;
  double ban_bias = -100.0;
  std::optional<double> temperature;
  std::optional<double> top_p;
  nlohmann::json extra = nlohmann::json::object();  // merged into every request body
};

struct LiveResult {
  TraceRecord trace;
  std::vector<SuppressionEvent> events;
  std::size_t resamples = 0;
};

/// Thrown when the cap is reached; carries what was generated so far.
class LiveTruncated : public MaxTokensExceeded {
 public:
  LiveTruncated(std::size_t max_tokens, LiveResult partial)
      : MaxTokensExceeded(max_tokens), partial_(std::move(partial)) {}
  const LiveResult& partial() const noexcept { return partial_; }

 private:
  LiveResult partial_;
};

inline void record_config_meta(const SuppressionConfig& cfg, std::map<std::string, std::string>& meta) {
  std::string toks;
  for (const auto& t : cfg.target_tokens) toks += (toks.empty() ? "" : "|") + t;
  meta["cfg.tokens"] = toks;
  meta["cfg.threshold"] = nlohmann::json(cfg.threshold).dump();
  meta["cfg.mode"] = std::string(mode_name(cfg.mode));
  meta["cfg.rollout_p"] = nlohmann::json(cfg.rollout_probability).dump();
  meta["cfg.seed"] = std::to_string(cfg.seed);
  if (cfg.underthink) {
    meta["cfg.underthink.alpha"] = nlohmann::json(cfg.underthink->alpha).dump();
    meta["cfg.underthink.beta"] = cfg.underthink->beta ? std::to_string(*cfg.underthink->beta) : "inf";
  }
}

namespace detail {

struct ObservedToken {
  std::string text;
  double logprob;
  std::vector<Alternative> top;
};

inline std::vector<ObservedToken> parse_completion_tokens(const nlohmann::json& reply, std::string* finish_reason) {
  const auto& choice = reply.at("choices").at(0);
  *finish_reason = choice.value("finish_reason", std::string{});
  auto lp = choice.find("logprobs");
  if (lp == choice.end() || lp->is_null() || !lp->contains("tokens") || !lp->contains("token_logprobs") ||
      !lp->contains("top_logprobs"))
    throw CapabilityMissing("endpoint returned no per-token logprobs");
  const auto& toks = lp->at("tokens");
  const auto& lps = lp->at("token_logprobs");
  const auto& tops = lp->at("top_logprobs");
  if (toks.size() != lps.size() || toks.size() != tops.size())
    throw EndpointError("logprob arrays have inconsistent lengths");
  std::vector<ObservedToken> out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    ObservedToken t{toks[i].get<std::string>(), lps[i].get<double>(), {}};
    if (tops[i].is_null() || !tops[i].is_object()) throw CapabilityMissing("endpoint returned no top-k alternatives");
    for (const auto& [k, v] : tops[i].items()) t.top.push_back({k, v.get<double>()});
    std::stable_sort(t.top.begin(), t.top.end(), [](const auto& a, const auto& b) { return a.logprob > b.logprob; });
    out.push_back(std::move(t));
  }
  return out;
}

inline void insert_sorted(std::vector<Alternative>& top, Alternative alt) {
  auto it = std::find_if(top.begin(), top.end(), [&](const auto& a) { return a.logprob < alt.logprob; });
  top.insert(it, std::move(alt));
}

inline const Alternative* find_alt(const std::vector<Alternative>& top, const std::string& text) {
  for (const auto& a : top)
    if (a.text == text) return &a;
  return nullptr;
}

}  // namespace detail

inline LiveResult generate_live(const LiveEndpointConfig& ep, const std::string& response_id, const std::string& prompt,
                                const SuppressionConfig& cfg, const SegmenterConfig& seg = {},
                                std::size_t max_tokens = 32768) {
  JsonHttpClient http(ep.endpoint);
  LiveResult res;
  res.trace.id = response_id;
  res.trace.prompt = prompt;
  res.trace.meta["model"] = ep.endpoint.model;
  record_config_meta(cfg, res.trace.meta);
  const bool gate = rollout_gate(cfg.seed, response_id, cfg.rollout_probability);
  res.trace.meta["rollout_gate"] = gate ? "on" : "off";
  const bool server_underthink = cfg.underthink && gate && cfg.underthink->alpha != 0.0;
  if (server_underthink) res.trace.meta["underthink_applied"] = "upstream";

  SentenceStartTracker tracker(seg);
  std::string text;
  // State for a position that is being resampled.
  std::set<std::string> banned_here;
  std::optional<std::vector<Alternative>> original_top;

  auto request = [&](std::size_t n) {
    nlohmann::json body = ep.extra;
    body["model"] = ep.endpoint.model;
    body["prompt"] = prompt + text;
    body["max_tokens"] = n;
    body["logprobs"] = ep.top_logprobs;
    if (ep.temperature) body["temperature"] = *ep.temperature;
    if (ep.top_p) body["top_p"] = *ep.top_p;
    nlohmann::json bias = nlohmann::json::object();
    const std::size_t pos = res.trace.tokens.size();
    if (server_underthink && cfg.underthink->in_window(pos))
      for (const auto& t : cfg.target_tokens)
        if (auto it = ep.bias_token_ids.find(t); it != ep.bias_token_ids.end())
          bias[std::to_string(it->second)] = -cfg.underthink->alpha;
    for (const auto& t : banned_here) {
      auto it = ep.bias_token_ids.find(t);
      if (it == ep.bias_token_ids.end()) throw CapabilityMissing("no logit_bias token id configured for '" + t + "'");
      bias[std::to_string(it->second)] = ep.ban_bias;
    }
    if (!bias.empty()) body["logit_bias"] = bias;
    try {
      return http.post(body);
    } catch (const TransportError& e) {
      throw EndpointError(e.what());
    }
  };

  bool finished = false;
  while (!finished) {
    const std::size_t pos0 = res.trace.tokens.size();
    if (pos0 >= max_tokens) throw LiveTruncated(max_tokens, std::move(res));
    std::size_t n = std::min(ep.chunk_tokens, max_tokens - pos0);
    if (!banned_here.empty()) n = 1;
    // Keep underthink bias inside its window.
    if (server_underthink && cfg.underthink->beta && pos0 < *cfg.underthink->beta)
      n = std::min(n, *cfg.underthink->beta - pos0);
    std::string finish;
    std::vector<detail::ObservedToken> got;
    try {
      got = detail::parse_completion_tokens(request(n), &finish);
    } catch (const nlohmann::json::exception& e) {
      throw EndpointError(std::string("malformed completion reply: ") + e.what());
    }
    bool cut = false;
    for (auto& obs : got) {
      const std::size_t i = res.trace.tokens.size();
      if (banned_here.count(obs.text)) throw CapabilityMissing("endpoint ignored logit_bias for '" + obs.text + "'");
      std::vector<Alternative> top;
      double lp = obs.logprob;
      if (original_top) {
        // Resampled position: probabilities are relative to the pre-ban distribution.
        top = *original_top;
        double banned_mass = 0.0;
        for (const auto& b : banned_here)
          if (auto* a = detail::find_alt(top, b)) banned_mass += std::exp(a->logprob);
        if (auto* a = detail::find_alt(top, obs.text)) lp = a->logprob;
        else lp = obs.logprob + std::log1p(-std::min(banned_mass, 1.0 - 1e-12));
      } else {
        top = obs.top;
      }
      if (!detail::find_alt(top, obs.text)) detail::insert_sorted(top, {obs.text, std::min(lp, 0.0)});

      TokenEvent candidate{i, obs.text, std::min(lp, 0.0), top};
      auto outcome = apply_interventions(distribution_of(candidate), cfg, tracker, gate, i, server_underthink);
      const bool sampled_banned = std::any_of(outcome.events.begin(), outcome.events.end(), [&](const auto& ev) {
        return ev.action == SuppressionAction::Zeroed && ev.token == obs.text;
      });
      if (sampled_banned && !outcome.all_mass_removed) {
        banned_here.insert(obs.text);
        original_top = std::move(top);
        ++res.resamples;
        cut = true;
        break;
      }
      for (auto& ev : outcome.events) res.events.push_back(std::move(ev));
      tracker.push(obs.text);
      text += obs.text;
      res.trace.tokens.push_back(std::move(candidate));
      banned_here.clear();
      original_top.reset();
    }
    if (!cut && (finish == "stop" || got.empty())) finished = true;
  }
  return res;
}

}  // namespace leadtok
