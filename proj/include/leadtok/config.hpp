#pragma once

// GlobalConfig: one JSON file composing every module's settings. Unknown
// keys are rejected so typos fail loudly. Command-line flags are applied on
// top by the CLI (flags win).

#include "leadtok/classifier.hpp"
#include "leadtok/error.hpp"
#include "leadtok/live.hpp"
#include "leadtok/loop_filter.hpp"
#include "leadtok/segmenter.hpp"
#include "leadtok/stats.hpp"
#include "leadtok/suppressor.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace leadtok {

struct DatasetSpec {
  std::string tag;
  std::string path;
  std::size_t n_per_question = 1;
};

struct StatsConfig {
  std::size_t bins = kDefaultBins;
  std::size_t top_n = 10;
  std::vector<std::string> density_tokens = {"Wait"};
};

struct GlobalConfig {
  SegmenterConfig segmenter;
  HeuristicRules heuristic;
  LoopParams loop;
  SuppressionConfig suppression;
  LiveEndpointConfig generator;
  JudgeEndpointConfig judge;
  bool use_judge = false;
  std::vector<DatasetSpec> datasets;
  StatsConfig stats;
  std::string out = "out";
  std::size_t jobs = 1;
  std::size_t max_tokens = 32768;

  void validate() const {
    segmenter.validate();
    heuristic.validate();
    loop.validate();
    suppression.validate();
    if (stats.bins < 2) throw ConfigError("stats.bins must be >= 2");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    std::set<std::string> tags;
    for (const auto& d : datasets) {
      if (d.tag.empty() || d.path.empty()) throw ConfigError("datasets: tag and path are required");
      if (d.n_per_question < 1) throw ConfigError("datasets: n_per_question must be >= 1");
      if (!tags.insert(d.tag).second) throw ConfigError("datasets: duplicate tag " + d.tag);
    }
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == k;
    if (!ok) throw ConfigError("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& dst, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    dst = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + where + key + "': " + e.what());
  }
}

/// Underthink window length: a non-negative integer, or "inf" for no limit.
inline std::optional<std::size_t> parse_beta(const std::string& raw) {
  const auto s = text::to_lower_ascii(text::trim(raw));
  if (s == "inf" || s == "infinite" || s == "infinity") return std::nullopt;
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("underthink.beta: expected a non-negative integer or \"inf\", got '" + raw + "'");
  return std::stoull(s);
}

inline std::optional<std::size_t> parse_beta(const nlohmann::json& v) {
  if (v.is_string()) return parse_beta(v.get<std::string>());
  if (v.is_null()) return std::nullopt;
  if (!v.is_number_unsigned()) throw ConfigError("underthink.beta: expected a non-negative integer or \"inf\"");
  return v.get<std::size_t>();
}

inline void read_endpoint(const nlohmann::json& j, HttpEndpoint& ep, const std::string& where) {
  read_opt(j, "url", ep.url, where);
  read_opt(j, "model", ep.model, where);
  read_opt(j, "api_key_env", ep.api_key_env, where);
  read_opt(j, "timeout_s", ep.timeout_s, where);
  read_opt(j, "retries", ep.retries, where);
  read_opt(j, "backoff_s", ep.backoff_s, where);
  read_opt(j, "min_interval_s", ep.min_interval_s, where);
}

inline nlohmann::ordered_json endpoint_json(const HttpEndpoint& ep) {
  return {{"url", ep.url},           {"model", ep.model},         {"api_key_env", ep.api_key_env},
          {"timeout_s", ep.timeout_s}, {"retries", ep.retries},     {"backoff_s", ep.backoff_s},
          {"min_interval_s", ep.min_interval_s}};
}

}  // namespace detail

inline std::set<std::string> parse_token_list(const std::string& csv) {
  std::set<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.insert(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.insert(cur);
  if (out.empty()) throw ConfigError("token list is empty");
  return out;
}

inline GlobalConfig config_from_json(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read_opt;
  GlobalConfig c;
  check_keys(j, "", {"tokens", "threshold", "mode", "underthink", "rollout_p", "seed", "segmenter", "heuristic", "loop",
                     "endpoint", "judge", "datasets", "stats", "out", "jobs", "max_tokens"});
  auto& s = c.suppression;
  if (auto it = j.find("tokens"); it != j.end()) {
    if (it->is_string()) {
      const auto name = it->get<std::string>();
      if (name == "default") s.target_tokens = default_target_tokens();
      else if (name == "extended") s.target_tokens = extended_target_tokens();
      else s.target_tokens = parse_token_list(name);
    } else {
      s.target_tokens.clear();
      for (const auto& t : *it) s.target_tokens.insert(t.get<std::string>());
    }
  }
  read_opt(j, "threshold", s.threshold, "");
  if (auto it = j.find("mode"); it != j.end()) s.mode = parse_mode(it->get<std::string>());
  if (auto it = j.find("underthink"); it != j.end() && !it->is_null()) {
    check_keys(*it, "underthink", {"alpha", "beta"});
    UnderthinkConfig u;
    read_opt(*it, "alpha", u.alpha, "underthink.");
    if (auto b = it->find("beta"); b != it->end()) u.beta = detail::parse_beta(*b);
    s.underthink = u;
  }
  read_opt(j, "rollout_p", s.rollout_probability, "");
  read_opt(j, "seed", s.seed, "");

  if (auto it = j.find("segmenter"); it != j.end()) {
    check_keys(*it, "segmenter", {"step_delimiter", "merge_pairs", "sentence_terminators"});
    read_opt(*it, "step_delimiter", c.segmenter.step_delimiter, "segmenter.");
    read_opt(*it, "merge_pairs", c.segmenter.merge_pairs, "segmenter.");
    read_opt(*it, "sentence_terminators", c.segmenter.sentence_terminators, "segmenter.");
  }
  if (auto it = j.find("heuristic"); it != j.end()) {
    check_keys(*it, "heuristic", {"reflection_cues", "affirmation_cues"});
    read_opt(*it, "reflection_cues", c.heuristic.reflection_cues, "heuristic.");
    read_opt(*it, "affirmation_cues", c.heuristic.affirmation_cues, "heuristic.");
  }
  if (auto it = j.find("loop"); it != j.end()) {
    check_keys(*it, "loop", {"max_period", "min_reps", "sim_threshold"});
    read_opt(*it, "max_period", c.loop.max_period, "loop.");
    read_opt(*it, "min_reps", c.loop.min_reps, "loop.");
    read_opt(*it, "sim_threshold", c.loop.sim_threshold, "loop.");
  }
  if (auto it = j.find("endpoint"); it != j.end()) {
    check_keys(*it, "endpoint", {"url", "model", "api_key_env", "timeout_s", "retries", "backoff_s", "min_interval_s",
                                 "top_logprobs", "chunk_tokens", "bias_token_ids", "ban_bias", "temperature", "top_p",
                                 "extra"});
    auto& g = c.generator;
    detail::read_endpoint(*it, g.endpoint, "endpoint.");
    read_opt(*it, "top_logprobs", g.top_logprobs, "endpoint.");
    read_opt(*it, "chunk_tokens", g.chunk_tokens, "endpoint.");
    read_opt(*it, "bias_token_ids", g.bias_token_ids, "endpoint.");
    read_opt(*it, "ban_bias", g.ban_bias, "endpoint.");
    if (it->contains("temperature")) g.temperature = it->at("temperature").get<double>();
    if (it->contains("top_p")) g.top_p = it->at("top_p").get<double>();
    if (it->contains("extra")) g.extra = it->at("extra");
  }
  if (auto it = j.find("judge"); it != j.end()) {
    check_keys(*it, "judge", {"enabled", "url", "model", "api_key_env", "timeout_s", "retries", "backoff_s",
                              "min_interval_s", "concurrency", "temperature", "max_tokens"});
    read_opt(*it, "enabled", c.use_judge, "judge.");
    detail::read_endpoint(*it, c.judge.endpoint, "judge.");
    read_opt(*it, "concurrency", c.judge.concurrency, "judge.");
    read_opt(*it, "temperature", c.judge.temperature, "judge.");
    read_opt(*it, "max_tokens", c.judge.max_tokens, "judge.");
  }
  if (auto it = j.find("datasets"); it != j.end()) {
    for (const auto& d : *it) {
      check_keys(d, "datasets[]", {"tag", "path", "n_per_question"});
      DatasetSpec spec;
      read_opt(d, "tag", spec.tag, "datasets[].");
      read_opt(d, "path", spec.path, "datasets[].");
      read_opt(d, "n_per_question", spec.n_per_question, "datasets[].");
      c.datasets.push_back(std::move(spec));
    }
  }
  if (auto it = j.find("stats"); it != j.end()) {
    check_keys(*it, "stats", {"bins", "top_n", "density_tokens"});
    read_opt(*it, "bins", c.stats.bins, "stats.");
    read_opt(*it, "top_n", c.stats.top_n, "stats.");
    read_opt(*it, "density_tokens", c.stats.density_tokens, "stats.");
  }
  read_opt(j, "out", c.out, "");
  read_opt(j, "jobs", c.jobs, "");
  read_opt(j, "max_tokens", c.max_tokens, "");
  c.validate();
  return c;
}

inline GlobalConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open config " + path);
  try {
    return config_from_json(nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const nlohmann::json::type_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Effective configuration as JSON (round-trips through config_from_json).
inline nlohmann::ordered_json config_to_json(const GlobalConfig& c) {
  nlohmann::ordered_json j;
  const auto& s = c.suppression;
  j["tokens"] = std::vector<std::string>(s.target_tokens.begin(), s.target_tokens.end());
  j["threshold"] = s.threshold;
  j["mode"] = mode_name(s.mode);
  if (s.underthink) {
    j["underthink"]["alpha"] = s.underthink->alpha;
    if (s.underthink->beta) j["underthink"]["beta"] = *s.underthink->beta;
    else j["underthink"]["beta"] = "inf";
  } else {
    j["underthink"] = nullptr;
  }
  j["rollout_p"] = s.rollout_probability;
  j["seed"] = s.seed;
  j["segmenter"] = {{"step_delimiter", c.segmenter.step_delimiter},
                    {"merge_pairs", c.segmenter.merge_pairs},
                    {"sentence_terminators", c.segmenter.sentence_terminators}};
  j["heuristic"] = {{"reflection_cues", c.heuristic.reflection_cues}, {"affirmation_cues", c.heuristic.affirmation_cues}};
  j["loop"] = {{"max_period", c.loop.max_period}, {"min_reps", c.loop.min_reps}, {"sim_threshold", c.loop.sim_threshold}};
  auto ep = detail::endpoint_json(c.generator.endpoint);
  ep["top_logprobs"] = c.generator.top_logprobs;
  ep["chunk_tokens"] = c.generator.chunk_tokens;
  ep["bias_token_ids"] = c.generator.bias_token_ids;
  ep["ban_bias"] = c.generator.ban_bias;
  if (c.generator.temperature) ep["temperature"] = *c.generator.temperature;
  if (c.generator.top_p) ep["top_p"] = *c.generator.top_p;
  ep["extra"] = c.generator.extra;
  j["endpoint"] = ep;
  auto judge = detail::endpoint_json(c.judge.endpoint);
  judge["enabled"] = c.use_judge;
  judge["concurrency"] = c.judge.concurrency;
  judge["temperature"] = c.judge.temperature;
  judge["max_tokens"] = c.judge.max_tokens;
  j["judge"] = judge;
  j["datasets"] = nlohmann::ordered_json::array();
  for (const auto& d : c.datasets)
    j["datasets"].push_back({{"tag", d.tag}, {"path", d.path}, {"n_per_question", d.n_per_question}});
  j["stats"] = {{"bins", c.stats.bins}, {"top_n", c.stats.top_n}, {"density_tokens", c.stats.density_tokens}};
  j["out"] = c.out;
  j["jobs"] = c.jobs;
  j["max_tokens"] = c.max_tokens;
  return j;
}

/// "# "-prefixed header lines carrying the effective config (for CSV and text outputs).
inline std::string config_header(const GlobalConfig& c, std::string_view command) {
  std::string out = "# leadtok " + std::string(command) + "\n";
  out += "# config: " + config_to_json(c).dump() + "\n";
  return out;
}

}  // namespace leadtok
