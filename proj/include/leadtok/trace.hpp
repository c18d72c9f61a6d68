#pragma once

/**
 * Canonical trace types and the trace JSONL format.
 *
 * One line per generation:
 *   {"id": str, "prompt": str, "gold_answer": str|null, "meta": {str: str},
 *    "tokens": [{"i": int, "t": str, "lp": float, "top": [[str, float], ...]}]}
 *
 * Log-probabilities are stored as emitted by completion APIs; exp() happens
 * at use sites. The writer emits fields in exactly the order above, and
 * doubles in shortest round-trip form, so write(parse(write(x))) is
 * byte-identical to write(x).
 */

#include "leadtok/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace leadtok {

struct Alternative {
  std::string text;
  double logprob = 0.0;

  bool operator==(const Alternative&) const = default;
};

struct TokenEvent {
  std::size_t index = 0;
  std::string text;
  double logprob = 0.0;
  std::vector<Alternative> top_alternatives;

  double probability() const { return std::exp(logprob); }
  bool operator==(const TokenEvent&) const = default;
};

struct TraceRecord {
  std::string id;
  std::string prompt;
  std::vector<TokenEvent> tokens;
  std::optional<std::string> gold_answer;
  std::map<std::string, std::string> meta;

  bool operator==(const TraceRecord&) const = default;
};

/// Concatenation of all token texts: the generated text.
inline std::string generated_text(const TraceRecord& trace) {
  std::string out;
  for (const auto& tok : trace.tokens) out += tok.text;
  return out;
}

struct CharSpan {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive
  bool operator==(const CharSpan&) const = default;
};

struct TokenSpan {
  std::size_t first = 0;  // inclusive
  std::size_t last = 0;   // inclusive
  bool operator==(const TokenSpan&) const = default;
};

struct LeadingWord {
  std::string surface;
  double probability = 0.0;
  // Token carrying the first character of the word, and its trimmed text.
  std::size_t token_index = 0;
  std::string first_token;

  bool operator==(const LeadingWord&) const = default;
};

struct Step {
  std::size_t ordinal = 0;
  std::string text;
  CharSpan char_span;
  std::optional<TokenSpan> token_span;
  std::optional<LeadingWord> leading_word;

  bool operator==(const Step&) const = default;
};

enum class ReflectionClass { SelfAffirmation, OtherReflection, NonReflective };
enum class LabelSource { Heuristic, Judge, Manual };

struct ReflectionLabel {
  ReflectionClass cls = ReflectionClass::NonReflective;
  LabelSource source = LabelSource::Heuristic;
  bool operator==(const ReflectionLabel&) const = default;
};

inline constexpr ReflectionClass kAllClasses[] = {ReflectionClass::SelfAffirmation,
                                                  ReflectionClass::OtherReflection,
                                                  ReflectionClass::NonReflective};

inline std::string_view class_code(ReflectionClass c) {
  switch (c) {
    case ReflectionClass::SelfAffirmation: return "SA";
    case ReflectionClass::OtherReflection: return "OR";
    case ReflectionClass::NonReflective: return "NR";
  }
  return "NR";
}

inline std::optional<ReflectionClass> parse_class_code(std::string_view code) {
  if (code == "SA") return ReflectionClass::SelfAffirmation;
  if (code == "OR") return ReflectionClass::OtherReflection;
  if (code == "NR") return ReflectionClass::NonReflective;
  return std::nullopt;
}

inline std::string_view source_name(LabelSource s) {
  switch (s) {
    case LabelSource::Heuristic: return "heuristic";
    case LabelSource::Judge: return "judge";
    case LabelSource::Manual: return "manual";
  }
  return "heuristic";
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace detail {

constexpr double kTopMassSlack = 1e-6;

/// Returns the name of the first violated field, or empty when valid.
inline std::string first_violation(const TokenEvent& ev, std::size_t expected_index, std::string* why) {
  if (ev.index != expected_index) {
    *why = "index " + std::to_string(ev.index) + " breaks contiguity (expected " +
           std::to_string(expected_index) + ")";
    return "i";
  }
  if (!std::isfinite(ev.logprob) || ev.logprob > 0.0) {
    *why = "logprob must be finite and <= 0";
    return "lp";
  }
  if (ev.top_alternatives.empty()) {
    *why = "at least one alternative required";
    return "top";
  }
  double mass = 0.0;
  bool has_sampled = false;
  for (std::size_t j = 0; j < ev.top_alternatives.size(); ++j) {
    const auto& alt = ev.top_alternatives[j];
    if (!std::isfinite(alt.logprob) || alt.logprob > 0.0) {
      *why = "alternative logprob must be finite and <= 0";
      return "top";
    }
    if (j > 0 && alt.logprob > ev.top_alternatives[j - 1].logprob) {
      *why = "alternatives not sorted by logprob descending";
      return "top";
    }
    has_sampled = has_sampled || alt.text == ev.text;
    mass += std::exp(alt.logprob);
  }
  if (!has_sampled) {
    *why = "sampled token missing from alternatives";
    return "top";
  }
  if (mass > 1.0 + kTopMassSlack) {
    *why = "alternative probabilities sum above 1";
    return "top";
  }
  return {};
}

}  // namespace detail

/// Throws SchemaViolation (line_no 0 unless given) when invariants fail.
inline void validate_trace(const TraceRecord& rec, std::size_t line_no = 0) {
  if (rec.id.empty()) throw SchemaViolation(line_no, "id", "must be non-empty");
  for (std::size_t i = 0; i < rec.tokens.size(); ++i) {
    std::string why;
    auto field = detail::first_violation(rec.tokens[i], i, &why);
    if (!field.empty()) throw SchemaViolation(line_no, "tokens[" + std::to_string(i) + "]." + field, why);
  }
}

// ---------------------------------------------------------------------------
// JSON mapping
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json trace_to_json(const TraceRecord& rec) {
  nlohmann::ordered_json j;
  j["id"] = rec.id;
  j["prompt"] = rec.prompt;
  j["gold_answer"] = rec.gold_answer ? nlohmann::ordered_json(*rec.gold_answer) : nlohmann::ordered_json(nullptr);
  j["meta"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : rec.meta) j["meta"][k] = v;
  auto tokens = nlohmann::ordered_json::array();
  for (const auto& ev : rec.tokens) {
    nlohmann::ordered_json t;
    t["i"] = ev.index;
    t["t"] = ev.text;
    t["lp"] = ev.logprob;
    auto top = nlohmann::ordered_json::array();
    for (const auto& alt : ev.top_alternatives) top.push_back(nlohmann::ordered_json::array({alt.text, alt.logprob}));
    t["top"] = std::move(top);
    tokens.push_back(std::move(t));
  }
  j["tokens"] = std::move(tokens);
  return j;
}

namespace detail {

template <class Json>
const Json& require(const Json& obj, const char* key, std::size_t line_no, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaViolation(line_no, path + key, "missing");
  return *it;
}

template <class Json>
std::string require_string(const Json& obj, const char* key, std::size_t line_no, const std::string& path = "") {
  const auto& v = require(obj, key, line_no, path);
  if (!v.is_string()) throw SchemaViolation(line_no, path + key, "must be a string");
  return v.template get<std::string>();
}

template <class Json>
double require_number(const Json& v, std::size_t line_no, const std::string& field) {
  if (!v.is_number()) throw SchemaViolation(line_no, field, "must be a number");
  return v.template get<double>();
}

}  // namespace detail

inline TraceRecord trace_from_json(const nlohmann::json& j, std::size_t line_no) {
  if (!j.is_object()) throw SchemaViolation(line_no, "<record>", "must be a JSON object");
  TraceRecord rec;
  rec.id = detail::require_string(j, "id", line_no);
  rec.prompt = detail::require_string(j, "prompt", line_no);
  if (auto it = j.find("gold_answer"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw SchemaViolation(line_no, "gold_answer", "must be a string or null");
    rec.gold_answer = it->get<std::string>();
  }
  if (auto it = j.find("meta"); it != j.end()) {
    if (!it->is_object()) throw SchemaViolation(line_no, "meta", "must be an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) throw SchemaViolation(line_no, "meta." + k, "must be a string");
      rec.meta[k] = v.get<std::string>();
    }
  }
  const auto& tokens = detail::require(j, "tokens", line_no, "");
  if (!tokens.is_array()) throw SchemaViolation(line_no, "tokens", "must be an array");
  rec.tokens.reserve(tokens.size());
  for (std::size_t n = 0; n < tokens.size(); ++n) {
    const auto& t = tokens[n];
    const std::string path = "tokens[" + std::to_string(n) + "].";
    if (!t.is_object()) throw SchemaViolation(line_no, "tokens[" + std::to_string(n) + "]", "must be an object");
    TokenEvent ev;
    const auto& idx = detail::require(t, "i", line_no, path);
    if (!idx.is_number_integer() || idx.get<long long>() < 0)
      throw SchemaViolation(line_no, path + "i", "must be a non-negative integer");
    ev.index = idx.get<std::size_t>();
    ev.text = detail::require_string(t, "t", line_no, path);
    ev.logprob = detail::require_number(detail::require(t, "lp", line_no, path), line_no, path + "lp");
    const auto& top = detail::require(t, "top", line_no, path);
    if (!top.is_array()) throw SchemaViolation(line_no, path + "top", "must be an array");
    for (const auto& pair : top) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string())
        throw SchemaViolation(line_no, path + "top", "entries must be [str, float]");
      ev.top_alternatives.push_back({pair[0].get<std::string>(), detail::require_number(pair[1], line_no, path + "top")});
    }
    rec.tokens.push_back(std::move(ev));
  }
  validate_trace(rec, line_no);
  return rec;
}

// ---------------------------------------------------------------------------
// JSONL I/O
// ---------------------------------------------------------------------------

/// Calls fn(line_no, json) for every non-empty line; line numbers are 1-based.
template <class Fn>
void for_each_jsonl(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw MalformedLine(line_no, e.what());
    }
    fn(line_no, j);
  }
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path);
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot write " + path);
  return out;
}

inline std::vector<TraceRecord> parse_trace_jsonl(std::istream& in) {
  std::vector<TraceRecord> out;
  for_each_jsonl(in, [&](std::size_t line_no, const nlohmann::json& j) { out.push_back(trace_from_json(j, line_no)); });
  return out;
}

inline std::vector<TraceRecord> parse_trace_jsonl(const std::string& path) {
  auto in = open_input(path);
  return parse_trace_jsonl(in);
}

inline std::string trace_to_line(const TraceRecord& rec) { return trace_to_json(rec).dump(); }

inline void write_trace_jsonl(std::span<const TraceRecord> records, std::ostream& out) {
  for (const auto& rec : records) out << trace_to_line(rec) << '\n';
}

inline void write_trace_jsonl(std::span<const TraceRecord> records, const std::string& path) {
  for (const auto& rec : records) validate_trace(rec);
  auto out = open_output(path);
  write_trace_jsonl(records, out);
  if (!out) throw IoFailure("write failed: " + path);
}

}  // namespace leadtok
