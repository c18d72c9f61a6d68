#pragma once

/**
 * Step classification into self-affirmation reflection (SA), other
 * reflection (OR) and non-reflective (NR).
 *
 * Two routes:
 *  - classify_heuristic: cue-word rules, pure and fast.
 *  - classify_judge / classify_trace_with_judge: a two-stage protocol against an
 *    external chat model. Stage one asks whether the step is reflective; only
 *    a "Yes" triggers stage two, which asks whether the reflection affirms the
 *    preceding content.
 */

#include "leadtok/error.hpp"
#include "leadtok/http.hpp"
#include "leadtok/parallel.hpp"
#include "leadtok/segmenter.hpp"
#include "leadtok/trace.hpp"

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace leadtok {

struct HeuristicRules {
  std::vector<std::string> reflection_cues = {"wait",          "but wait",           "alternatively",
                                              "hmm",           "let me double-check", "let me verify"};
  std::vector<std::string> affirmation_cues = {"that's correct", "which matches", "is correct",
                                               "confirms",       "same answer",   "as before"};

  void validate() const {
    if (reflection_cues.empty() || affirmation_cues.empty())
      throw ConfigError("heuristic: cue lists must be non-empty");
  }
};

namespace detail {

// Lower-cases ASCII and folds the typographic apostrophe so "that’s" matches "that's".
inline std::string fold_for_cues(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.compare(i, 3, "’") == 0) {
      out.push_back('\'');
      i += 2;
      continue;
    }
    char c = s[i];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    out.push_back(c);
  }
  return out;
}

inline bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

}  // namespace detail

/// True when the step starts (after whitespace/punctuation) with a reflection cue.
inline bool begins_with_reflection_cue(std::string_view step_text, const HeuristicRules& rules) {
  const std::string folded = detail::fold_for_cues(step_text.substr(text::skip_to_word(step_text)));
  for (const auto& cue : rules.reflection_cues) {
    const std::string c = detail::fold_for_cues(cue);
    if (folded.compare(0, c.size(), c) != 0) continue;
    if (folded.size() == c.size() || !detail::is_word_char(folded[c.size()])) return true;
  }
  return false;
}

inline ReflectionLabel classify_heuristic(std::string_view step_text, const HeuristicRules& rules = {}) {
  ReflectionLabel label{ReflectionClass::NonReflective, LabelSource::Heuristic};
  if (!begins_with_reflection_cue(step_text, rules)) return label;
  const std::string folded = detail::fold_for_cues(step_text);
  label.cls = ReflectionClass::OtherReflection;
  for (const auto& cue : rules.affirmation_cues) {
    if (folded.find(detail::fold_for_cues(cue)) != std::string::npos) {
      label.cls = ReflectionClass::SelfAffirmation;
      break;
    }
  }
  return label;
}

inline ReflectionLabel classify_heuristic(const Step& step, const HeuristicRules& rules = {}) {
  return classify_heuristic(std::string_view(step.text), rules);
}

// ---------------------------------------------------------------------------
// Judge protocol
// ---------------------------------------------------------------------------

enum class JudgeTemplate { FirstJudgment, SecondJudgment };

struct JudgeRequest {
  JudgeTemplate template_id = JudgeTemplate::FirstJudgment;
  std::string filled_prompt;
  std::size_t step_ordinal = 0;
};

inline constexpr std::string_view kFirstJudgmentTemplate =
    "Current step: {str1}\n"
    "\n"
    "Please help me determine the function of the current step.\n"
    "\n"
    "Is the current step a reflective behavior?\n"
    "\n"
    "Output the answer directly to <answer></answer>, for example, <answer>Yes</answer> or <answer>No</answer>.";

inline constexpr std::string_view kSecondJudgmentTemplate =
    "The previous steps: {str1}\n"
    "\n"
    "The initial step of reflection: {str2}\n"
    "\n"
    "The subsequent steps of reflection: {str3}\n"
    "\n"
    "Please help me judge the role of the reflection steps. Is the result of the reflection affirms the previous "
    "content? Output your answer directly to <answer></answer>, for example, <answer>Yes</answer> or "
    "<answer>No</answer>.";

namespace detail {

// Single left-to-right pass so placeholder text inside a step is never re-expanded.
inline std::string fill_template(std::string_view tmpl, std::span<const std::pair<std::string_view, std::string_view>> subs) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    for (const auto& [key, value] : subs) {
      if (tmpl.substr(i, key.size()) == key) {
        out.append(value);
        i += key.size();
        replaced = true;
        break;
      }
    }
    if (!replaced) out.push_back(tmpl[i++]);
  }
  return out;
}

inline std::string join_steps(std::span<const Step> steps, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i) out.append(sep);
    out.append(steps[i].text);
  }
  return out;
}

}  // namespace detail

/**
 * Fills both judge templates for `step`. `prior` are all steps before it;
 * `following` are the steps after it up to (not including) the next
 * reflective step. Step lists are joined with the step delimiter.
 */
inline std::pair<JudgeRequest, JudgeRequest> build_judge_prompts(const Step& step, std::span<const Step> prior,
                                                                 std::span<const Step> following,
                                                                 std::string_view joiner = "\n\n") {
  JudgeRequest first{JudgeTemplate::FirstJudgment, {}, step.ordinal};
  const std::pair<std::string_view, std::string_view> s1[] = {{"{str1}", step.text}};
  first.filled_prompt = detail::fill_template(kFirstJudgmentTemplate, s1);

  const std::string prev = detail::join_steps(prior, joiner);
  const std::string next = detail::join_steps(following, joiner);
  JudgeRequest second{JudgeTemplate::SecondJudgment, {}, step.ordinal};
  const std::pair<std::string_view, std::string_view> s2[] = {
      {"{str1}", prev}, {"{str2}", step.text}, {"{str3}", next}};
  second.filled_prompt = detail::fill_template(kSecondJudgmentTemplate, s2);
  return {std::move(first), std::move(second)};
}

/// Extracts the yes/no verdict from the first <answer>...</answer> span.
inline bool parse_judge_answer(const std::string& raw) {
  constexpr std::string_view open = "<answer>", close = "</answer>";
  const auto b = raw.find(open);
  if (b == std::string::npos) throw JudgeUnparseable(raw);
  const auto e = raw.find(close, b + open.size());
  if (e == std::string::npos) throw JudgeUnparseable(raw);
  const std::string verdict = text::to_lower_ascii(text::trim(std::string_view(raw).substr(b + open.size(), e - b - open.size())));
  if (verdict == "yes") return true;
  if (verdict == "no") return false;
  throw JudgeUnparseable(raw);
}

/// A judge model reachable by a single user message. Implementations throw
/// JudgeUnavailable when the transport fails after retries.
class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual std::string complete(const std::string& user_message) = 0;
};

struct JudgeEndpointConfig {
  HttpEndpoint endpoint;
  std::size_t concurrency = 4;
  double temperature = 0.0;
  int max_tokens = 64;
};

/// Chat-completions judge: one user message in, choices[0].message.content out.
class HttpJudgeClient final : public JudgeClient {
 public:
  explicit HttpJudgeClient(JudgeEndpointConfig cfg) : cfg_(std::move(cfg)), http_(cfg_.endpoint) {}

  std::string complete(const std::string& user_message) override {
    nlohmann::json body = {
        {"model", cfg_.endpoint.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", user_message}}})},
        {"temperature", cfg_.temperature},
        {"max_tokens", cfg_.max_tokens},
    };
    nlohmann::json reply;
    try {
      reply = http_.post(body);
    } catch (const TransportError& e) {
      throw JudgeUnavailable(e.what());
    }
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw JudgeUnparseable(reply.dump());
    }
  }

 private:
  JudgeEndpointConfig cfg_;
  JsonHttpClient http_;
};

struct JudgeContext {
  std::span<const Step> prior;
  std::span<const Step> following;
};

/// Two-stage classification of one step; stage two runs only after a "Yes".
inline ReflectionLabel classify_judge(const Step& step, const JudgeContext& ctx, JudgeClient& client) {
  auto [first, second] = build_judge_prompts(step, ctx.prior, ctx.following);
  ReflectionLabel label{ReflectionClass::NonReflective, LabelSource::Judge};
  if (!parse_judge_answer(client.complete(first.filled_prompt))) return label;
  label.cls = parse_judge_answer(client.complete(second.filled_prompt)) ? ReflectionClass::SelfAffirmation
                                                                        : ReflectionClass::OtherReflection;
  return label;
}

struct JudgedStep {
  ReflectionLabel label;
  // Set when the next step is also reflective, so the reflection has no
  // subsequent steps to show the judge.
  bool adjacent_reflection = false;
};

/**
 * Classifies every step of a trace. Stage one runs for all steps (up to
 * `concurrency` in flight); the "subsequent steps" of a reflection are the
 * steps after it up to the next stage-one reflective step. Stage two then
 * runs for the reflective steps only.
 */
inline std::vector<JudgedStep> classify_trace_with_judge(std::span<const Step> steps, JudgeClient& client,
                                                         std::size_t concurrency = 4) {
  const std::size_t n = steps.size();
  std::vector<char> reflective(n, 0);
  parallel_for(n, concurrency, [&](std::size_t i) {
    auto [first, _] = build_judge_prompts(steps[i], {}, {});
    reflective[i] = parse_judge_answer(client.complete(first.filled_prompt)) ? 1 : 0;
  });

  std::vector<JudgedStep> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i].label = {ReflectionClass::NonReflective, LabelSource::Judge};
  parallel_for(n, concurrency, [&](std::size_t i) {
    if (!reflective[i]) return;
    std::size_t end = i + 1;
    while (end < n && !reflective[end]) ++end;
    out[i].adjacent_reflection = end == i + 1 && end < n;
    auto [_, second] = build_judge_prompts(steps[i], steps.subspan(0, i), steps.subspan(i + 1, end - i - 1));
    out[i].label.cls = parse_judge_answer(client.complete(second.filled_prompt)) ? ReflectionClass::SelfAffirmation
                                                                                  : ReflectionClass::OtherReflection;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Manual annotations and agreement
// ---------------------------------------------------------------------------

using LabelKey = std::pair<std::string, std::size_t>;  // (trace id, step ordinal)
using LabelMap = std::map<LabelKey, ReflectionClass>;

inline LabelMap parse_annotations_jsonl(std::istream& in) {
  LabelMap out;
  for_each_jsonl(in, [&](std::size_t line_no, const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaViolation(line_no, "<record>", "must be a JSON object");
    auto id = detail::require_string(j, "trace_id", line_no);
    const auto& step = detail::require(j, "step", line_no, "");
    if (!step.is_number_integer() || step.get<long long>() < 0)
      throw SchemaViolation(line_no, "step", "must be a non-negative integer");
    auto cls = parse_class_code(detail::require_string(j, "class", line_no));
    if (!cls) throw SchemaViolation(line_no, "class", "must be SA, OR or NR");
    LabelKey key{std::move(id), step.get<std::size_t>()};
    if (out.count(key)) throw SchemaViolation(line_no, "step", "duplicate (trace_id, step)");
    out.emplace(std::move(key), *cls);
  });
  return out;
}

inline LabelMap parse_annotations_jsonl(const std::string& path) {
  auto in = open_input(path);
  return parse_annotations_jsonl(in);
}

inline void write_annotations_jsonl(const LabelMap& labels, std::ostream& out) {
  for (const auto& [key, cls] : labels) {
    nlohmann::ordered_json j;
    j["trace_id"] = key.first;
    j["step"] = key.second;
    j["class"] = class_code(cls);
    out << j.dump() << '\n';
  }
}

inline std::size_t class_index(ReflectionClass c) { return static_cast<std::size_t>(c); }

struct AgreementReport {
  double accuracy = 0.0;
  std::size_t total = 0;
  std::size_t matched = 0;
  // confusion[gold][predicted], indexed by class_index.
  std::array<std::array<std::size_t, 3>, 3> confusion{};
};

inline AgreementReport evaluate_against_manual(const LabelMap& predicted, const LabelMap& gold) {
  if (predicted.size() != gold.size()) throw KeyMismatch("label sets cover different (trace, step) keys");
  AgreementReport r;
  for (const auto& [key, g] : gold) {
    auto it = predicted.find(key);
    if (it == predicted.end())
      throw KeyMismatch("no prediction for trace " + key.first + " step " + std::to_string(key.second));
    ++r.confusion[class_index(g)][class_index(it->second)];
    if (g == it->second) ++r.matched;
  }
  r.total = gold.size();
  r.accuracy = r.total ? static_cast<double>(r.matched) / static_cast<double>(r.total) : 1.0;
  return r;
}

}  // namespace leadtok
