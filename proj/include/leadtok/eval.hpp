#pragma once

/**
 * Evaluation harness: dataset ingestion, answer extraction and scoring,
 * Acc/LEN metrics, per-question longer-response ratio and the comparison
 * report (Acc up / LEN down per dataset, plus averages with deltas).
 *
 * Scoring is exact match after normalization; there is no symbolic
 * equivalence checking. LEN counts generated tokens as reported by the
 * backend.
 */

#include "leadtok/error.hpp"
#include "leadtok/segmenter.hpp"
#include "leadtok/trace.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace leadtok {

struct Problem {
  std::string id;
  std::string question;
  std::string gold_answer;
  std::string dataset;
  bool operator==(const Problem&) const = default;
};

inline std::vector<Problem> load_dataset(std::istream& in, const std::string& dataset_tag) {
  std::vector<Problem> out;
  std::set<std::string> seen;
  for_each_jsonl(in, [&](std::size_t line_no, const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaViolation(line_no, "<record>", "must be a JSON object");
    Problem p;
    p.id = detail::require_string(j, "id", line_no);
    p.question = detail::require_string(j, "question", line_no);
    const auto& answer = detail::require(j, "answer", line_no, "");
    if (answer.is_number()) p.gold_answer = answer.dump();
    else p.gold_answer = detail::require_string(j, "answer", line_no);
    if (p.id.empty()) throw SchemaViolation(line_no, "id", "must be non-empty");
    if (p.gold_answer.empty()) throw SchemaViolation(line_no, "answer", "must be non-empty");
    if (!seen.insert(p.id).second) throw DuplicateId(p.id);
    p.dataset = dataset_tag;
    out.push_back(std::move(p));
  });
  return out;
}

inline std::vector<Problem> load_dataset(const std::string& path, const std::string& dataset_tag) {
  auto in = open_input(path);
  return load_dataset(in, dataset_tag);
}

inline void write_dataset(std::span<const Problem> problems, std::ostream& out) {
  for (const auto& p : problems) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["question"] = p.question;
    j["answer"] = p.gold_answer;
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Answer extraction
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

inline std::string collapse_ws(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

/// Parses [+-]?digits(,ddd)*(.digits)? exactly; returns canonical decimal text.
inline std::optional<std::string> canonical_decimal(std::string_view s) {
  std::size_t i = 0;
  bool neg = false;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) neg = s[i++] == '-';
  std::string int_part, frac_part;
  bool any = false;
  while (i < s.size() && (is_digit(s[i]) || s[i] == ',')) {
    if (s[i] == ',') {
      // Thousands separator must be followed by exactly three digits.
      if (int_part.empty() || i + 3 >= s.size() + 0 || !is_digit(s[i + 1])) return std::nullopt;
      std::size_t k = i + 1;
      while (k < s.size() && is_digit(s[k])) ++k;
      if (k - i - 1 != 3) return std::nullopt;
    } else {
      int_part.push_back(s[i]);
      any = true;
    }
    ++i;
  }
  if (i < s.size() && s[i] == '.') {
    ++i;
    while (i < s.size() && is_digit(s[i])) {
      frac_part.push_back(s[i++]);
      any = true;
    }
  }
  if (!any || i != s.size()) return std::nullopt;
  int_part.erase(0, std::min(int_part.find_first_not_of('0'), int_part.size()));
  while (!frac_part.empty() && frac_part.back() == '0') frac_part.pop_back();
  if (int_part.empty()) int_part = "0";
  std::string out = int_part;
  if (!frac_part.empty()) out += "." + frac_part;
  if (neg && out != "0") out = "-" + out;
  return out;
}

inline unsigned long long gcd_ull(unsigned long long a, unsigned long long b) {
  while (b) {
    a %= b;
    std::swap(a, b);
  }
  return a;
}

/// "a/b" with integer a, b (b != 0) in lowest terms; integral results collapse to "n".
inline std::optional<std::string> canonical_fraction(std::string_view s) {
  const auto slash = s.find('/');
  if (slash == std::string_view::npos || s.find('/', slash + 1) != std::string_view::npos) return std::nullopt;
  auto num = canonical_decimal(text::trim(s.substr(0, slash)));
  auto den = canonical_decimal(text::trim(s.substr(slash + 1)));
  if (!num || !den || num->find('.') != std::string::npos || den->find('.') != std::string::npos) return std::nullopt;
  bool neg = false;
  std::string n = *num, d = *den;
  if (n[0] == '-') { neg = !neg; n.erase(0, 1); }
  if (d[0] == '-') { neg = !neg; d.erase(0, 1); }
  if (n.size() > 18 || d.size() > 18 || d == "0") return std::nullopt;
  unsigned long long a = std::stoull(n), b = std::stoull(d);
  const auto g = gcd_ull(a, b);
  if (g > 1) { a /= g; b /= g; }
  std::string out = std::to_string(a);
  if (b != 1) out += "/" + std::to_string(b);
  if (neg && a != 0) out = "-" + out;
  return out;
}

/// \frac{a}{b} / \dfrac{a}{b} / \tfrac{a}{b} -> a/b when it is the whole string.
inline std::optional<std::string> latex_fraction(std::string_view s) {
  for (std::string_view cmd : {"\\frac", "\\dfrac", "\\tfrac"}) {
    std::string_view rest = s;
    bool neg = false;
    if (!rest.empty() && rest[0] == '-') { neg = true; rest.remove_prefix(1); }
    if (rest.substr(0, cmd.size()) != cmd) continue;
    rest.remove_prefix(cmd.size());
    if (rest.size() < 4 || rest[0] != '{') return std::nullopt;
    const auto close1 = rest.find('}');
    if (close1 == std::string_view::npos || close1 + 1 >= rest.size() || rest[close1 + 1] != '{' || rest.back() != '}')
      return std::nullopt;
    auto a = rest.substr(1, close1 - 1);
    auto b = rest.substr(close1 + 2, rest.size() - close1 - 3);
    if (a.find_first_of("{}") != std::string_view::npos || b.find_first_of("{}") != std::string_view::npos)
      return std::nullopt;
    return std::string(neg ? "-" : "") + std::string(a) + "/" + std::string(b);
  }
  return std::nullopt;
}

}  // namespace detail

/// Trim, collapse whitespace, strip a trailing period and $...$, canonicalize numbers and simple fractions.
inline std::string normalize_answer(std::string_view raw) {
  std::string s = detail::collapse_ws(raw);
  while (!s.empty() && s.back() == '.') s.pop_back();
  if (s.size() >= 2 && s.front() == '$' && s.back() == '$') s = s.substr(1, s.size() - 2);
  s = detail::collapse_ws(s);
  if (auto f = detail::latex_fraction(s)) s = *f;
  if (auto d = detail::canonical_decimal(s)) return *d;
  if (auto f = detail::canonical_fraction(s)) return *f;
  return s;
}

/// Contents of the last balanced \boxed{...}, else the last standalone number.
inline std::string extract_answer(std::string_view text) {
  constexpr std::string_view tag = "\\boxed{";
  std::optional<std::string> boxed;
  for (std::size_t pos = text.find(tag); pos != std::string_view::npos; pos = text.find(tag, pos + 1)) {
    std::size_t depth = 1, i = pos + tag.size();
    for (; i < text.size() && depth > 0; ++i) {
      if (text[i] == '{') ++depth;
      else if (text[i] == '}') --depth;
    }
    if (depth == 0) boxed = std::string(text.substr(pos + tag.size(), i - 1 - pos - tag.size()));
  }
  if (boxed) return normalize_answer(*boxed);

  // Standalone number: digits with optional sign, thousands commas and decimals,
  // not glued to letters on either side.
  std::optional<std::string> last;
  std::size_t i = 0;
  auto is_alpha = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; };
  while (i < text.size()) {
    if (!detail::is_digit(text[i])) { ++i; continue; }
    std::size_t b = i;
    if (b > 0 && (text[b - 1] == '-' || text[b - 1] == '+') && (b < 2 || !detail::is_digit(text[b - 2]))) --b;
    const bool glued_left = b > 0 && (is_alpha(text[b - 1]) || text[b - 1] == '.');
    std::size_t e = i;
    while (e < text.size() && (detail::is_digit(text[e]) ||
                               ((text[e] == ',' || text[e] == '.') && e + 1 < text.size() && detail::is_digit(text[e + 1]))))
      ++e;
    const bool glued_right = e < text.size() && is_alpha(text[e]);
    if (!glued_left && !glued_right) last = std::string(text.substr(b, e - b));
    i = e;
  }
  if (!last) throw NoAnswerFound();
  return normalize_answer(*last);
}

inline bool answer_matches(std::string_view response, std::string_view gold) {
  try {
    return extract_answer(response) == normalize_answer(gold);
  } catch (const NoAnswerFound&) {
    return false;
  }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct QuestionMetrics {
  std::string id;
  double mean_length = 0.0;
  double correct_fraction = 0.0;
  std::size_t responses = 0;
  bool operator==(const QuestionMetrics&) const = default;
};

struct RunMetrics {
  std::string dataset;
  double accuracy = 0.0;     // fraction in [0,1]
  double mean_length = 0.0;  // tokens per response
  std::size_t n_responses = 0;
  std::size_t no_answer = 0;
  std::vector<QuestionMetrics> per_question;  // in problem order
};

struct ScoredResponse {
  std::string problem_id;
  std::string text;
  std::size_t token_count = 0;
};

inline RunMetrics score_run(std::span<const ScoredResponse> responses, std::span<const Problem> problems,
                            std::size_t n_per_question) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < problems.size(); ++i) index[problems[i].id] = i;
  struct Acc {
    std::size_t n = 0, correct = 0, tokens = 0;
  };
  std::vector<Acc> acc(problems.size());
  RunMetrics m;
  m.dataset = problems.empty() ? std::string{} : problems.front().dataset;
  for (const auto& r : responses) {
    auto it = index.find(r.problem_id);
    if (it == index.end()) throw KeyMismatch("response for unknown problem " + r.problem_id);
    auto& a = acc[it->second];
    ++a.n;
    a.tokens += r.token_count;
    try {
      if (extract_answer(r.text) == normalize_answer(problems[it->second].gold_answer)) ++a.correct;
    } catch (const NoAnswerFound&) {
      ++m.no_answer;
    }
  }
  std::size_t total_correct = 0, total_tokens = 0;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto& a = acc[i];
    if (a.n != n_per_question) throw CountMismatch(problems[i].id, a.n, n_per_question);
    total_correct += a.correct;
    total_tokens += a.tokens;
    m.per_question.push_back({problems[i].id, a.n ? static_cast<double>(a.tokens) / static_cast<double>(a.n) : 0.0,
                              a.n ? static_cast<double>(a.correct) / static_cast<double>(a.n) : 0.0, a.n});
  }
  m.n_responses = responses.size();
  if (m.n_responses) {
    m.accuracy = static_cast<double>(total_correct) / static_cast<double>(m.n_responses);
    m.mean_length = static_cast<double>(total_tokens) / static_cast<double>(m.n_responses);
  }
  return m;
}

struct ComparisonRow {
  std::string dataset;
  double baseline_accuracy = 0.0, treated_accuracy = 0.0;
  double baseline_length = 0.0, treated_length = 0.0;
  double accuracy_delta_points = 0.0;  // percentage points
  double length_delta_percent = 0.0;   // percent of baseline; negative = shorter
};

inline ComparisonRow compare_metrics(const std::string& dataset, double base_acc, double base_len, double treat_acc,
                                     double treat_len) {
  ComparisonRow r{dataset, base_acc, treat_acc, base_len, treat_len, 0.0, 0.0};
  r.accuracy_delta_points = (treat_acc - base_acc) * 100.0;
  r.length_delta_percent = base_len > 0 ? (treat_len - base_len) / base_len * 100.0 : 0.0;
  return r;
}

inline ComparisonRow compare_runs(const RunMetrics& baseline, const RunMetrics& treated) {
  if (baseline.dataset != treated.dataset) throw DatasetMismatch(treated.dataset);
  return compare_metrics(baseline.dataset, baseline.accuracy, baseline.mean_length, treated.accuracy,
                         treated.mean_length);
}

/// Fraction of questions whose treated mean length is strictly greater than baseline.
inline double longer_ratio(std::span<const QuestionMetrics> baseline, std::span<const QuestionMetrics> treated) {
  std::map<std::string, double> base;
  for (const auto& q : baseline) base[q.id] = q.mean_length;
  if (base.size() != treated.size()) throw KeyMismatch("question id sets differ");
  std::size_t longer = 0;
  for (const auto& q : treated) {
    auto it = base.find(q.id);
    if (it == base.end()) throw KeyMismatch("question " + q.id + " missing from baseline");
    if (q.mean_length > it->second) ++longer;
  }
  return treated.empty() ? 0.0 : static_cast<double>(longer) / static_cast<double>(treated.size());
}

// ---------------------------------------------------------------------------
// Run summaries (metrics files) and reports
// ---------------------------------------------------------------------------

struct RunSummary {
  std::string run;
  std::vector<RunMetrics> datasets;

  /// Unweighted mean over datasets, as in per-dataset benchmark tables.
  std::pair<double, double> average() const {
    if (datasets.empty()) return {0.0, 0.0};
    double a = 0.0, l = 0.0;
    for (const auto& d : datasets) {
      a += d.accuracy;
      l += d.mean_length;
    }
    const auto n = static_cast<double>(datasets.size());
    return {a / n, l / n};
  }

  const RunMetrics* find(const std::string& tag) const {
    for (const auto& d : datasets)
      if (d.dataset == tag) return &d;
    return nullptr;
  }
};

inline nlohmann::ordered_json summary_to_json(const RunSummary& s) {
  nlohmann::ordered_json j;
  j["run"] = s.run;
  j["datasets"] = nlohmann::ordered_json::array();
  for (const auto& d : s.datasets) {
    nlohmann::ordered_json dj;
    dj["dataset"] = d.dataset;
    dj["accuracy"] = d.accuracy;
    dj["mean_length"] = d.mean_length;
    dj["n_responses"] = d.n_responses;
    dj["no_answer"] = d.no_answer;
    dj["per_question"] = nlohmann::ordered_json::array();
    for (const auto& q : d.per_question)
      dj["per_question"].push_back(
          {{"id", q.id}, {"mean_length", q.mean_length}, {"correct_fraction", q.correct_fraction}, {"responses", q.responses}});
    j["datasets"].push_back(std::move(dj));
  }
  return j;
}

inline RunSummary summary_from_json(const nlohmann::json& j) {
  RunSummary s;
  try {
    s.run = j.value("run", std::string{});
    for (const auto& dj : j.at("datasets")) {
      RunMetrics m;
      m.dataset = dj.at("dataset").get<std::string>();
      m.accuracy = dj.at("accuracy").get<double>();
      m.mean_length = dj.at("mean_length").get<double>();
      m.n_responses = dj.value("n_responses", std::size_t{0});
      m.no_answer = dj.value("no_answer", std::size_t{0});
      for (const auto& q : dj.value("per_question", nlohmann::json::array()))
        m.per_question.push_back({q.at("id").get<std::string>(), q.at("mean_length").get<double>(),
                                  q.value("correct_fraction", 0.0), q.value("responses", std::size_t{0})});
      s.datasets.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaViolation(0, "metrics", e.what());
  }
  return s;
}

inline RunSummary load_summary(const std::string& path) {
  auto in = open_input(path);
  try {
    return summary_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw MalformedLine(e.byte, path + ": " + e.what());
  }
}

namespace detail {

/// Fixed one-decimal rendering; "-0.0" prints as "0.0".
inline std::string fixed1(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  std::string s = buf;
  if (s == "-0.0") s = "0.0";
  return s;
}

/// Signed one-decimal delta with a typographic minus sign.
inline std::string signed1(double v) {
  std::string s = fixed1(v);
  if (s == "0.0") return s;
  if (s[0] == '-') return "−" + s.substr(1);
  return "+" + s;
}

inline std::string pad(const std::string& s, std::size_t width) {
  // Width in code points so the minus sign does not skew columns.
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  return s + std::string(width > cps ? width - cps : 0, ' ');
}

}  // namespace detail

/// Checks that every treated run covers exactly the baseline's dataset tags.
inline void check_same_datasets(const RunSummary& baseline, const RunSummary& treated) {
  for (const auto& d : treated.datasets)
    if (!baseline.find(d.dataset)) throw DatasetMismatch(d.dataset);
  for (const auto& d : baseline.datasets)
    if (!treated.find(d.dataset)) throw DatasetMismatch(d.dataset);
}

/**
 * Text table: one row per run, Acc and LEN per dataset, then the averages
 * with deltas against the baseline (accuracy in points, length in percent).
 * A second block lists the longer-response ratio per dataset.
 */
inline void render_report(std::ostream& out, const RunSummary& baseline, std::span<const RunSummary> treated) {
  for (const auto& t : treated) check_same_datasets(baseline, t);
  constexpr std::size_t name_w = 22, cell_w = 10, avg_w = 18;
  out << detail::pad("Run", name_w);
  for (const auto& d : baseline.datasets) out << detail::pad(d.dataset, 2 * cell_w);
  out << detail::pad("Average", 2 * avg_w) << '\n';
  out << detail::pad("", name_w);
  for (std::size_t i = 0; i < baseline.datasets.size(); ++i)
    out << detail::pad("Acc↑", cell_w) << detail::pad("LEN↓", cell_w);
  out << detail::pad("Acc↑", avg_w) << detail::pad("LEN↓", avg_w) << '\n';

  auto row = [&](const RunSummary& r, bool with_delta) {
    out << detail::pad(r.run, name_w);
    for (const auto& bd : baseline.datasets) {
      const auto* d = r.find(bd.dataset);
      out << detail::pad(detail::fixed1(d->accuracy * 100.0), cell_w) << detail::pad(detail::fixed1(d->mean_length), cell_w);
    }
    const auto [acc, len] = r.average();
    std::string a = detail::fixed1(acc * 100.0), l = detail::fixed1(len);
    if (with_delta) {
      const auto [bacc, blen] = baseline.average();
      const auto c = compare_metrics("Average", bacc, blen, acc, len);
      a += " (" + detail::signed1(c.accuracy_delta_points) + ")";
      l += " (" + detail::signed1(c.length_delta_percent) + "%)";
    }
    out << detail::pad(a, avg_w) << detail::pad(l, avg_w) << '\n';
  };
  row(baseline, false);
  for (const auto& t : treated) row(t, true);

  out << "\nLonger-response ratio (questions with treated mean length > baseline)\n";
  out << detail::pad("Run", name_w);
  for (const auto& d : baseline.datasets) out << detail::pad(d.dataset, 2 * cell_w);
  out << '\n';
  for (const auto& t : treated) {
    out << detail::pad(t.run, name_w);
    for (const auto& bd : baseline.datasets) {
      const auto* d = t.find(bd.dataset);
      std::string cell = "n/a";
      if (!bd.per_question.empty() && !d->per_question.empty())
        cell = detail::fixed1(longer_ratio(bd.per_question, d->per_question) * 100.0) + "%";
      out << detail::pad(cell, 2 * cell_w);
    }
    out << '\n';
  }
  out << "\nAcc deltas in percentage points, LEN deltas in percent of baseline (negative = shorter).\n"
         "Ties in length count as not longer.\n";
}

inline void write_comparison_csv(std::ostream& out, const RunSummary& baseline, std::span<const RunSummary> treated) {
  for (const auto& t : treated) check_same_datasets(baseline, t);
  auto f = [](double v) { return nlohmann::json(v).dump(); };
  out << "run,dataset,baseline_acc,treated_acc,acc_delta_points,baseline_len,treated_len,len_delta_percent,longer_ratio\n";
  for (const auto& t : treated) {
    for (const auto& bd : baseline.datasets) {
      const auto* d = t.find(bd.dataset);
      const auto c = compare_runs(bd, *d);
      std::string ratio;
      if (!bd.per_question.empty() && !d->per_question.empty()) ratio = f(longer_ratio(bd.per_question, d->per_question));
      out << t.run << ',' << bd.dataset << ',' << f(c.baseline_accuracy) << ',' << f(c.treated_accuracy) << ','
          << f(c.accuracy_delta_points) << ',' << f(c.baseline_length) << ',' << f(c.treated_length) << ','
          << f(c.length_delta_percent) << ',' << ratio << '\n';
    }
    const auto [bacc, blen] = baseline.average();
    const auto [acc, len] = t.average();
    const auto c = compare_metrics("Average", bacc, blen, acc, len);
    out << t.run << ",Average," << f(bacc) << ',' << f(acc) << ',' << f(c.accuracy_delta_points) << ',' << f(blen) << ','
        << f(len) << ',' << f(c.length_delta_percent) << ",\n";
  }
}

inline void write_metrics_csv(std::ostream& out, const RunSummary& s) {
  auto f = [](double v) { return nlohmann::json(v).dump(); };
  out << "run,dataset,accuracy,mean_length,n_responses,no_answer\n";
  for (const auto& d : s.datasets)
    out << s.run << ',' << d.dataset << ',' << f(d.accuracy) << ',' << f(d.mean_length) << ',' << d.n_responses << ','
        << d.no_answer << '\n';
}

}  // namespace leadtok
