#pragma once

// Tail-loop detection: a suffix of the step list made of m >= min_reps
// near-verbatim copies of a block of k <= max_period steps. Looped suffixes
// are dropped from the statistical view of a trace.

#include "leadtok/error.hpp"
#include "leadtok/segmenter.hpp"
#include "leadtok/trace.hpp"

#include <algorithm>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace leadtok {

struct LoopParams {
  std::size_t max_period = 6;
  std::size_t min_reps = 2;
  double sim_threshold = 0.95;

  void validate() const {
    if (max_period < 1) throw ConfigError("loop: max_period must be >= 1");
    if (min_reps < 2) throw ConfigError("loop: min_reps must be >= 2");
    if (!(sim_threshold >= 0.0 && sim_threshold <= 1.0)) throw ConfigError("loop: sim_threshold must be in [0,1]");
  }
};

struct LoopRegion {
  std::size_t start_step = 0;
  std::size_t period = 0;
  std::size_t repetitions = 0;
  double similarity = 0.0;
  bool operator==(const LoopRegion&) const = default;
};

namespace detail {

struct NormalizedStep {
  std::string text;                 // whitespace-collapsed, case-folded
  std::vector<std::string> tokens;  // sorted, unique
};

inline NormalizedStep normalize_step(std::string_view s) {
  NormalizedStep n;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (!n.text.empty()) n.text.push_back(' ');
    n.text += word;
    n.tokens.push_back(std::move(word));
    word.clear();
  };
  for (char c : s) {
    if (text::is_space(c)) {
      flush();
    } else {
      word.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c);
    }
  }
  flush();
  std::sort(n.tokens.begin(), n.tokens.end());
  n.tokens.erase(std::unique(n.tokens.begin(), n.tokens.end()), n.tokens.end());
  return n;
}

inline double step_similarity(const NormalizedStep& a, const NormalizedStep& b) {
  if (a.text == b.text) return 1.0;
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.tokens.size() && j < b.tokens.size()) {
    if (a.tokens[i] == b.tokens[j]) { ++inter; ++i; ++j; }
    else if (a.tokens[i] < b.tokens[j]) ++i;
    else ++j;
  }
  const std::size_t uni = a.tokens.size() + b.tokens.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace detail

/**
 * Smallest period k <= max_period whose trailing blocks repeat at least
 * min_reps times. Blocks are compared position-wise to the final block
 * (exact normalized match scores 1, otherwise token Jaccard); the region
 * grows backwards while each block's mean similarity to the final block
 * stays >= sim_threshold. Reported similarity is the mean over the
 * repeated blocks.
 */
inline std::optional<LoopRegion> detect_tail_loop(std::span<const std::string> step_texts, const LoopParams& p = {}) {
  const std::size_t n = step_texts.size();
  if (n == 0) return std::nullopt;
  std::vector<detail::NormalizedStep> norm;
  norm.reserve(n);
  for (const auto& s : step_texts) norm.push_back(detail::normalize_step(s));

  for (std::size_t k = 1; k <= p.max_period && k * p.min_reps <= n; ++k) {
    const std::size_t ref = n - k;
    std::size_t reps = 1;
    double sim_sum = 0.0;
    while ((reps + 1) * k <= n) {
      const std::size_t blk = n - (reps + 1) * k;
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += detail::step_similarity(norm[blk + j], norm[ref + j]);
      s /= static_cast<double>(k);
      if (s < p.sim_threshold) break;
      sim_sum += s;
      ++reps;
    }
    if (reps >= p.min_reps)
      return LoopRegion{n - reps * k, k, reps, sim_sum / static_cast<double>(reps - 1)};
  }
  return std::nullopt;
}

inline std::optional<LoopRegion> detect_tail_loop(std::span<const Step> steps, const LoopParams& p = {}) {
  std::vector<std::string> texts;
  texts.reserve(steps.size());
  for (const auto& s : steps) texts.push_back(s.text);
  return detect_tail_loop(std::span<const std::string>(texts), p);
}

struct FilteredView {
  std::vector<Step> steps;
  std::vector<ReflectionLabel> labels;
  std::optional<LoopRegion> loop;
  bool whole_trace_looped = false;
};

/// Drops the looped suffix from the statistical view; the trace is untouched.
inline FilteredView filter_for_stats(std::span<const Step> steps, std::span<const ReflectionLabel> labels,
                                     const LoopParams& p = {}) {
  if (steps.size() != labels.size()) throw KeyMismatch("labels are not aligned with steps");
  FilteredView v;
  v.loop = steps.empty() ? std::nullopt : detect_tail_loop(steps, p);
  const std::size_t keep = v.loop ? v.loop->start_step : steps.size();
  v.steps.assign(steps.begin(), steps.begin() + static_cast<std::ptrdiff_t>(keep));
  v.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(keep));
  v.whole_trace_looped = v.loop && v.loop->start_step == 0;
  return v;
}

inline void write_loop_report_line(std::ostream& out, const std::string& trace_id, const LoopRegion& r) {
  nlohmann::ordered_json j;
  j["trace_id"] = trace_id;
  j["start_step"] = r.start_step;
  j["period"] = r.period;
  j["reps"] = r.repetitions;
  j["sim"] = r.similarity;
  out << j.dump() << '\n';
}

}  // namespace leadtok
