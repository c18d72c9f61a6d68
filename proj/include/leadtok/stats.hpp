#pragma once

// Leading-word frequency/confidence tables and per-class probability
// densities of a chosen leading token, with optional tail-loop filtering.

#include "leadtok/error.hpp"
#include "leadtok/loop_filter.hpp"
#include "leadtok/trace.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace leadtok {

/// One trace after segmentation and classification.
struct AnalyzedTrace {
  std::string trace_id;
  std::vector<Step> steps;  // with leading words attached
  std::vector<ReflectionLabel> labels;
};

struct LeadingWordStat {
  std::string word;
  ReflectionClass cls = ReflectionClass::NonReflective;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  bool operator==(const LeadingWordStat&) const = default;
};

struct DensityHistogram {
  std::string token;
  ReflectionClass cls = ReflectionClass::NonReflective;
  std::vector<double> bin_edges;
  std::vector<double> bin_mass;
  std::size_t count = 0;

  double center_of_mass() const {
    double c = 0.0;
    for (std::size_t i = 0; i < bin_mass.size(); ++i) c += bin_mass[i] * 0.5 * (bin_edges[i] + bin_edges[i + 1]);
    return c;
  }
};

inline constexpr std::size_t kDefaultBins = 20;

namespace detail {

/// Steps and labels that enter the statistics for one trace.
struct StatView {
  std::span<const Step> steps;
  std::span<const ReflectionLabel> labels;
};

inline StatView stat_view(const AnalyzedTrace& t, bool filtered, const LoopParams& loop) {
  if (t.steps.size() != t.labels.size()) throw KeyMismatch("trace " + t.trace_id + ": labels do not cover all steps");
  std::size_t keep = t.steps.size();
  if (filtered && !t.steps.empty()) {
    if (auto r = detect_tail_loop(std::span<const Step>(t.steps), loop)) keep = r->start_step;
  }
  return {std::span<const Step>(t.steps).first(keep), std::span<const ReflectionLabel>(t.labels).first(keep)};
}

}  // namespace detail

/// Commutative accumulator over per-trace partials.
class LeadingWordAccumulator {
 public:
  void add(ReflectionClass cls, const std::string& word, double probability) {
    auto& cell = cells_[{cls, word}];
    ++cell.count;
    cell.sum += probability;
  }

  void merge(const LeadingWordAccumulator& other) {
    for (const auto& [key, cell] : other.cells_) {
      auto& mine = cells_[key];
      mine.count += cell.count;
      mine.sum += cell.sum;
    }
  }

  /// Per class (SA, OR, NR order): words by count descending, ties lexicographic.
  std::vector<LeadingWordStat> table(std::size_t top_n) const {
    std::vector<LeadingWordStat> out;
    for (auto cls : kAllClasses) {
      std::vector<LeadingWordStat> rows;
      for (const auto& [key, cell] : cells_) {
        if (key.first != cls) continue;
        rows.push_back({key.second, cls, cell.count, cell.sum / static_cast<double>(cell.count)});
      }
      std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a.count != b.count) return a.count > b.count;
        return a.word < b.word;
      });
      if (rows.size() > top_n) rows.resize(top_n);
      out.insert(out.end(), rows.begin(), rows.end());
    }
    return out;
  }

 private:
  struct Cell {
    std::size_t count = 0;
    double sum = 0.0;
  };
  std::map<std::pair<ReflectionClass, std::string>, Cell> cells_;
};

inline void accumulate_leading_words(const AnalyzedTrace& t, bool filtered, const LoopParams& loop,
                                     LeadingWordAccumulator& acc) {
  auto view = detail::stat_view(t, filtered, loop);
  for (std::size_t i = 0; i < view.steps.size(); ++i) {
    const auto& lw = view.steps[i].leading_word;
    if (lw) acc.add(view.labels[i].cls, lw->surface, lw->probability);
  }
}

inline std::vector<LeadingWordStat> leading_word_table(std::span<const AnalyzedTrace> corpus, std::size_t top_n,
                                                       bool filtered, const LoopParams& loop = {}) {
  LeadingWordAccumulator acc;
  for (const auto& t : corpus) accumulate_leading_words(t, filtered, loop, acc);
  return acc.table(top_n);
}

/// Histograms of leading-word probabilities for steps whose leading word
/// starts with `token`, one per class that has at least one such step.
inline std::vector<DensityHistogram> token_density(std::span<const AnalyzedTrace> corpus, const std::string& token,
                                                   std::size_t bins, bool filtered, const LoopParams& loop = {}) {
  if (bins < 2) throw ConfigError("token_density: bins must be >= 2");
  std::map<ReflectionClass, std::vector<std::size_t>> counts;
  for (const auto& t : corpus) {
    auto view = detail::stat_view(t, filtered, loop);
    for (std::size_t i = 0; i < view.steps.size(); ++i) {
      const auto& lw = view.steps[i].leading_word;
      if (!lw || lw->first_token != token) continue;
      auto& c = counts[view.labels[i].cls];
      if (c.empty()) c.assign(bins, 0);
      const double p = std::clamp(lw->probability, 0.0, 1.0);
      const auto b = std::min(bins - 1, static_cast<std::size_t>(p * static_cast<double>(bins)));
      ++c[b];
    }
  }
  std::vector<DensityHistogram> out;
  for (auto cls : kAllClasses) {
    auto it = counts.find(cls);
    if (it == counts.end()) continue;
    DensityHistogram h;
    h.token = token;
    h.cls = cls;
    for (std::size_t b = 0; b <= bins; ++b) h.bin_edges.push_back(static_cast<double>(b) / static_cast<double>(bins));
    for (auto c : it->second) h.count += c;
    for (auto c : it->second) h.bin_mass.push_back(static_cast<double>(c) / static_cast<double>(h.count));
    out.push_back(std::move(h));
  }
  return out;
}

/// mean_confidence(OR) - mean_confidence(SA) for `word`; positive means SA is less confident.
inline double confidence_gap(std::span<const LeadingWordStat> table, const std::string& word) {
  std::optional<double> sa, other;
  for (const auto& row : table) {
    if (row.word != word || row.count == 0) continue;
    if (row.cls == ReflectionClass::SelfAffirmation) sa = row.mean_confidence;
    if (row.cls == ReflectionClass::OtherReflection) other = row.mean_confidence;
  }
  if (!sa || !other) throw MissingClass(word);
  return *other - *sa;
}

/// Gaps for every word present in both reflective classes.
inline std::map<std::string, double> confidence_gaps(std::span<const LeadingWordStat> table) {
  std::map<std::string, double> out;
  for (const auto& row : table) {
    if (row.cls != ReflectionClass::SelfAffirmation) continue;
    try {
      out[row.word] = confidence_gap(table, row.word);
    } catch (const MissingClass&) {
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos && !s.empty() && s.front() != ' ' && s.back() != ' ') return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

/// Shortest round-trip decimal form of a double.
inline std::string fmt_double(double v) { return nlohmann::json(v).dump(); }

inline void write_leading_word_csv(std::ostream& out, std::span<const LeadingWordStat> table) {
  out << "class,word,count,mean_confidence\n";
  for (const auto& r : table)
    out << class_code(r.cls) << ',' << csv_field(r.word) << ',' << r.count << ',' << fmt_double(r.mean_confidence) << '\n';
}

inline void write_density_csv(std::ostream& out, std::span<const DensityHistogram> hists) {
  out << "token,class,bin_lo,bin_hi,mass\n";
  for (const auto& h : hists)
    for (std::size_t b = 0; b < h.bin_mass.size(); ++b)
      out << csv_field(h.token) << ',' << class_code(h.cls) << ',' << fmt_double(h.bin_edges[b]) << ','
          << fmt_double(h.bin_edges[b + 1]) << ',' << fmt_double(h.bin_mass[b]) << '\n';
}

}  // namespace leadtok
