#pragma once

// Step segmentation, step/token alignment, leading-word extraction and
// sentence-start detection.

#include "leadtok/error.hpp"
#include "leadtok/trace.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace leadtok {

struct SegmenterConfig {
  std::string step_delimiter = "\n\n";
  std::vector<std::pair<std::string, std::string>> merge_pairs = {{"But", "wait"}};
  std::string sentence_terminators = ".!?";

  void validate() const {
    if (step_delimiter.empty()) throw ConfigError("segmenter: step_delimiter must be non-empty");
    for (const auto& [a, b] : merge_pairs)
      if (a.empty() || b.empty()) throw ConfigError("segmenter: merge_pairs entries must be non-empty");
  }
};

namespace text {

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

inline bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 33 && u <= 47) || (u >= 58 && u <= 64) || (u >= 91 && u <= 96) || (u >= 123 && u <= 126);
}

// Multi-byte punctuation commonly emitted by reasoning models.
inline constexpr std::string_view kUnicodePunct[] = {
    "“", "”", "‘", "’", "—", "–", "…", "«", "»", "−",
};

/// Length in bytes of the punctuation sequence starting at s[pos], 0 if none.
inline std::size_t punct_len(std::string_view s, std::size_t pos) {
  if (pos >= s.size()) return 0;
  if (is_ascii_punct(s[pos])) return 1;
  for (auto p : kUnicodePunct)
    if (s.substr(pos, p.size()) == p) return p.size();
  return 0;
}

/// Length of a punctuation sequence ending right before `end`, 0 if none.
inline std::size_t punct_len_before(std::string_view s, std::size_t end) {
  if (end == 0) return 0;
  if (is_ascii_punct(s[end - 1])) return 1;
  for (auto p : kUnicodePunct)
    if (end >= p.size() && s.substr(end - p.size(), p.size()) == p) return p.size();
  return 0;
}

// Apostrophes and hyphens may appear inside a word ("Let's", "double-check").
inline bool word_internal(std::string_view s, std::size_t pos, std::size_t len) {
  if (len == 1) return s[pos] == '\'' || s[pos] == '-';
  return s.substr(pos, len) == "’";
}

inline std::string_view trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

/// Skips leading whitespace and punctuation; returns the offset of the first word character.
inline std::size_t skip_to_word(std::string_view s, std::size_t pos = 0) {
  while (pos < s.size()) {
    if (is_space(s[pos])) { ++pos; continue; }
    auto n = punct_len(s, pos);
    if (n == 0) break;
    pos += n;
  }
  return pos;
}

/// End offset of the word starting at `pos`.
inline std::size_t word_end(std::string_view s, std::size_t pos) {
  std::size_t end = pos;
  while (end < s.size() && !is_space(s[end])) {
    auto n = punct_len(s, end);
    if (n > 0 && !word_internal(s, end, n)) break;
    end += n > 0 ? n : 1;
  }
  // Trailing apostrophes/hyphens are not part of the word.
  while (end > pos) {
    auto n = punct_len_before(s, end);
    if (n == 0) break;
    end -= n;
  }
  return end;
}

struct WordPos {
  std::size_t offset;
  std::string_view word;
};

/// First word after stripping leading whitespace/punctuation, if any.
inline std::optional<WordPos> first_word(std::string_view s) {
  auto b = skip_to_word(s);
  auto e = word_end(s, b);
  if (e == b) return std::nullopt;
  return WordPos{b, s.substr(b, e - b)};
}

}  // namespace text

// ---------------------------------------------------------------------------

inline std::vector<Step> split_steps(std::string_view text, const SegmenterConfig& cfg = {}) {
  std::vector<Step> steps;
  const auto& delim = cfg.step_delimiter;
  std::size_t start = 0;
  auto emit = [&](std::size_t b, std::size_t e) {
    if (e <= b) return;
    Step s;
    s.ordinal = steps.size();
    s.text = std::string(text.substr(b, e - b));
    s.char_span = {b, e};
    steps.push_back(std::move(s));
  };
  while (true) {
    auto pos = text.find(delim, start);
    if (pos == std::string_view::npos) {
      emit(start, text.size());
      break;
    }
    emit(start, pos);
    start = pos + delim.size();
  }
  return steps;
}

/// Character offset where each token starts; one extra entry for the end.
inline std::vector<std::size_t> token_offsets(const TraceRecord& trace) {
  std::vector<std::size_t> off;
  off.reserve(trace.tokens.size() + 1);
  std::size_t pos = 0;
  for (const auto& t : trace.tokens) {
    off.push_back(pos);
    pos += t.text.size();
  }
  off.push_back(pos);
  return off;
}

/**
 * Assigns each token to the first step its character range intersects, so a
 * token straddling a boundary belongs to the step holding its first
 * in-step character. Delimiter-only tokens belong to no step. A step lying
 * entirely inside a token already owned by the previous step shares that
 * token; this is the only case where spans overlap.
 */
inline std::vector<Step> align_steps_to_tokens(std::vector<Step> steps, const TraceRecord& trace) {
  const std::string text = generated_text(trace);
  for (const auto& s : steps) {
    if (s.char_span.end > text.size() || text.compare(s.char_span.start, s.char_span.end - s.char_span.start, s.text) != 0)
      throw AlignmentMismatch("step " + std::to_string(s.ordinal) + " does not match the trace text");
  }
  const auto off = token_offsets(trace);
  std::size_t si = 0;
  for (auto& s : steps) s.token_span.reset();
  for (std::size_t ti = 0; ti < trace.tokens.size(); ++ti) {
    const std::size_t b = off[ti], e = off[ti + 1];
    if (e == b) continue;
    while (si < steps.size() && steps[si].char_span.end <= b) ++si;
    if (si == steps.size()) break;
    if (steps[si].char_span.start >= e) continue;  // token inside a delimiter
    auto& span = steps[si].token_span;
    if (!span) span = TokenSpan{ti, ti};
    else span->last = ti;
  }
  // Steps that received no token of their own share the token holding their first character.
  for (auto& s : steps) {
    if (s.token_span) continue;
    auto it = std::upper_bound(off.begin(), off.end() - 1, s.char_span.start);
    const std::size_t ti = static_cast<std::size_t>(std::distance(off.begin(), it)) - 1;
    s.token_span = TokenSpan{ti, ti};
  }
  return steps;
}

/// Index of the token containing character `pos` of the generated text.
inline std::size_t token_at_char(const std::vector<std::size_t>& offsets, std::size_t pos) {
  auto it = std::upper_bound(offsets.begin(), offsets.end() - 1, pos);
  return static_cast<std::size_t>(std::distance(offsets.begin(), it)) - 1;
}

/// Leading word of an aligned step; nullopt when the step has no word characters.
inline std::optional<LeadingWord> extract_leading_word(const Step& step, const TraceRecord& trace,
                                                       const SegmenterConfig& cfg = {}) {
  if (!step.token_span) throw UnalignedStep(step.ordinal);
  const std::string_view s = step.text;
  auto first = text::first_word(s);
  if (!first) return std::nullopt;

  LeadingWord lw;
  lw.surface = std::string(first->word);
  const std::size_t after = first->offset + first->word.size();
  std::size_t b2 = after;
  while (b2 < s.size() && text::is_space(s[b2])) ++b2;
  if (b2 > after) {
    auto e2 = text::word_end(s, b2);
    const std::string_view second = s.substr(b2, e2 - b2);
    for (const auto& [a, b] : cfg.merge_pairs) {
      if (first->word == a && second == b) {
        lw.surface = a + " " + b;
        break;
      }
    }
  }
  const auto off = token_offsets(trace);
  const std::size_t ti = token_at_char(off, step.char_span.start + first->offset);
  lw.token_index = ti;
  lw.first_token = std::string(text::trim(trace.tokens[ti].text));
  lw.probability = std::exp(trace.tokens[ti].logprob);
  return lw;
}

/// Split, align and attach leading words in one pass.
inline std::vector<Step> segment_trace(const TraceRecord& trace, const SegmenterConfig& cfg = {}) {
  auto steps = align_steps_to_tokens(split_steps(generated_text(trace), cfg), trace);
  for (auto& s : steps) s.leading_word = extract_leading_word(s, trace, cfg);
  return steps;
}

// ---------------------------------------------------------------------------
// Sentence starts
// ---------------------------------------------------------------------------

/**
 * Incremental sentence-start detector. A candidate token starts a sentence
 * when it is the first token, or it carries a non-whitespace character and
 * the text before its first such character ends with the step delimiter or
 * with a terminator followed by whitespace.
 */
class SentenceStartTracker {
 public:
  explicit SentenceStartTracker(const SegmenterConfig& cfg) : cfg_(&cfg) {}

  bool at_start(std::string_view candidate) const {
    if (count_ == 0) return true;
    const auto nonspace = std::find_if(candidate.begin(), candidate.end(), [](char c) { return !text::is_space(c); });
    if (nonspace == candidate.end()) return false;
    std::string s = prefix_;
    s.append(candidate.begin(), nonspace);
    const auto& d = cfg_->step_delimiter;
    if (s.size() >= d.size() && s.compare(s.size() - d.size(), d.size(), d) == 0) return true;
    std::size_t e = s.size();
    while (e > 0 && text::is_space(s[e - 1])) --e;
    if (e == s.size() || e == 0) return false;
    return cfg_->sentence_terminators.find(s[e - 1]) != std::string::npos;
  }

  void push(std::string_view token) {
    prefix_.append(token);
    ++count_;
    // Only the tail matters for the rule; keep memory bounded on long streams.
    constexpr std::size_t kKeep = 256;
    if (prefix_.size() > 4 * kKeep) prefix_.erase(0, prefix_.size() - kKeep);
  }

  std::size_t count() const { return count_; }

 private:
  const SegmenterConfig* cfg_;
  std::string prefix_;
  std::size_t count_ = 0;
};

inline std::set<std::size_t> sentence_start_positions(const TraceRecord& trace, const SegmenterConfig& cfg = {}) {
  std::set<std::size_t> out;
  SentenceStartTracker tracker(cfg);
  for (const auto& t : trace.tokens) {
    if (tracker.at_start(t.text)) out.insert(t.index);
    tracker.push(t.text);
  }
  return out;
}

}  // namespace leadtok
