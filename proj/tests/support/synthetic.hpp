#pragma once

// Deterministic generators for test inputs. Uses raw mt19937_64 output
// (not std::*_distribution) so values are identical across standard
// libraries; the bundled fixture files depend on that.

#include "leadtok/suppressor.hpp"
#include "leadtok/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace leadtok::fixtures {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : g_(seed) {}
  double uniform() { return static_cast<double>(g_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(g_() % n); }
  bool coin(double p = 0.5) { return uniform() < p; }
  template <class T>
  const T& pick(const std::vector<T>& v) { return v[below(v.size())]; }
  std::mt19937_64& engine() { return g_; }

 private:
  std::mt19937_64 g_;
};

inline const std::vector<std::string>& vocab() {
  static const std::vector<std::string> v = {"Wait", "wait",  " wait", "So",    " So",   "Alternatively", "But", " but",
                                             "Let",  " the",  " is",   " 42",   ".",     "\n\n",          ", ",  " Hmm",
                                             "é",    " “ok”", "\t",    " x\\y", "\"q\"", " answer",       "?",   "!"};
  return v;
}

/// Sorted distribution over distinct tokens; full (sums to 1) unless truncated.
inline TokenDistribution random_distribution(Rng& rng, std::size_t max_entries = 8, bool truncated = false) {
  const auto& v = vocab();
  std::vector<std::string> toks = v;
  for (std::size_t i = toks.size(); i > 1; --i) std::swap(toks[i - 1], toks[rng.below(i)]);
  toks.resize(1 + rng.below(std::min(max_entries, toks.size())));
  std::vector<std::pair<std::string, double>> e;
  double z = 0.0;
  for (auto& t : toks) {
    // Occasional heavy entries and exact thresholds to exercise boundaries.
    double w = rng.uniform() + 1e-6;
    if (rng.coin(0.1)) w *= 20.0;
    e.emplace_back(t, w);
    z += w;
  }
  const double mass = truncated ? rng.uniform(0.5, 1.0) : 1.0;
  for (auto& x : e) x.second = x.second / z * mass;
  return TokenDistribution::from_unsorted(std::move(e), truncated);
}

/// TokenEvent whose sampled token is drawn from a random top-k list.
inline TokenEvent random_event(Rng& rng, std::size_t index, std::size_t k = 8) {
  auto d = random_distribution(rng, k, true);
  TokenEvent ev;
  ev.index = index;
  for (const auto& [t, p] : d.entries) ev.top_alternatives.push_back({t, std::log(p)});
  const auto& s = ev.top_alternatives[rng.below(ev.top_alternatives.size())];
  ev.text = s.text;
  ev.logprob = s.logprob;
  return ev;
}

inline TraceRecord random_trace(Rng& rng, const std::string& id, std::size_t max_len = 60) {
  TraceRecord t;
  t.id = id;
  t.prompt = rng.coin() ? "Compute 7*7.\n" : "Q: \"quoted\" \\ prompt é";
  if (rng.coin()) t.gold_answer = "49";
  if (rng.coin()) t.meta["model"] = "synthetic";
  if (rng.coin()) t.meta["dataset"] = "toy";
  const std::size_t n = rng.below(max_len + 1);
  for (std::size_t i = 0; i < n; ++i) t.tokens.push_back(random_event(rng, i));
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic reasoning corpus with known class-conditional "Wait" confidence
// ---------------------------------------------------------------------------

struct StepSpec {
  std::vector<std::string> tokens;  // first token is the leading word token
  double lead_p;
};

/// Builds a trace from steps separated by "\n\n" tokens. Each token gets a
/// top list holding itself plus three alternatives sharing part of the rest.
inline TraceRecord trace_from_steps(Rng& rng, const std::string& id, const std::vector<StepSpec>& steps) {
  TraceRecord t;
  t.id = id;
  t.prompt = "Compute 7*7. Put the answer in \\boxed{}.";
  t.gold_answer = "49";
  t.meta["dataset"] = "synthetic";
  static const std::vector<std::string> alts = {"So", "Let", "The", "Then", "Now", "Therefore", " and", " we"};
  auto push = [&](const std::string& text, double p) {
    TokenEvent ev;
    ev.index = t.tokens.size();
    ev.text = text;
    ev.logprob = std::log(p);
    std::vector<Alternative> top = {{text, ev.logprob}};
    double rest = (1.0 - p) * 0.9;
    for (int k = 0; k < 3 && rest > 1e-9; ++k) {
      std::string a = alts[rng.below(alts.size())];
      bool dup = false;
      for (const auto& x : top) dup = dup || x.text == a;
      if (dup) continue;
      const double q = rest * rng.uniform(0.3, 0.7);
      rest -= q;
      top.push_back({a, std::log(q)});
    }
    std::stable_sort(top.begin(), top.end(), [](const auto& a, const auto& b) { return a.logprob > b.logprob; });
    ev.top_alternatives = std::move(top);
    t.tokens.push_back(std::move(ev));
  };
  for (std::size_t s = 0; s < steps.size(); ++s) {
    if (s > 0) push("\n\n", rng.uniform(0.8, 0.99));
    for (std::size_t k = 0; k < steps[s].tokens.size(); ++k)
      push(steps[s].tokens[k], k == 0 ? steps[s].lead_p : rng.uniform(0.5, 0.99));
  }
  return t;
}

/// Whitespace-led word tokens with trailing punctuation split off, the way
/// BPE tokenizers usually emit "Wait," as "Wait" + ",".
inline std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> raw;
  std::string cur;
  for (char c : text) {
    if (c == ' ' && !cur.empty()) {
      raw.push_back(cur);
      cur = " ";
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) raw.push_back(cur);
  std::vector<std::string> out;
  for (auto& w : raw) {
    std::string tail;
    while (w.size() > 1 && std::string_view(",.!?").find(w.back()) != std::string_view::npos) {
      tail.insert(tail.begin(), w.back());
      w.pop_back();
    }
    out.push_back(w);
    for (char c : tail) out.emplace_back(1, c);
  }
  return out;
}

/**
 * Corpus for the statistics-direction check. Self-affirmation steps start
 * with "Wait" at low probability (0.05..0.35), other reflections at high
 * probability (0.55..0.95). Every `loop_every`-th trace ends in a confident
 * self-affirming tail loop (p 0.9..0.99), the pattern tail filtering removes.
 */
inline std::vector<TraceRecord> synthetic_corpus(std::uint64_t seed, std::size_t n_traces = 40,
                                                 std::size_t loop_every = 4) {
  Rng rng(seed);
  static const std::vector<std::string> nr = {
      "First compute 7 times 7 directly.", "Then 7 times 7 gives 49.", "So the product is 49.",
      "Let us write 7 as 5 plus 2.",       "Now 5 times 7 is 35.",     "Therefore the total is 35 plus 14."};
  static const std::vector<std::string> sa = {"Wait, that's correct, the product is 49.",
                                              "Wait, 49 is correct.", "Wait, this confirms the result of 49."};
  static const std::vector<std::string> other = {"Wait, let me verify with another approach.",
                                                 "Wait, maybe I should check 7 squared again.",
                                                 "Wait, what if the question asks for a sum?"};
  std::vector<TraceRecord> out;
  for (std::size_t i = 0; i < n_traces; ++i) {
    std::vector<StepSpec> steps;
    const std::size_t body = 4 + rng.below(5);
    for (std::size_t s = 0; s < body; ++s) {
      const double u = rng.uniform();
      if (u < 0.5) steps.push_back({words(rng.pick(nr)), rng.uniform(0.3, 0.9)});
      else if (u < 0.75) steps.push_back({words(rng.pick(sa)), rng.uniform(0.05, 0.35)});
      else steps.push_back({words(rng.pick(other)), rng.uniform(0.55, 0.95)});
    }
    if (loop_every && i % loop_every == loop_every - 1) {
      const std::vector<std::string> loop = words("Wait, the answer is 49, which matches.");
      const std::size_t reps = 4 + rng.below(4);
      for (std::size_t r = 0; r < reps; ++r) steps.push_back({loop, rng.uniform(0.9, 0.99)});
    } else {
      steps.push_back({words("The answer is \\boxed{49}."), rng.uniform(0.5, 0.9)});
    }
    out.push_back(trace_from_steps(rng, "syn-" + std::to_string(i), steps));
  }
  return out;
}

}  // namespace leadtok::fixtures
