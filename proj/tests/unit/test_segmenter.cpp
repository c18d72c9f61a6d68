#include "leadtok/segmenter.hpp"
#include "support/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace leadtok;

namespace {

TraceRecord trace_with_p(const std::vector<std::pair<std::string, double>>& toks) {
  TraceRecord t;
  t.id = "seg";
  for (const auto& [text, p] : toks) {
    TokenEvent ev{t.tokens.size(), text, std::log(p), {{text, std::log(p)}}};
    t.tokens.push_back(ev);
  }
  return t;
}

TraceRecord trace_of(const std::vector<std::string>& toks) {
  std::vector<std::pair<std::string, double>> v;
  for (const auto& t : toks) v.emplace_back(t, 0.5);
  return trace_with_p(v);
}

// Split on every occurrence, then drop empty pieces.
std::vector<std::string> naive_split(const std::string& s, const std::string& d) {
  std::vector<std::string> parts;
  std::string cur;
  for (std::size_t i = 0; i < s.size();) {
    if (s.compare(i, d.size(), d) == 0) {
      parts.push_back(cur);
      cur.clear();
      i += d.size();
    } else {
      cur.push_back(s[i++]);
    }
  }
  parts.push_back(cur);
  std::vector<std::string> out;
  for (auto& p : parts)
    if (!p.empty()) out.push_back(p);
  return out;
}

// Token spans by brute-force interval intersection: a token belongs to the
// lowest-ordinal step its character range intersects.
std::vector<std::optional<TokenSpan>> brute_spans(const std::vector<Step>& steps, const TraceRecord& t) {
  std::vector<std::optional<TokenSpan>> spans(steps.size());
  std::size_t pos = 0;
  for (std::size_t ti = 0; ti < t.tokens.size(); ++ti) {
    const std::size_t b = pos, e = pos + t.tokens[ti].text.size();
    pos = e;
    for (std::size_t si = 0; si < steps.size(); ++si) {
      if (std::max(b, steps[si].char_span.start) < std::min(e, steps[si].char_span.end)) {
        if (!spans[si]) {
          spans[si] = TokenSpan{ti, ti};
        } else {
          spans[si]->last = ti;
        }
        break;
      }
    }
  }
  return spans;
}

bool brute_is_start(const TraceRecord& t, std::size_t i, const SegmenterConfig& cfg) {
  if (i == 0) return true;
  std::string prefix;
  for (std::size_t k = 0; k < i; ++k) prefix += t.tokens[k].text;
  const auto& tok = t.tokens[i].text;
  std::size_t lead = 0;
  while (lead < tok.size() && text::is_space(tok[lead])) ++lead;
  if (lead == tok.size()) return false;
  prefix += tok.substr(0, lead);
  const auto& d = cfg.step_delimiter;
  if (prefix.size() >= d.size() && prefix.substr(prefix.size() - d.size()) == d) return true;
  if (prefix.empty() || !text::is_space(prefix.back())) return false;
  auto last = prefix.find_last_not_of(" \t\n\r\f\v");
  return last != std::string::npos && cfg.sentence_terminators.find(prefix[last]) != std::string::npos;
}

}  // namespace

TEST(SplitSteps, Examples) {
  auto s = split_steps("A\n\nB");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].text, "A");
  EXPECT_EQ(s[1].text, "B");
  EXPECT_EQ(s[1].ordinal, 1u);
  EXPECT_EQ(s[1].char_span, (CharSpan{3, 4}));
  EXPECT_TRUE(split_steps("").empty());
  auto d = split_steps("A\n\n\n\nB");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[1].text, "B");
}

TEST(SplitSteps, MatchesNaiveOracleOnRandomText) {
  fixtures::Rng rng(11);
  const std::vector<std::string> pieces = {"a", "b", " ", "\n", "\n\n", ".", "Wait"};
  for (int iter = 0; iter < 2000; ++iter) {
    std::string s;
    const auto n = rng.below(20);
    for (std::size_t k = 0; k < n; ++k) s += rng.pick(pieces);
    const auto steps = split_steps(s);
    const auto want = naive_split(s, "\n\n");
    ASSERT_EQ(steps.size(), want.size()) << nlohmann::json(s).dump();
    for (std::size_t i = 0; i < steps.size(); ++i) {
      EXPECT_EQ(steps[i].text, want[i]);
      EXPECT_EQ(steps[i].ordinal, i);
      EXPECT_EQ(s.substr(steps[i].char_span.start, steps[i].char_span.end - steps[i].char_span.start), steps[i].text);
      if (i > 0) {
        EXPECT_LE(steps[i - 1].char_span.end + 2, steps[i].char_span.start);
      }
    }
  }
}

TEST(SplitSteps, CustomDelimiter) {
  SegmenterConfig cfg;
  cfg.step_delimiter = "||";
  auto s = split_steps("x||y||||z", cfg);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[2].text, "z");
}

TEST(Align, SingleStepCoversAllTokens) {
  auto t = trace_of(std::vector<std::string>{"Hel", "lo", " world"});
  auto steps = align_steps_to_tokens(split_steps(generated_text(t)), t);
  ASSERT_EQ(steps.size(), 1u);
  EXPECT_EQ(steps[0].token_span, (TokenSpan{0, 2}));
}

TEST(Align, DelimiterTokenBelongsToNoStep) {
  auto t = trace_of(std::vector<std::string>{"A", "\n\n", "B"});
  auto steps = align_steps_to_tokens(split_steps(generated_text(t)), t);
  ASSERT_EQ(steps.size(), 2u);
  EXPECT_EQ(steps[0].token_span, (TokenSpan{0, 0}));
  EXPECT_EQ(steps[1].token_span, (TokenSpan{2, 2}));
}

TEST(Align, StraddlingTokenGoesToStepOfFirstCharacter) {
  // ".\n\nSo" holds the end of step 0 and the start of step 1.
  auto t = trace_of(std::vector<std::string>{"x", ".\n\nSo", " on"});
  auto steps = align_steps_to_tokens(split_steps(generated_text(t)), t);
  ASSERT_EQ(steps.size(), 2u);
  EXPECT_EQ(steps[0].token_span, (TokenSpan{0, 1}));
  EXPECT_EQ(steps[1].token_span, (TokenSpan{2, 2}));
}

TEST(Align, StepInsideOneTokenSharesIt) {
  auto t = trace_of(std::vector<std::string>{"A\n\nB"});
  auto steps = align_steps_to_tokens(split_steps(generated_text(t)), t);
  ASSERT_EQ(steps.size(), 2u);
  EXPECT_EQ(steps[0].token_span, (TokenSpan{0, 0}));
  EXPECT_EQ(steps[1].token_span, (TokenSpan{0, 0}));
}

TEST(Align, MismatchThrows) {
  auto t = trace_of(std::vector<std::string>{"abc"});
  EXPECT_THROW(align_steps_to_tokens(split_steps("abd"), t), AlignmentMismatch);
  EXPECT_THROW(align_steps_to_tokens(split_steps("abcdef"), t), AlignmentMismatch);
}

TEST(Align, MatchesBruteForceIntersection) {
  fixtures::Rng rng(5);
  const std::vector<std::string> pieces = {"a", "bc", " ", "\n", "\n\n", ".\n", "\n\nW", "x\n\n", "."};
  for (int iter = 0; iter < 2000; ++iter) {
    std::vector<std::string> toks;
    const auto n = 1 + rng.below(15);
    for (std::size_t k = 0; k < n; ++k) toks.push_back(rng.pick(pieces));
    auto t = trace_of(toks);
    auto steps = align_steps_to_tokens(split_steps(generated_text(t)), t);
    auto want = brute_spans(steps, t);
    for (std::size_t i = 0; i < steps.size(); ++i) {
      ASSERT_TRUE(steps[i].token_span);
      if (want[i]) {
        EXPECT_EQ(*steps[i].token_span, *want[i]);
      } else {
        // Shared token: the one containing the step's first character.
        std::size_t pos = 0, ti = 0;
        while (pos + t.tokens[ti].text.size() <= steps[i].char_span.start) pos += t.tokens[ti++].text.size();
        EXPECT_EQ(*steps[i].token_span, (TokenSpan{ti, ti}));
      }
      if (i > 0 && want[i]) {
        EXPECT_LT(steps[i - 1].token_span->last, steps[i].token_span->first);
      }
    }
  }
}

TEST(LeadingWord, StripsPunctuationAndReadsFirstTokenProbability) {
  auto t = trace_with_p({{"Wait", 0.22}, {",", 0.9}, {" let", 0.8}, {" me", 0.9}, {" check", 0.7}, {"...", 0.5}});
  auto steps = segment_trace(t);
  ASSERT_EQ(steps.size(), 1u);
  ASSERT_TRUE(steps[0].leading_word);
  EXPECT_EQ(steps[0].leading_word->surface, "Wait");
  EXPECT_EQ(steps[0].leading_word->probability, std::exp(std::log(0.22)));
  EXPECT_EQ(steps[0].leading_word->first_token, "Wait");
}

TEST(LeadingWord, MergesButWait) {
  auto t = trace_with_p({{"x", 0.9}, {"\n\n", 0.9}, {"But", 0.35}, {" wait", 0.6}, {" —", 0.4}, {" earlier", 0.5}});
  auto steps = segment_trace(t);
  ASSERT_EQ(steps.size(), 2u);
  ASSERT_TRUE(steps[1].leading_word);
  EXPECT_EQ(steps[1].leading_word->surface, "But wait");
  EXPECT_EQ(steps[1].leading_word->probability, std::exp(std::log(0.35)));
  EXPECT_EQ(steps[1].leading_word->token_index, 2u);
}

TEST(LeadingWord, MergeIsCaseExact) {
  auto t = trace_with_p({{"But", 0.3}, {" Wait", 0.6}});
  EXPECT_EQ(segment_trace(t)[0].leading_word->surface, "But");
  auto u = trace_with_p({{"But", 0.3}, {" waiting", 0.6}});
  EXPECT_EQ(segment_trace(u)[0].leading_word->surface, "But");
}

TEST(LeadingWord, LeadingQuotesAndDashesStripped) {
  auto t = trace_with_p({{"“", 0.5}, {"Hmm", 0.4}, {",", 0.9}});
  auto lw = segment_trace(t)[0].leading_word;
  ASSERT_TRUE(lw);
  EXPECT_EQ(lw->surface, "Hmm");
  EXPECT_EQ(lw->token_index, 1u);
  EXPECT_EQ(lw->probability, std::exp(std::log(0.4)));
  auto d = trace_with_p({{"— So", 0.3}});
  EXPECT_EQ(segment_trace(d)[0].leading_word->surface, "So");
}

TEST(LeadingWord, CertainTokenGivesExactlyOne) {
  auto t = trace_with_p({{"Wait", 1.0}});
  EXPECT_EQ(segment_trace(t)[0].leading_word->probability, 1.0);
}

TEST(LeadingWord, UnalignedStepThrows) {
  auto t = trace_with_p({{"Wait", 0.5}});
  auto steps = split_steps("Wait");
  EXPECT_THROW(extract_leading_word(steps[0], t), UnalignedStep);
}

TEST(LeadingWord, PunctuationOnlyStepHasNone) {
  auto t = trace_with_p({{"...", 0.5}});
  EXPECT_FALSE(segment_trace(t)[0].leading_word);
}

TEST(SentenceStarts, Examples) {
  EXPECT_EQ(sentence_start_positions(trace_of(std::vector<std::string>{"A", ".", " B"})), (std::set<std::size_t>{0, 2}));
  EXPECT_EQ(sentence_start_positions(trace_of(std::vector<std::string>{"A"})), (std::set<std::size_t>{0}));
  EXPECT_EQ(sentence_start_positions(trace_of(std::vector<std::string>{"x", "\n\n", "Wait"})),
            (std::set<std::size_t>{0, 2}));
  // No whitespace after the terminator: not a start.
  EXPECT_EQ(sentence_start_positions(trace_of(std::vector<std::string>{"3", ".", "5"})), (std::set<std::size_t>{0}));
  // Whitespace-only tokens are never starts.
  EXPECT_EQ(sentence_start_positions(trace_of(std::vector<std::string>{"A", ".", " ", "B"})),
            (std::set<std::size_t>{0, 3}));
}

TEST(SentenceStarts, MatchesPrefixScanOracle) {
  fixtures::Rng rng(3);
  SegmenterConfig cfg;
  const std::vector<std::string> pieces = {"a", " b", ".", "!", " ", "\n", "\n\n", "?\n", " Wait", "wait", ". So"};
  for (int iter = 0; iter < 300; ++iter) {
    std::vector<std::string> toks;
    const auto n = 1 + rng.below(iter < 10 ? 800 : 40);  // a few long streams exercise buffer trimming
    for (std::size_t k = 0; k < n; ++k) toks.push_back(rng.pick(pieces));
    auto t = trace_of(toks);
    auto got = sentence_start_positions(t, cfg);
    for (std::size_t i = 0; i < toks.size(); ++i)
      ASSERT_EQ(got.count(i) == 1, brute_is_start(t, i, cfg)) << "iter " << iter << " pos " << i;
  }
}

TEST(SegmenterConfig, Validation) {
  SegmenterConfig c;
  c.step_delimiter = "";
  EXPECT_THROW(c.validate(), ConfigError);
  SegmenterConfig m;
  m.merge_pairs = {{"But", ""}};
  EXPECT_THROW(m.validate(), ConfigError);
}
