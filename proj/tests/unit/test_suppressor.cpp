#include "leadtok/suppressor.hpp"
#include "support/synthetic.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace leadtok;

namespace {

TokenDistribution dist(std::vector<std::pair<std::string, double>> e, bool truncated = false) {
  return TokenDistribution::from_unsorted(std::move(e), truncated);
}

SuppressionConfig at(double tau) {
  SuppressionConfig c;
  c.threshold = tau;
  return c;
}

double prob_of(const TokenDistribution& d, const std::string& tok) {
  for (const auto& [t, p] : d.entries)
    if (t == tok) return p;
  return -1.0;
}

}  // namespace

TEST(Suppress, HandRenormalization) {
  const auto in = dist({{"Wait", 0.2}, {"So", 0.5}, {"Let", 0.3}});
  const auto r = suppress_distribution(in, at(0.3), true, true);
  ASSERT_EQ(r.distribution.entries.size(), 2u);
  EXPECT_NEAR(prob_of(r.distribution, "So"), 0.625, 1e-12);
  EXPECT_NEAR(prob_of(r.distribution, "Let"), 0.375, 1e-12);
  EXPECT_EQ(r.distribution.entries[0].first, "So");
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0], (SuppressionEvent{0, "Wait", 0.2, SuppressionAction::Zeroed}));
  EXPECT_DOUBLE_EQ(r.removed_mass, 0.2);
}

TEST(Suppress, ZeroThresholdIsIdentity) {
  fixtures::Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const auto in = fixtures::random_distribution(rng, 8, rng.coin());
    auto cfg = at(0.0);
    cfg.target_tokens = extended_target_tokens();
    EXPECT_EQ(suppress_distribution(in, cfg, true, true).distribution, in);
  }
}

TEST(Suppress, AboveThresholdUntouched) {
  const auto in = dist({{"Wait", 0.8}, {"So", 0.2}});
  const auto r = suppress_distribution(in, at(0.3), true, true);
  EXPECT_EQ(r.distribution, in);
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0].action, SuppressionAction::UntouchedAboveThreshold);
}

TEST(Suppress, ThresholdIsStrict) {
  const auto in = dist({{"Wait", 0.3}, {"So", 0.7}});
  EXPECT_EQ(suppress_distribution(in, at(0.3), true, true).distribution, in);
  const auto certain = dist({{"Wait", 1.0}});
  EXPECT_EQ(suppress_distribution(certain, at(1.0), true, true).distribution, certain);
}

TEST(Suppress, AllMassRemoved) {
  const auto in = dist({{"Wait", 0.15}, {"wait", 0.1}}, true);
  EXPECT_THROW(suppress_distribution(in, at(0.3), true, true), AllMassRemoved);
}

TEST(Suppress, TruncatedKeepsTotalMass) {
  const auto in = dist({{"So", 0.4}, {"Wait", 0.2}, {"Let", 0.1}}, true);
  const auto r = suppress_distribution(in, at(0.3), true, true);
  EXPECT_NEAR(r.distribution.total(), 0.7, 1e-12);
  EXPECT_TRUE(r.distribution.truncated);
  EXPECT_NEAR(prob_of(r.distribution, "So") / prob_of(r.distribution, "Let"), 4.0, 1e-12);
}

TEST(Suppress, GateAndSentenceStart) {
  const auto in = dist({{"Wait", 0.2}, {"So", 0.8}});
  auto r = suppress_distribution(in, at(0.3), true, false);
  EXPECT_EQ(r.distribution, in);
  EXPECT_EQ(r.events.at(0).action, SuppressionAction::UntouchedGateOff);

  auto gated = at(0.3);
  gated.mode = SuppressionMode::SentenceStartGated;
  r = suppress_distribution(in, gated, false, true);
  EXPECT_EQ(r.distribution, in);
  EXPECT_EQ(r.events.at(0).action, SuppressionAction::UntouchedNotSentenceStart);
  r = suppress_distribution(in, gated, true, true);
  EXPECT_EQ(r.events.at(0).action, SuppressionAction::Zeroed);

  // Global mode ignores the sentence-start flag.
  r = suppress_distribution(in, at(0.3), false, true);
  EXPECT_EQ(r.events.at(0).action, SuppressionAction::Zeroed);
}

TEST(Suppress, PerCandidateSentenceStart) {
  auto cfg = at(0.5);
  cfg.mode = SuppressionMode::SentenceStartGated;
  cfg.target_tokens = {"Wait", " wait"};
  const auto in = dist({{"Wait", 0.2}, {" wait", 0.2}, {"x", 0.6}});
  const std::function<bool(std::string_view)> starts = [](std::string_view t) { return t == "Wait"; };
  const auto r = suppress_distribution(in, cfg, starts, true);
  ASSERT_EQ(r.distribution.entries.size(), 2u);
  EXPECT_EQ(prob_of(r.distribution, "Wait"), -1.0);
  EXPECT_NEAR(prob_of(r.distribution, " wait"), 0.25, 1e-12);
}

TEST(Decide, Examples) {
  EXPECT_EQ(decide("Wait", 0.1, at(0.3), true, true), Decision::Ban);
  for (double tau : {0.0, 0.5, 1.0}) EXPECT_EQ(decide("So", 0.01, at(tau), true, true), Decision::Allow);
  EXPECT_EQ(decide("wait", 0.1, at(0.3), true, false), Decision::Allow);
  EXPECT_EQ(decide("Wait", 0.3, at(0.3), true, true), Decision::Allow);
  auto gated = at(0.3);
  gated.mode = SuppressionMode::SentenceStartGated;
  EXPECT_EQ(decide("Wait", 0.1, gated, false, true), Decision::Allow);
  EXPECT_EQ(decide("Wait", 0.1, gated, true, true), Decision::Ban);
}

TEST(Decide, AgreesWithSuppressEntrywise) {
  fixtures::Rng rng(77);
  for (int i = 0; i < 2000; ++i) {
    auto cfg = at(rng.pick(std::vector<double>{0.0, 0.1, 0.3, 0.5, 1.0}));
    cfg.target_tokens = extended_target_tokens();
    const bool start = rng.coin(), gate = rng.coin(0.8);
    if (rng.coin()) cfg.mode = SuppressionMode::SentenceStartGated;
    const auto in = fixtures::random_distribution(rng, 8, true);
    try {
      const auto r = suppress_distribution(in, cfg, start, gate);
      for (const auto& [tok, p] : in.entries) {
        const bool kept = prob_of(r.distribution, tok) >= 0.0;
        EXPECT_EQ(kept, decide(tok, p, cfg, start, gate) == Decision::Allow);
      }
    } catch (const AllMassRemoved&) {
      for (const auto& [tok, p] : in.entries) EXPECT_EQ(decide(tok, p, cfg, start, gate), Decision::Ban);
    }
  }
}

TEST(Underthink, OffsetAndWindow) {
  auto cfg = at(0.0);
  cfg.underthink = UnderthinkConfig{3.0, 600};
  const Logits in = {{"Wait", -1.0}, {"So", -0.5}};
  auto out = underthink_adjust(in, cfg, 10);
  EXPECT_EQ(out[0].second, -4.0);
  EXPECT_EQ(out[1].second, -0.5);
  EXPECT_EQ(underthink_adjust(in, cfg, 0)[0].second, -4.0);
  EXPECT_EQ(underthink_adjust(in, cfg, 599)[0].second, -4.0);
  EXPECT_EQ(underthink_adjust(in, cfg, 600), in);
  cfg.underthink->alpha = 0.0;
  EXPECT_EQ(underthink_adjust(in, cfg, 0), in);
  cfg.underthink = UnderthinkConfig{3.0, std::nullopt};
  EXPECT_EQ(underthink_adjust(in, cfg, 1000000)[0].second, -4.0);
  cfg.underthink.reset();
  EXPECT_THROW(underthink_adjust(in, cfg, 0), ConfigError);
}

TEST(Underthink, LogitRoundTripPreservesMass) {
  const auto d = dist({{"So", 0.5}, {"Wait", 0.3}}, true);
  const auto back = from_logits(to_logits(d), d.total(), true);
  EXPECT_NEAR(prob_of(back, "So"), 0.5, 1e-12);
  EXPECT_NEAR(prob_of(back, "Wait"), 0.3, 1e-12);
}

TEST(RolloutGate, Extremes) {
  for (int i = 0; i < 1000; ++i) {
    const auto id = "r" + std::to_string(i);
    EXPECT_FALSE(rollout_gate(5, id, 0.0));
    EXPECT_TRUE(rollout_gate(5, id, 1.0));
  }
}

TEST(RolloutGate, QuarterFractionAndDeterminism) {
  std::size_t on = 0, on_other_seed = 0;
  std::string pattern, again;
  for (int i = 0; i < 10000; ++i) {
    const auto id = "resp-" + std::to_string(i);
    const bool g = rollout_gate(20240611, id, 0.25);
    on += g;
    on_other_seed += rollout_gate(1, id, 0.25);
    pattern.push_back(g ? '1' : '0');
    again.push_back(rollout_gate(20240611, id, 0.25) ? '1' : '0');
  }
  EXPECT_GE(on, 2300u);
  EXPECT_LE(on, 2700u);
  EXPECT_GE(on_other_seed, 2300u);
  EXPECT_LE(on_other_seed, 2700u);
  EXPECT_EQ(pattern, again);
}

TEST(RolloutGate, IndependentOracle) {
  // Recompute the hash chain from its definition.
  auto fnv = [](const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    return h;
  };
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  for (std::uint64_t seed : {0ULL, 1ULL, 20240611ULL}) {
    for (const std::string id : {"", "a", "resp-17", "tag/p#3"}) {
      const double u = static_cast<double>(mix(mix(seed) ^ fnv(id)) >> 11) / 9007199254740992.0;
      EXPECT_EQ(gate_uniform(seed, id), u);
    }
  }
}

TEST(Config, ValidationAndNames) {
  auto c = at(1.5);
  EXPECT_THROW(c.validate(), ConfigError);
  c = at(0.3);
  c.rollout_probability = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_mode("global"), SuppressionMode::Global);
  EXPECT_EQ(parse_mode("sentence_start"), SuppressionMode::SentenceStartGated);
  EXPECT_THROW(parse_mode("other"), ConfigError);
  for (auto a : {SuppressionAction::Zeroed, SuppressionAction::PenaltyApplied, SuppressionAction::UntouchedGateOff})
    EXPECT_EQ(parse_action(action_name(a)), a);
  EXPECT_EQ(default_target_tokens(), (std::set<std::string>{"Wait", "wait"}));
}

TEST(EventLog, LineFormat) {
  std::ostringstream out;
  write_event_line(out, "t", {3, "Wait", 0.25, SuppressionAction::Zeroed});
  EXPECT_EQ(out.str(), "{\"trace_id\":\"t\",\"i\":3,\"token\":\"Wait\",\"p\":0.25,\"action\":\"Zeroed\"}\n");
}
