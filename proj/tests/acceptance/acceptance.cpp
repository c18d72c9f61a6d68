// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "leadtok/commands.hpp"
#include "support/loop_oracle.hpp"
#include "support/mock_completions.hpp"
#include "support/synthetic.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace leadtok;

namespace {

std::string data(const std::string& rel) { return std::string(LEADTOK_DATA_DIR) + "/" + rel; }

struct Check {
  std::string failure;
  void expect(bool ok, const std::string& what) {
    if (!ok && failure.empty()) failure = what;
  }
};

int failures = 0;

void criterion(const std::string& name, double limit_s, const std::function<void(Check&)>& body) {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.expect(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0 && secs >= limit_s) c.expect(false, "runtime " + std::to_string(secs) + " s over limit");
  std::ostringstream line;
  line << (c.failure.empty() ? "PASS" : "FAIL") << "  " << name << "  (" << std::fixed;
  line.precision(3);
  line << secs << " s)";
  if (!c.failure.empty()) line << "  " << c.failure;
  std::cout << line.str() << std::endl;
  failures += !c.failure.empty();
}

SuppressionConfig at(double tau) {
  SuppressionConfig c;
  c.threshold = tau;
  return c;
}

const double kTaus[] = {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0};

void suppression_algebra(Check& c) {
  fixtures::Rng rng(101);
  for (double tau : kTaus) {
    for (int i = 0; i < 10000; ++i) {
      auto cfg = at(tau);
      cfg.target_tokens = rng.coin() ? extended_target_tokens() : default_target_tokens();
      if (rng.coin()) cfg.mode = SuppressionMode::SentenceStartGated;
      const bool start = rng.coin(0.7), gate = rng.coin(0.9);
      const auto in = fixtures::random_distribution(rng, 8, rng.coin());
      std::map<std::string, double> kept_in;
      bool any_ban = false;
      for (const auto& [t, p] : in.entries) {
        if (decide(t, p, cfg, start, gate) == Decision::Ban) any_ban = true;
        else kept_in[t] = p;
      }
      SuppressionResult r;
      try {
        r = suppress_distribution(in, cfg, start, gate);
      } catch (const AllMassRemoved&) {
        c.expect(kept_in.empty(), "AllMassRemoved with allowed entries");
        continue;
      }
      const auto& out = r.distribution;
      c.expect(std::abs(out.total() - in.total()) <= 1e-9, "mass not preserved");
      c.expect(out.entries.size() == kept_in.size(), "decide() disagrees with kept set");
      if (!any_ban) c.expect(out == in, "not identity without sub-threshold targets");
      double ratio = -1.0;
      for (const auto& [t, p] : out.entries) {
        auto it = kept_in.find(t);
        if (it == kept_in.end()) {
          c.expect(false, "banned entry survived: " + t);
          continue;
        }
        const double q = p / it->second;
        if (ratio < 0) ratio = q;
        c.expect(std::abs(q - ratio) <= 1e-9 * ratio, "untouched ratios changed");
      }
    }
  }
}

void threshold_monotonicity(Check& c) {
  fixtures::Rng rng(202);
  for (int i = 0; i < 200; ++i) {
    const auto t = fixtures::random_trace(rng, "m" + std::to_string(i), 80);
    std::set<std::pair<std::size_t, std::string>> prev;
    for (double tau : kTaus) {
      auto cfg = at(tau);
      cfg.target_tokens = extended_target_tokens();
      std::set<std::pair<std::size_t, std::string>> cur;
      for (const auto& e : replay_measure(t, cfg).events)
        if (e.action == SuppressionAction::Zeroed) cur.insert({e.token_index, e.token});
      c.expect(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()), "Zeroed set shrank as tau grew");
      prev = std::move(cur);
    }
  }
}

void underthink(Check& c) {
  auto cfg = at(0.0);
  cfg.underthink = UnderthinkConfig{3.0, 600};
  const Logits in = {{"Wait", 1.25}, {"So", -0.5}, {"wait", -2.0}};
  for (std::size_t pos : {0u, 599u}) {
    const auto out = underthink_adjust(in, cfg, pos);
    c.expect(out[0].second == 1.25 - 3.0 && out[2].second == -2.0 - 3.0, "target not reduced by 3 at " + std::to_string(pos));
    c.expect(out[1].second == -0.5, "non-target changed");
  }
  c.expect(underthink_adjust(in, cfg, 600) == in, "modified at position 600");
  cfg.underthink->beta = std::nullopt;
  c.expect(underthink_adjust(in, cfg, 1000000)[0].second == 1.25 - 3.0, "infinite window not applied at 1e6");
}

void rollout(Check& c) {
  auto run = [] {
    std::string pattern;
    for (int i = 0; i < 10000; ++i) pattern.push_back(rollout_gate(20240611, "resp-" + std::to_string(i), 0.25) ? '1' : '0');
    return pattern;
  };
  const auto a = run(), b = run();
  const double frac = static_cast<double>(std::count(a.begin(), a.end(), '1')) / 10000.0;
  c.expect(frac >= 0.23 && frac <= 0.27, "fraction " + std::to_string(frac));
  c.expect(a == b, "pattern differs on rerun");
}

void scripted_detour(Check& c) {
  const auto m = load_script(data("scripts/detour.json"));
  const auto base = run_scripted(m, at(0.0));
  const auto sup = run_scripted(m, at(0.3));
  const auto low = run_scripted(m, at(0.1));
  c.expect(base.token_count == sup.token_count + 40, "tau=0.3 not 40 tokens shorter");
  c.expect(sup.final_token() == base.final_token(), "final answer token differs");
  c.expect(low.text == base.text && low.token_count == base.token_count, "tau=0.1 differs from baseline");
}

void loop_oracle(Check& c) {
  fixtures::Rng rng(42);
  const LoopParams p;
  for (std::size_t k = 1; k <= 6; ++k)
    for (std::size_t m = 2; m * k <= 30; ++m)
      for (std::size_t prefix = 0; prefix + m * k <= 30; ++prefix) {
        const auto s = fixtures::loop_fixture(rng, prefix, k, m);
        const auto want = fixtures::brute_tail_loop(s, p.max_period, p.min_reps);
        const auto got = detect_tail_loop(std::span<const std::string>(s), p);
        c.expect(want && got && got->start_step == want->start_step && got->period == want->period &&
                     got->repetitions == want->repetitions,
                 "mismatch at k=" + std::to_string(k) + " m=" + std::to_string(m));
      }
  for (int i = 0; i < 20000; ++i) {
    std::vector<std::string> s;
    const auto n = rng.below(31);
    for (std::size_t j = 0; j < n; ++j) s.push_back("w" + std::to_string(rng.below(3)));
    const auto got = detect_tail_loop(std::span<const std::string>(s), p);
    c.expect(got == fixtures::brute_tail_loop(s, p.max_period, p.min_reps), "random sequence mismatch");
  }
  for (int i = 0; i < 100; ++i) {
    const auto s = fixtures::loop_free_fixture(rng, 1 + rng.below(30));
    c.expect(!detect_tail_loop(std::span<const std::string>(s), p), "false positive on loop-free fixture");
  }
}

void statistics_direction(Check& c) {
  const auto traces = parse_trace_jsonl(data("fixtures/sample_traces.jsonl"));
  const GlobalConfig cfg;
  const auto res = analyze_traces(traces, cfg);
  for (bool filtered : {false, true}) {
    const auto table = leading_word_table(res.corpus, static_cast<std::size_t>(-1), filtered, cfg.loop);
    c.expect(confidence_gap(table, "Wait") > 0.0, "confidence gap not positive");
  }
  auto sa = [&](bool filtered) {
    for (const auto& h : token_density(res.corpus, "Wait", 20, filtered, cfg.loop))
      if (h.cls == ReflectionClass::SelfAffirmation) return h;
    throw std::runtime_error("no self-affirmation density");
  };
  const auto un = sa(false), fi = sa(true);
  c.expect(un.center_of_mass() > fi.center_of_mass(), "unfiltered SA mass not shifted toward 1.0");
  c.expect(un.bin_mass.back() > fi.bin_mass.back(), "top bin did not gain mass");
}

void report_arithmetic(Check& c) {
  const auto base = load_summary(data("fixtures/metrics_baseline.json"));
  const auto treated = load_summary(data("fixtures/metrics_treated.json"));
  const auto row = compare_runs(base.datasets.at(0), treated.datasets.at(0));
  c.expect(detail::signed1(row.length_delta_percent) == "−18.7", "length delta " + detail::signed1(row.length_delta_percent));
  c.expect(detail::signed1(row.accuracy_delta_points) == "−0.7", "accuracy delta " + detail::signed1(row.accuracy_delta_points));
  std::ostringstream out;
  const std::vector<RunSummary> ts = {treated};
  render_report(out, base, ts);
  c.expect(out.str().find("−18.7%") != std::string::npos && out.str().find("(−0.7)") != std::string::npos,
           "rendered table lacks the deltas");
}

void judge_protocol(Check& c) {
  fixtures::MockServer server("/v1/chat/completions", [](const nlohmann::json& body) {
    const auto msg = fixtures::last_user_message(body);
    if (msg.find("Current step: Compute") != std::string::npos) return fixtures::chat_reply("<answer>No</answer>");
    if (msg.find("Current step: Hmm") != std::string::npos) return fixtures::chat_reply("I am not sure.");
    return fixtures::chat_reply("<answer>Yes</answer>");
  });
  JudgeEndpointConfig jc;
  jc.endpoint.url = server.url();
  jc.endpoint.model = "judge";
  jc.endpoint.api_key_env = "";
  jc.endpoint.retries = 0;
  HttpJudgeClient client(jc);
  std::vector<Step> steps;
  for (const char* t : {"Compute 7*7 = 49.", "Wait, 49 is correct.", "Hmm."}) steps.push_back({steps.size(), t, {}, {}, {}});

  c.expect(classify_judge(steps[0], {}, client).cls == ReflectionClass::NonReflective, "No not mapped to NR");
  auto reqs = server.requests();
  c.expect(reqs.size() == 1, "No path issued more than one request");
  const std::string first =
      "Current step: Compute 7*7 = 49.\n\nPlease help me determine the function of the current step.\n\n"
      "Is the current step a reflective behavior?\n\nOutput the answer directly to <answer></answer>, for example, "
      "<answer>Yes</answer> or <answer>No</answer>.";
  c.expect(!reqs.empty() && fixtures::last_user_message(reqs[0]) == first, "first prompt bytes differ");

  const JudgeContext ctx{std::span(steps).first(1), {}};
  c.expect(classify_judge(steps[1], ctx, client).cls == ReflectionClass::SelfAffirmation, "Yes,Yes not mapped to SA");
  reqs = server.requests();
  const std::string second =
      "The previous steps: Compute 7*7 = 49.\n\nThe initial step of reflection: Wait, 49 is correct.\n\n"
      "The subsequent steps of reflection: \n\nPlease help me judge the role of the reflection steps. Is the result "
      "of the reflection affirms the previous content? Output your answer directly to <answer></answer>, for "
      "example, <answer>Yes</answer> or <answer>No</answer>.";
  c.expect(reqs.size() == 3 && fixtures::last_user_message(reqs[2]) == second, "second prompt bytes differ");

  bool threw = false;
  try {
    classify_judge(steps[2], {}, client);
  } catch (const JudgeUnparseable&) {
    threw = true;
  }
  c.expect(threw, "tagless reply did not raise JudgeUnparseable");
}

void roundtrip_and_replay(Check& c) {
  fixtures::Rng rng(303);
  for (int i = 0; i < 100; ++i) {
    const auto t = fixtures::random_trace(rng, "rt" + std::to_string(i));
    const auto line = trace_to_line(t);
    std::istringstream in(line + "\n");
    const auto back = parse_trace_jsonl(in);
    c.expect(back.size() == 1 && back[0] == t && trace_to_line(back[0]) == line, "trace did not round-trip");
  }
  fixtures::MockServer server("/v1/completions", fixtures::mock_model());
  LiveEndpointConfig ep;
  ep.endpoint.url = server.url();
  ep.endpoint.model = "mock";
  ep.endpoint.api_key_env = "";
  ep.endpoint.retries = 0;
  ep.chunk_tokens = 4;
  ep.bias_token_ids = {{"Wait", 1}, {"wait", 2}};
  const auto cfg = at(0.3);
  const auto res = generate_live(ep, "live-0", "Compute.\n" + fixtures::kThinkMarker, cfg);
  c.expect(res.events.size() == 1, "live run logged " + std::to_string(res.events.size()) + " events");
  std::istringstream in(trace_to_line(res.trace));
  c.expect(replay_measure(parse_trace_jsonl(in).at(0), cfg).events == res.events, "live events differ from replay");
}

}  // namespace

int main() {
  criterion("suppression algebra", 5.0, suppression_algebra);
  criterion("threshold monotonicity", 5.0, threshold_monotonicity);
  criterion("underthink semantics", 0, underthink);
  criterion("rollout gate", 0, rollout);
  criterion("scripted detour counterfactual", 1.0, scripted_detour);
  criterion("loop filter oracle equivalence", 10.0, loop_oracle);
  criterion("statistics direction", 0, statistics_direction);
  criterion("report arithmetic", 0, report_arithmetic);
  criterion("judge protocol", 0, judge_protocol);
  criterion("trace round-trip and replay self-consistency", 0, roundtrip_and_replay);
  std::cout << (failures ? "FAIL" : "PASS") << "  " << failures << " criterion failure(s)" << std::endl;
  return failures ? 1 : 0;
}
