#pragma once

/**
 * Subcommand implementations behind the leadtok binary. Each command reads
 * its inputs, writes into cfg.out and returns a process exit code; module
 * errors are reported on `err` and produce a nonzero code.
 *
 * Every CSV/text output starts with "# " lines holding the effective config;
 * JSONL outputs cannot carry comments, so the same JSON is written to
 * effective_config.json in the output directory.
 */

#include "leadtok/backends.hpp"
#include "leadtok/classifier.hpp"
#include "leadtok/config.hpp"
#include "leadtok/eval.hpp"
#include "leadtok/live.hpp"
#include "leadtok/loop_filter.hpp"
#include "leadtok/parallel.hpp"
#include "leadtok/plot.hpp"
#include "leadtok/segmenter.hpp"
#include "leadtok/stats.hpp"
#include "leadtok/suppressor.hpp"
#include "leadtok/trace.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace leadtok {

/// Flag values; set fields override the config file.
struct FlagOverrides {
  std::optional<double> threshold;
  std::optional<std::string> tokens;
  std::optional<std::string> mode;
  std::optional<double> underthink_alpha;
  std::optional<std::string> underthink_beta;
  std::optional<double> rollout_p;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<std::string> out;
  std::optional<std::size_t> max_tokens;
};

/// Leaves `cfg` unchanged when the result would be invalid.
inline void apply_overrides(GlobalConfig& cfg, const FlagOverrides& f) {
  GlobalConfig c = cfg;
  auto& s = c.suppression;
  if (f.threshold) s.threshold = *f.threshold;
  if (f.tokens) {
    if (*f.tokens == "default") s.target_tokens = default_target_tokens();
    else if (*f.tokens == "extended") s.target_tokens = extended_target_tokens();
    else s.target_tokens = parse_token_list(*f.tokens);
  }
  if (f.mode) s.mode = parse_mode(*f.mode);
  if (f.underthink_alpha || f.underthink_beta) {
    if (!s.underthink) s.underthink = UnderthinkConfig{};
    if (f.underthink_alpha) s.underthink->alpha = *f.underthink_alpha;
    if (f.underthink_beta) s.underthink->beta = detail::parse_beta(*f.underthink_beta);
  }
  if (f.rollout_p) s.rollout_probability = *f.rollout_p;
  if (f.seed) s.seed = *f.seed;
  if (f.jobs) c.jobs = *f.jobs;
  if (f.out) c.out = *f.out;
  if (f.max_tokens) c.max_tokens = *f.max_tokens;
  c.validate();
  cfg = std::move(c);
}

namespace detail {

inline std::filesystem::path prepare_out(const GlobalConfig& c) {
  std::filesystem::path dir(c.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoFailure("cannot create output directory " + c.out + ": " + ec.message());
  auto f = open_output((dir / "effective_config.json").string());
  f << config_to_json(c).dump(2) << '\n';
  return dir;
}

inline std::ofstream out_file(const std::filesystem::path& dir, const std::string& name) {
  return open_output((dir / name).string());
}

inline std::string file_safe(std::string_view s) {
  std::string out;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  return out.empty() ? "_" : out;
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
  }
  return 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string traces;
  std::optional<std::string> manual_labels;  // annotations JSONL for agreement
};

struct AnalyzeResult {
  std::vector<AnalyzedTrace> corpus;
  std::vector<std::optional<LoopRegion>> loops;
};

/// Segmentation, classification and loop detection for every trace.
inline AnalyzeResult analyze_traces(std::span<const TraceRecord> traces, const GlobalConfig& cfg,
                                    JudgeClient* judge = nullptr) {
  AnalyzeResult r;
  r.corpus.resize(traces.size());
  r.loops.resize(traces.size());
  parallel_for(traces.size(), cfg.jobs, [&](std::size_t i) {
    auto& at = r.corpus[i];
    at.trace_id = traces[i].id;
    at.steps = segment_trace(traces[i], cfg.segmenter);
    if (judge) {
      for (auto& js : classify_trace_with_judge(at.steps, *judge, cfg.judge.concurrency)) at.labels.push_back(js.label);
    } else {
      for (const auto& s : at.steps) at.labels.push_back(classify_heuristic(s, cfg.heuristic));
    }
    if (!at.steps.empty()) r.loops[i] = detect_tail_loop(std::span<const Step>(at.steps), cfg.loop);
  });
  return r;
}

inline int cmd_analyze(const GlobalConfig& cfg, const AnalyzeArgs& args, std::ostream& log, std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto traces = parse_trace_jsonl(args.traces);
    std::unique_ptr<HttpJudgeClient> judge;
    if (cfg.use_judge) judge = std::make_unique<HttpJudgeClient>(cfg.judge);
    const auto res = analyze_traces(traces, cfg, judge.get());
    const auto dir = detail::prepare_out(cfg);
    const std::string header = config_header(cfg, "analyze");

    std::size_t n_steps = 0, n_loops = 0;
    {
      auto cls = detail::out_file(dir, "classification.jsonl");
      auto loops = detail::out_file(dir, "loop_report.jsonl");
      for (std::size_t i = 0; i < res.corpus.size(); ++i) {
        const auto& t = res.corpus[i];
        const auto& loop = res.loops[i];
        if (loop) {
          write_loop_report_line(loops, t.trace_id, *loop);
          ++n_loops;
        }
        for (std::size_t k = 0; k < t.steps.size(); ++k) {
          const auto& s = t.steps[k];
          nlohmann::ordered_json j;
          j["trace_id"] = t.trace_id;
          j["step"] = s.ordinal;
          j["class"] = class_code(t.labels[k].cls);
          j["source"] = source_name(t.labels[k].source);
          if (s.leading_word) {
            j["leading_word"] = s.leading_word->surface;
            j["first_token"] = s.leading_word->first_token;
            j["p"] = s.leading_word->probability;
          } else {
            j["leading_word"] = nullptr;
          }
          j["in_loop"] = loop && k >= loop->start_step;
          cls << j.dump() << '\n';
          ++n_steps;
        }
      }
    }

    for (bool filtered : {false, true}) {
      const std::string variant = filtered ? "filtered" : "unfiltered";
      const auto table = leading_word_table(res.corpus, cfg.stats.top_n, filtered, cfg.loop);
      {
        auto f = detail::out_file(dir, "leading_words_" + variant + ".csv");
        f << header;
        write_leading_word_csv(f, table);
      }
      {
        auto f = detail::out_file(dir, "leading_words_" + variant + ".svg");
        write_leading_word_svg(f, table, "Leading words (" + variant + ")");
      }
      std::vector<DensityHistogram> all;
      for (const auto& tok : cfg.stats.density_tokens) {
        auto h = token_density(res.corpus, tok, cfg.stats.bins, filtered, cfg.loop);
        auto f = detail::out_file(dir, "density_" + detail::file_safe(tok) + "_" + variant + ".svg");
        write_density_svg(f, h, "P(" + tok + ") as leading token (" + variant + ")");
        all.insert(all.end(), h.begin(), h.end());
      }
      {
        auto f = detail::out_file(dir, "density_" + variant + ".csv");
        f << header;
        write_density_csv(f, all);
      }
      {
        // Gaps over the full table, not just the top-n rows.
        const auto full = leading_word_table(res.corpus, static_cast<std::size_t>(-1), filtered, cfg.loop);
        auto f = detail::out_file(dir, "confidence_gaps_" + variant + ".csv");
        f << header << "word,gap\n";
        for (const auto& [w, g] : confidence_gaps(full)) f << csv_field(w) << ',' << fmt_double(g) << '\n';
      }
    }

    if (args.manual_labels) {
      const auto gold = parse_annotations_jsonl(*args.manual_labels);
      LabelMap predicted;
      std::map<std::string, const AnalyzedTrace*> by_id;
      for (const auto& t : res.corpus) by_id[t.trace_id] = &t;
      for (const auto& [key, _] : gold) {
        auto it = by_id.find(key.first);
        if (it == by_id.end() || key.second >= it->second->labels.size())
          throw KeyMismatch("manual label for unknown step " + key.first + "#" + std::to_string(key.second));
        predicted[key] = it->second->labels[key.second].cls;
      }
      const auto rep = evaluate_against_manual(predicted, gold);
      nlohmann::ordered_json j;
      j["accuracy"] = rep.accuracy;
      j["total"] = rep.total;
      j["matched"] = rep.matched;
      for (auto g : kAllClasses)
        for (auto p : kAllClasses)
          j["confusion"][std::string(class_code(g))][std::string(class_code(p))] =
              rep.confusion[class_index(g)][class_index(p)];
      auto f = detail::out_file(dir, "agreement.json");
      f << j.dump(2) << '\n';
      log << "agreement with manual labels: " << rep.matched << "/" << rep.total << '\n';
    }
    log << "analyzed " << traces.size() << " traces, " << n_steps << " steps, " << n_loops << " tail loops -> "
        << dir.string() << '\n';
    return 0;
  });
}

// ---------------------------------------------------------------------------
// suppress-sim
// ---------------------------------------------------------------------------

struct SuppressSimArgs {
  std::string script;
  std::vector<double> thresholds;
};

struct SimRow {
  double threshold = 0.0;
  std::size_t tokens = 0;
  std::string final_token;
  std::string answer;
  std::size_t interventions = 0;
  long long saved = 0;  // baseline (threshold 0) tokens minus this row's tokens
};

inline std::vector<SimRow> suppress_sim(const ScriptedModel& model, const GlobalConfig& cfg,
                                        std::span<const double> thresholds) {
  DecodeOptions opt;
  opt.max_tokens = cfg.max_tokens;
  auto run_at = [&](double tau) {
    SuppressionConfig s = cfg.suppression;
    s.threshold = tau;
    s.validate();
    return run_scripted(model, s, cfg.segmenter, opt);
  };
  const auto baseline = run_at(0.0);
  std::vector<SimRow> rows;
  for (double tau : thresholds) {
    const auto run = run_at(tau);
    SimRow r{tau, run.token_count, run.final_token(), "", run.interventions(), 0};
    try {
      r.answer = extract_answer(run.text);
    } catch (const NoAnswerFound&) {
    }
    r.saved = static_cast<long long>(baseline.token_count) - static_cast<long long>(run.token_count);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline int cmd_suppress_sim(const GlobalConfig& cfg, const SuppressSimArgs& args, std::ostream& log, std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto model = load_script(args.script);
    std::vector<double> taus = args.thresholds;
    if (taus.empty()) taus = {cfg.suppression.threshold};
    const auto rows = suppress_sim(model, cfg, taus);
    const auto dir = detail::prepare_out(cfg);
    auto f = detail::out_file(dir, "suppress_sim.csv");
    f << config_header(cfg, "suppress-sim") << "threshold,tokens,final_token,answer,interventions,saved\n";
    log << std::left << std::setw(11) << "threshold" << std::setw(9) << "tokens" << std::setw(18) << "final_token"
        << std::setw(10) << "answer" << std::setw(15) << "interventions" << "saved\n";
    for (const auto& r : rows) {
      f << fmt_double(r.threshold) << ',' << r.tokens << ',' << csv_field(r.final_token) << ',' << csv_field(r.answer)
        << ',' << r.interventions << ',' << r.saved << '\n';
      log << std::left << std::setw(11) << fmt_double(r.threshold) << std::setw(9) << r.tokens << std::setw(18)
          << nlohmann::json(r.final_token).dump() << std::setw(10) << r.answer << std::setw(15) << r.interventions
          << r.saved << '\n';
    }
    return 0;
  });
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string run = "run";
  std::string prompt_template = "{question}";
};

struct GenerationRecord {
  std::string response_id;
  std::string problem_id;
  std::optional<LiveResult> result;
  bool truncated = false;
  std::string error;
};

inline std::string fill_prompt(const std::string& tmpl, const Problem& p) {
  std::string out;
  constexpr std::string_view key = "{question}";
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl.compare(i, key.size(), key) == 0) {
      out += p.question;
      i += key.size();
    } else {
      out.push_back(tmpl[i++]);
    }
  }
  return out;
}

inline int cmd_generate(const GlobalConfig& cfg, const GenerateArgs& args, std::ostream& log, std::ostream& err) {
  return detail::guarded(err, [&] {
    if (cfg.datasets.empty()) throw ConfigError("generate: no datasets configured");
    if (cfg.generator.endpoint.url.empty()) throw ConfigError("generate: endpoint.url is not set");
    const auto dir = detail::prepare_out(cfg);
    RunSummary summary;
    summary.run = args.run;
    nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
    auto events_out = detail::out_file(dir, "events.jsonl");
    std::size_t gate_on = 0, total = 0;

    for (const auto& ds : cfg.datasets) {
      const auto problems = load_dataset(ds.path, ds.tag);
      std::vector<GenerationRecord> recs;
      for (const auto& p : problems)
        for (std::size_t r = 0; r < ds.n_per_question; ++r)
          recs.push_back({ds.tag + "/" + p.id + "#" + std::to_string(r), p.id, std::nullopt, false, {}});
      std::map<std::string, const Problem*> by_id;
      for (const auto& p : problems) by_id[p.id] = &p;

      parallel_for(recs.size(), cfg.jobs, [&](std::size_t i) {
        auto& rec = recs[i];
        const Problem& p = *by_id.at(rec.problem_id);
        try {
          rec.result = generate_live(cfg.generator, rec.response_id, fill_prompt(args.prompt_template, p),
                                     cfg.suppression, cfg.segmenter, cfg.max_tokens);
        } catch (const LiveTruncated& e) {
          rec.result = e.partial();
          rec.truncated = true;
        } catch (const std::exception& e) {
          rec.error = e.what();
        }
        if (rec.result) {
          auto& t = rec.result->trace;
          t.gold_answer = p.gold_answer;
          t.meta["dataset"] = ds.tag;
          t.meta["problem_id"] = p.id;
          if (rec.truncated) t.meta["truncated"] = "true";
        }
      });

      std::vector<TraceRecord> traces;
      std::vector<ScoredResponse> scored;
      bool complete = true;
      for (const auto& rec : recs) {
        if (!rec.result) {
          manifest.push_back({{"dataset", ds.tag}, {"problem_id", rec.problem_id}, {"response_id", rec.response_id},
                              {"error", rec.error}});
          complete = false;
          continue;
        }
        const auto& res = *rec.result;
        ++total;
        if (res.trace.meta.at("rollout_gate") == "on") ++gate_on;
        for (const auto& ev : res.events) write_event_line(events_out, res.trace.id, ev);
        scored.push_back({rec.problem_id, generated_text(res.trace), res.trace.tokens.size()});
        traces.push_back(res.trace);
      }
      write_trace_jsonl(traces, (dir / ("traces_" + detail::file_safe(ds.tag) + ".jsonl")).string());
      if (complete) summary.datasets.push_back(score_run(scored, problems, ds.n_per_question));
      else err << "dataset " << ds.tag << ": metrics skipped, some responses failed\n";
    }

    {
      auto f = detail::out_file(dir, "metrics.json");
      f << summary_to_json(summary).dump(2) << '\n';
    }
    {
      auto f = detail::out_file(dir, "metrics.csv");
      f << config_header(cfg, "generate");
      write_metrics_csv(f, summary);
    }
    {
      auto f = detail::out_file(dir, "failures.json");
      f << manifest.dump(2) << '\n';
    }
    log << "generated " << total << " responses, rollout gate on for " << gate_on << ", " << manifest.size()
        << " failed\n";
    if (!manifest.empty()) {
      err << manifest.size() << " generation(s) failed; see " << (dir / "failures.json").string() << '\n';
      return 1;
    }
    return 0;
  });
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string baseline;
  std::vector<std::string> treated;
};

inline int cmd_report(const GlobalConfig& cfg, const ReportArgs& args, std::ostream& log, std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto base = load_summary(args.baseline);
    std::vector<RunSummary> treated;
    for (const auto& p : args.treated) treated.push_back(load_summary(p));
    std::ostringstream table;
    render_report(table, base, treated);
    const auto dir = detail::prepare_out(cfg);
    {
      auto f = detail::out_file(dir, "report.txt");
      f << config_header(cfg, "report") << table.str();
    }
    {
      auto f = detail::out_file(dir, "comparison.csv");
      f << config_header(cfg, "report");
      write_comparison_csv(f, base, treated);
    }
    log << table.str();
    return 0;
  });
}

// ---------------------------------------------------------------------------
// golden: shared decision/transform vectors for language bindings
// ---------------------------------------------------------------------------

struct GoldenArgs {
  std::size_t cases = 1000;
  std::uint64_t seed = 20240611;
  std::string file = "golden_vectors.jsonl";
};

inline nlohmann::ordered_json binding_config_json(const SuppressionConfig& s) {
  nlohmann::ordered_json j;
  j["tokens"] = std::vector<std::string>(s.target_tokens.begin(), s.target_tokens.end());
  j["threshold"] = s.threshold;
  j["mode"] = mode_name(s.mode);
  j["rollout_p"] = s.rollout_probability;
  j["seed"] = s.seed;
  return j;
}

/// Deterministic golden cases: a decide() query and a suppress_distribution() transform each.
inline std::vector<nlohmann::ordered_json> golden_cases(std::size_t n, std::uint64_t seed) {
  static const std::vector<std::string> pool = {"Wait",  "wait", " Wait", " wait", "But",  "but",  "Alternatively",
                                                "alternatively", "So", " So",  "Let",  " the", "Hmm",  "\n\n"};
  static const double taus[] = {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
  // Raw engine output only, so the file is identical across standard libraries.
  std::mt19937_64 rng(seed);
  auto unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  std::vector<nlohmann::ordered_json> out;
  for (std::size_t c = 0; c < n; ++c) {
    SuppressionConfig s;
    s.target_tokens = rng() % 2 ? default_target_tokens() : extended_target_tokens();
    s.threshold = taus[rng() % std::size(taus)];
    s.mode = rng() % 2 ? SuppressionMode::Global : SuppressionMode::SentenceStartGated;

    const std::string token = pool[rng() % pool.size()];
    // Mix of boundary values and uniform draws.
    double p = unit();
    if (rng() % 4 == 0) p = taus[rng() % std::size(taus)];
    const bool at_start = rng() % 2;
    const bool gate = rng() % 5 != 0;

    std::vector<std::string> toks = pool;
    for (std::size_t i = toks.size(); i > 1; --i) std::swap(toks[i - 1], toks[rng() % i]);
    toks.resize(2 + rng() % 5);
    std::vector<std::pair<std::string, double>> entries;
    double z = 0.0;
    for (const auto& t : toks) {
      const double w = unit() + 1e-3;
      entries.emplace_back(t, w);
      z += w;
    }
    for (auto& e : entries) e.second /= z;
    auto dist = TokenDistribution::from_unsorted(std::move(entries), false);

    nlohmann::ordered_json j;
    j["case"] = c;
    j["config"] = binding_config_json(s);
    j["token"] = token;
    j["p"] = p;
    j["at_sentence_start"] = at_start;
    j["gate_active"] = gate;
    j["decision"] = decide(token, p, s, at_start, gate) == Decision::Ban ? "Ban" : "Allow";
    nlohmann::ordered_json probs = nlohmann::ordered_json::object();
    for (const auto& [t, q] : dist.entries) probs[t] = q;
    j["probabilities"] = probs;
    try {
      auto r = suppress_distribution(dist, s, at_start, gate);
      nlohmann::ordered_json expected = nlohmann::ordered_json::object();
      for (const auto& [t, q] : r.distribution.entries) expected[t] = q;
      j["expected"] = expected;
      j["error"] = nullptr;
    } catch (const AllMassRemoved&) {
      j["expected"] = nullptr;
      j["error"] = "AllMassRemoved";
    }
    out.push_back(std::move(j));
  }
  return out;
}

inline int cmd_golden(const GlobalConfig& cfg, const GoldenArgs& args, std::ostream& log, std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto dir = detail::prepare_out(cfg);
    auto f = detail::out_file(dir, args.file);
    const auto cases = golden_cases(args.cases, args.seed);
    for (const auto& c : cases) f << c.dump() << '\n';
    log << "wrote " << cases.size() << " golden cases to " << (dir / args.file).string() << '\n';
    return 0;
  });
}

}  // namespace leadtok
