// leadtok: command-line entry point.

#include "leadtok/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Common {
  std::string config_path;
  leadtok::FlagOverrides flags;
};

void add_common(CLI::App& sub, Common& c) {
  auto& f = c.flags;
  sub.add_option("--config", c.config_path, "JSON config file (flags override it)");
  sub.add_option("--threshold", f.threshold, "suppression threshold tau in [0,1]");
  sub.add_option("--tokens", f.tokens, "target tokens: default, extended, or a comma list");
  sub.add_option("--mode", f.mode, "global or sentence_start");
  sub.add_option("--underthink-alpha", f.underthink_alpha, "Underthink logit offset");
  sub.add_option("--underthink-beta", f.underthink_beta, "Underthink window in tokens, or inf");
  sub.add_option("--rollout-p", f.rollout_p, "per-response intervention probability");
  sub.add_option("--seed", f.seed, "seed for the rollout gate");
  sub.add_option("--jobs", f.jobs, "parallel workers");
  sub.add_option("--out", f.out, "output directory");
  sub.add_option("--max-tokens", f.max_tokens, "generation cap (default 32768)");
}

leadtok::GlobalConfig resolve(const Common& c) {
  leadtok::GlobalConfig cfg = c.config_path.empty() ? leadtok::GlobalConfig{} : leadtok::load_config(c.config_path);
  leadtok::apply_overrides(cfg, c.flags);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"leadtok: locate and suppress low-confidence reflection onsets in reasoning traces"};
  app.require_subcommand(1);

  Common analyze_c, sim_c, gen_c, report_c, golden_c;
  leadtok::AnalyzeArgs analyze_a;
  leadtok::SuppressSimArgs sim_a;
  leadtok::GenerateArgs gen_a;
  leadtok::ReportArgs report_a;
  leadtok::GoldenArgs golden_a;
  std::optional<std::string> labels;

  auto* analyze = app.add_subcommand("analyze", "segment, classify and summarize recorded traces");
  add_common(*analyze, analyze_c);
  analyze->add_option("traces", analyze_a.traces, "trace JSONL")->required();
  analyze->add_option("--labels", labels, "manual annotations JSONL for agreement");

  auto* sim = app.add_subcommand("suppress-sim", "threshold sweep on a scripted model");
  add_common(*sim, sim_c);
  sim->add_option("script", sim_a.script, "script JSON")->required();
  sim->add_option("--thresholds", sim_a.thresholds, "thresholds to evaluate")->delimiter(',');

  auto* gen = app.add_subcommand("generate", "generate against a live endpoint and score");
  add_common(*gen, gen_c);
  gen->add_option("--run", gen_a.run, "run name stored in metrics");
  gen->add_option("--prompt-template", gen_a.prompt_template, "prompt with a {question} placeholder");

  auto* report = app.add_subcommand("report", "compare metrics files against a baseline");
  add_common(*report, report_c);
  report->add_option("baseline", report_a.baseline, "baseline metrics.json")->required();
  report->add_option("treated", report_a.treated, "treated metrics.json files")->required();

  auto* golden = app.add_subcommand("golden", "write decision/transform golden vectors for bindings");
  add_common(*golden, golden_c);
  golden->add_option("--cases", golden_a.cases, "number of cases");
  golden->add_option("--golden-seed", golden_a.seed, "generator seed");
  golden->add_option("--file", golden_a.file, "output file name inside --out");

  CLI11_PARSE(app, argc, argv);

  try {
    if (analyze->parsed()) {
      analyze_a.manual_labels = labels;
      return leadtok::cmd_analyze(resolve(analyze_c), analyze_a, std::cout, std::cerr);
    }
    if (sim->parsed()) return leadtok::cmd_suppress_sim(resolve(sim_c), sim_a, std::cout, std::cerr);
    if (gen->parsed()) return leadtok::cmd_generate(resolve(gen_c), gen_a, std::cout, std::cerr);
    if (report->parsed()) return leadtok::cmd_report(resolve(report_c), report_a, std::cout, std::cerr);
    if (golden->parsed()) return leadtok::cmd_golden(resolve(golden_c), golden_a, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
