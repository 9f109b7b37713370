#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "triage/dataset.hpp"
#include "triage/io.hpp"
#include "triage/pipeline.hpp"

namespace {

struct StageArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  bool force = false;
  bool quiet = false;
};

void add_stage_flags(CLI::App* cmd, StageArgs& args) {
  cmd->add_option("-c,--config", args.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", args.overrides, "override a config key, e.g. sampling.seed=7 (repeatable)");
  cmd->add_option("-o,--out", args.out, "run directory (overrides output_dir)");
  cmd->add_flag("--force", args.force, "recompute stages even when their outputs are reusable");
  cmd->add_flag("-q,--quiet", args.quiet, "only print errors");
}

int run_stage(const StageArgs& args, std::optional<triage::Stage> target) {
  std::optional<std::filesystem::path> out;
  if (!args.out.empty()) out = args.out;
  auto cfg = triage::load_experiment_config(args.config, args.overrides, out);
  triage::RunOptions opts;
  opts.target = target;
  opts.force = args.force;
  opts.log = args.quiet ? nullptr : &std::cerr;
  auto manifest = triage::run_experiment(cfg, opts);
  if (!args.quiet) {
    std::size_t reused = 0;
    for (const auto& s : manifest.stages) reused += s.reused ? 1 : 0;
    fmt::print(std::cerr, "{} stage(s), {} reused; manifest at {}\n", manifest.stages.size(), reused,
               (cfg.output_dir / "manifest.json").string());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Triage benchmark: sampling, classification and evaluation of patient-message triage"};
  app.set_version_flag("--version", std::string(triage::kToolVersion));
  app.require_subcommand(1);

  StageArgs stage_args;
  std::optional<triage::Stage> target;
  bool stage_cmd = false;

  const std::vector<std::pair<triage::Stage, std::string>> stages = {
      {triage::Stage::Filter, "apply the token and character length filter"},
      {triage::Stage::Sample, "score, bucket and draw the working pool"},
      {triage::Stage::Split, "split the pool into silver, gold and few-shot sets"},
      {triage::Stage::Train, "fit the TF-IDF logistic-regression baseline and predict gold"},
      {triage::Stage::Classify, "classify gold cases with the configured model backends"},
      {triage::Stage::Ingest, "read external prediction files"},
      {triage::Stage::Evaluate, "compute metrics, intervals, McNemar tests and label agreement"},
      {triage::Stage::Consensus, "two-model consensus sweep with oracle review"},
      {triage::Stage::Report, "write csv/markdown tables and the trade-off plot"},
  };
  for (const auto& [stage, help] : stages) {
    auto* cmd = app.add_subcommand(std::string(triage::to_string(stage)), help + " (runs prerequisites as needed)");
    add_stage_flags(cmd, stage_args);
    cmd->callback([&, s = stage] {
      target = s;
      stage_cmd = true;
    });
  }
  auto* run = app.add_subcommand("run", "run the full pipeline");
  add_stage_flags(run, stage_args);
  run->callback([&] { stage_cmd = true; });

  std::string path_a, path_b, gold_path, compare_out;
  auto* compare = app.add_subcommand("compare", "McNemar test and metric deltas between two prediction sets");
  compare->add_option("--a", path_a, "first prediction set (JSON)")->required()->check(CLI::ExistingFile);
  compare->add_option("--b", path_b, "second prediction set (JSON)")->required()->check(CLI::ExistingFile);
  compare->add_option("--gold", gold_path, "reference labels (id,label csv or json-lines)")
      ->required()
      ->check(CLI::ExistingFile);
  compare->add_option("-o,--out", compare_out, "write the result here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (stage_cmd) return run_stage(stage_args, target);
    if (compare->parsed()) {
      auto a = triage::load_prediction_set(path_a);
      auto b = triage::load_prediction_set(path_b);
      auto gold = triage::load_label_map(gold_path);
      auto text = triage::to_json(triage::compare_runs(gold, a, b)).dump(2) + "\n";
      if (compare_out.empty()) std::cout << text;
      else triage::write_file_atomic(compare_out, text);
      return 0;
    }
  } catch (const triage::PipelineError& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
