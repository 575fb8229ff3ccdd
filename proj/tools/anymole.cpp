// anymole — motion in-betweening pipeline driver.
//
// Subcommands run the pipeline stages (synth-data, adapt, train-estimator,
// generate, mimic, evaluate) against a JSON run config; demo-scene writes
// a self-contained synthetic scene to get started.

#include <CLI11.hpp>
#include <iostream>

#include "anymole/errors.hpp"
#include "anymole/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kThresholdFailure = 1;
constexpr int kInputError = 2;

struct StageArgs {
  std::string config;
  std::vector<std::string> overrides;
  bool force = false;
};

void add_stage_options(CLI::App* cmd, StageArgs& args) {
  cmd->add_option("--config", args.config, "run config JSON")->required();
  cmd->add_option("--set", args.overrides,
                  "override a config field, e.g. --set estimator.steps=200");
  cmd->add_flag("--force", args.force, "re-run even when inputs are unchanged");
}

int run_one(const std::string& stage, const StageArgs& args) {
  const auto cfg = anymole::pipeline::load_run_config(args.config, args.overrides);
  const auto status = anymole::pipeline::run_stage(stage, cfg, args.force);
  std::cout << stage << (status.skipped ? ": up to date (skipped)" : ": done") << "  ["
            << status.manifest_path.string() << "]\n";
  return kOk;
}

std::map<std::string, double> parse_thresholds(const std::vector<std::string>& raw) {
  std::map<std::string, double> thresholds;
  for (const auto& t : raw) {
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw anymole::ConfigError("--threshold expects metric=value, got \"" + t + "\"");
    thresholds[t.substr(0, eq)] = std::stod(t.substr(eq + 1));
  }
  return thresholds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anymole: motion in-betweening for arbitrary skeletons"};
  app.require_subcommand(1);

  StageArgs synth, adapt, train, generate, mimic_args, eval_args;
  std::string demo_dir = "demo";
  std::vector<std::string> thresholds_raw;
  std::string eval_pred;

  add_stage_options(app.add_subcommand("synth-data", "render context and keyframe views"), synth);
  add_stage_options(app.add_subcommand("adapt", "fine-tune the video backend on the context"),
                    adapt);
  add_stage_options(
      app.add_subcommand("train-estimator", "train the scene-specific joint estimator"), train);
  add_stage_options(app.add_subcommand("generate", "two-stage in-between video generation"),
                    generate);
  auto* mimic_cmd =
      app.add_subcommand("mimic", "recover 3-D motion from the generated video");
  add_stage_options(mimic_cmd, mimic_args);
  auto* eval_cmd = app.add_subcommand("evaluate", "compare recovered motion with ground truth");
  add_stage_options(eval_cmd, eval_args);
  eval_cmd->add_option("--threshold", thresholds_raw,
                       "fail (exit 1) when metric exceeds value, e.g. --threshold l2p=0.02");
  eval_cmd->add_option("--pred", eval_pred, "evaluate this motion JSON instead of mimic output");

  auto* demo_cmd = app.add_subcommand("demo-scene", "write the bundled synthetic scene");
  demo_cmd->add_option("--out", demo_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("demo-scene")) {
      anymole::pipeline::write_demo_scene(demo_dir);
      std::cout << "demo scene written to " << demo_dir << "\n";
      return kOk;
    }
    if (app.got_subcommand("synth-data")) return run_one("synth-data", synth);
    if (app.got_subcommand("adapt")) return run_one("adapt", adapt);
    if (app.got_subcommand("train-estimator")) return run_one("train-estimator", train);
    if (app.got_subcommand("generate")) return run_one("generate", generate);
    if (app.got_subcommand("mimic")) return run_one("mimic", mimic_args);
    if (app.got_subcommand("evaluate")) {
      const auto cfg = anymole::pipeline::load_run_config(eval_args.config, eval_args.overrides);
      std::optional<std::filesystem::path> pred;
      if (!eval_pred.empty()) pred = eval_pred;
      const auto outcome = anymole::pipeline::run_evaluate(
          cfg, eval_args.force, parse_thresholds(thresholds_raw), pred);
      for (const auto& [name, value] : outcome.values)
        std::cout << name << " = " << value << "\n";
      if (!outcome.thresholds_ok) {
        for (const auto& f : outcome.threshold_failures) std::cerr << "threshold: " << f << "\n";
        return kThresholdFailure;
      }
      return kOk;
    }
  } catch (const anymole::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const anymole::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const anymole::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kOk;
}
