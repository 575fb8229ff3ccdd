#pragma once

#include <filesystem>
#include <map>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "anymole/camera.hpp"
#include "anymole/diffusion.hpp"
#include "anymole/estimator.hpp"
#include "anymole/mimic.hpp"
#include "anymole/render.hpp"

namespace anymole::pipeline {

std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(const std::string& bytes);

/// Parsed run configuration. Randomized stages (adapt, train-estimator,
/// generate) must carry explicit seeds; parsing rejects configs without
/// them.
struct RunConfig {
  std::filesystem::path config_path;
  std::filesystem::path output_root;
  std::filesystem::path motion_path;

  std::string camera_view = "front";
  double camera_distance = 8.0;
  double camera_scale = 9.0;
  int image_width = 64;
  int image_height = 64;
  double depth_near = 4.0;
  double depth_far = 12.0;
  Eigen::Vector3d subject_center{0.0, 1.6, 0.0};
  std::vector<std::string> views = {"front", "left", "right", "back"};
  render::RenderStyle style;

  diffusion::AdaptConfig adapt;
  diffusion::ToyModelConfig backend;

  estimator::EstimatorConfig est_model;
  estimator::TrainConfig est_train;
  std::uint64_t est_provider_seed = 555;

  std::uint64_t generate_seed = 0;

  mimic::MimicConfig mimic_cfg;
  double hl2q_threshold = 0.5;

  // Experiment ablation switches.
  bool no_icadapt = false;
  bool no_fine_stage = false;
  bool no_keyframe_weighting = false;

  std::string effective_json;  // the config as loaded, with overrides applied

  camera::CameraParams camera_for(const std::string& view_name,
                                  const Eigen::Vector3d& center) const;
  camera::CameraParams front_camera() const;
};

/// Load a config file; overrides are dotted-path assignments such as
/// "estimator.steps=200" applied to the document before parsing.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});

/// Write the bundled demo scene (motion JSON + run config) into a
/// directory.
void write_demo_scene(const std::filesystem::path& dir);

struct StageStatus {
  bool skipped = false;  // inputs unchanged and outputs present
  std::filesystem::path manifest_path;
};

StageStatus run_synth_data(const RunConfig& cfg, bool force);
StageStatus run_adapt(const RunConfig& cfg, bool force);
StageStatus run_train_estimator(const RunConfig& cfg, bool force);
StageStatus run_generate(const RunConfig& cfg, bool force);
StageStatus run_mimic(const RunConfig& cfg, bool force);

struct EvaluateOutcome {
  StageStatus status;
  std::map<std::string, double> values;
  bool thresholds_ok = true;
  std::vector<std::string> threshold_failures;
};

/// Compare the mimicked motion (or an explicit prediction) against the
/// ground truth over the keyframe window; thresholds like {"l2p", 0.02}
/// turn metric regressions into a failing exit code.
EvaluateOutcome run_evaluate(const RunConfig& cfg, bool force,
                             const std::map<std::string, double>& thresholds,
                             const std::optional<std::filesystem::path>& pred_motion = {});

/// Stage-name dispatch used by the CLI; returns the stage status.
StageStatus run_stage(const std::string& stage, const RunConfig& cfg, bool force);

}  // namespace anymole::pipeline
