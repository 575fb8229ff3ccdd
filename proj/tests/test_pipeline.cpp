#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "anymole/errors.hpp"
#include "anymole/motion.hpp"
#include "anymole/pipeline.hpp"
#include "anymole/toyscene.hpp"

using namespace anymole;
namespace fs = std::filesystem;

namespace {

// A reduced scene keeps the integration suite quick: 4 seconds at 32x32
// with shortened training; the stage wiring is identical to the defaults.
fs::path make_small_run(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("anymole_pipeline_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);

  toyscene::SceneSpec spec;
  spec.total_seconds = 4;
  spec.image_size = 32;
  spec.camera_scale = 4.5;
  motion::save_motion(toyscene::make_motion(spec), dir / "motion.json");

  std::ofstream cfg(dir / "config.json");
  cfg << R"({
  "output_root": "out",
  "scene": {"motion": "motion.json"},
  "camera": {"view": "front", "distance": 8.0, "scale": 4.5, "image": [32, 32],
             "depth_range": [4.0, 12.0], "subject_center": [0.0, 1.6, 0.0]},
  "views": ["front", "left", "right", "back"],
  "render": {"joint_radius": 1.2, "bone_thickness": 0.8, "softness": 1.0, "background": 0.05},
  "adapt": {"steps": 6, "learning_rate": 0.005, "batch_size": 4, "views": 4,
            "intervals": [1, 2, 3], "seed": 11, "t_max": 10,
            "text": "a rigged character animating in a fixed scene"},
  "estimator": {"steps": 30, "batch_size": 8, "learning_rate": 0.002, "views": 3,
                "keyframe_weight": 3, "seed": 22, "provider_patch": 4,
                "provider_channels": 6, "merged_channels": 6, "depth_hidden": 16,
                "init_seed": 77, "provider_seed": 555},
  "generate": {"seed": 33},
  "mimic": {"lambda_img": 50.0, "lambda_pos": 7000.0, "lambda_rot": 30000.0,
            "steps": 3, "batch_size": 6, "views": 1, "step_size": 0.01},
  "evaluate": {"hl2q_threshold": 0.5}
})";
  return dir;
}

}  // namespace

TEST_CASE("config: randomized stages demand explicit seeds") {
  const auto dir = make_small_run("seeds");
  CHECK_THROWS_AS(
      pipeline::load_run_config(dir / "config.json", {"estimator.seed=null"}),
      ConfigError);
  // Removing is awkward through overrides; a null seed triggers the same
  // rejection path as a missing one.
}

TEST_CASE("config: overrides reach nested fields") {
  const auto dir = make_small_run("overrides");
  const auto cfg = pipeline::load_run_config(dir / "config.json", {"estimator.steps=99"});
  CHECK(cfg.est_train.steps == 99);
  CHECK_THROWS_AS(pipeline::load_run_config(dir / "config.json", {"bad-override"}), ConfigError);
}

TEST_CASE("stage order is enforced with the missing artifact named") {
  const auto dir = make_small_run("order");
  const auto cfg = pipeline::load_run_config(dir / "config.json");
  try {
    pipeline::run_adapt(cfg, false);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.find("synth") != std::string::npos);
  }
  CHECK_THROWS_AS(pipeline::run_mimic(cfg, false), ConfigError);
}

TEST_CASE("full pipeline: stages, idempotence, determinism, evaluation") {
  const auto dir = make_small_run("full");
  const auto cfg = pipeline::load_run_config(dir / "config.json");

  // synth-data
  auto status = pipeline::run_synth_data(cfg, false);
  CHECK_FALSE(status.skipped);
  CHECK(fs::exists(cfg.output_root / "synth" / "front" / "")
        == false);  // frames live under context/keyframes
  CHECK(fs::exists(cfg.output_root / "synth" / "context" / "front" / "frame_00000.png"));
  CHECK(fs::exists(cfg.output_root / "synth" / "keyframes" / "back" / "frame_00002.png"));
  CHECK(fs::exists(cfg.output_root / "synth" / "dataset.json"));
  // Two seconds of context at 30 fps in each of the four views.
  for (const auto& view : {"front", "left", "right", "back"}) {
    int frames = 0;
    for (const auto& entry :
         fs::directory_iterator(cfg.output_root / "synth" / "context" / view))
      frames += entry.path().extension() == ".png" ? 1 : 0;
    CHECK(frames == 60);
  }

  // Idempotence: unchanged inputs skip the stage.
  status = pipeline::run_synth_data(cfg, false);
  CHECK(status.skipped);
  status = pipeline::run_synth_data(cfg, true);
  CHECK_FALSE(status.skipped);

  // adapt + train-estimator (order-independent, shared synth inputs)
  CHECK_FALSE(pipeline::run_adapt(cfg, false).skipped);
  CHECK(pipeline::run_adapt(cfg, false).skipped);
  CHECK_FALSE(pipeline::run_train_estimator(cfg, false).skipped);
  CHECK(fs::exists(cfg.output_root / "adapt" / "model.bin"));
  CHECK(fs::exists(cfg.output_root / "estimator" / "model.json"));

  // generate
  CHECK_FALSE(pipeline::run_generate(cfg, false).skipped);
  CHECK(fs::exists(cfg.output_root / "generate" / "plan.json"));
  CHECK(fs::exists(cfg.output_root / "generate" / "fine" / "frame_00060.png"));
  {
    std::ifstream plan(cfg.output_root / "generate" / "plan.json");
    std::string text((std::istreambuf_iterator<char>(plan)), std::istreambuf_iterator<char>());
    // 4-second scene: 2 coarse + 4 fine backend calls.
    CHECK(text.find("\"total_backend_calls\": 6") != std::string::npos);
  }

  // mimic
  CHECK_FALSE(pipeline::run_mimic(cfg, false).skipped);
  const auto m15 = cfg.output_root / "mimic" / "motion15.json";
  REQUIRE(fs::exists(m15));
  const auto recovered = motion::load_motion(m15);
  CHECK(recovered.fps == 15);
  CHECK(recovered.poses.size() == 31);  // keyframe span 2..4 s at 15 fps
  CHECK(fs::exists(cfg.output_root / "mimic" / "motion30.json"));
  CHECK(fs::exists(cfg.output_root / "mimic" / "trace.csv"));

  // Keyframe poses bitwise equal to the ground truth.
  const auto gt = motion::load_motion(cfg.motion_path);
  for (size_t i = 0; i < recovered.keyframe_indices.size(); ++i) {
    const auto& rec = recovered.poses[static_cast<size_t>(recovered.keyframe_indices[i])];
    const auto& expect = gt.poses[static_cast<size_t>(gt.keyframe_indices[i])];
    CHECK(rec.root_position == expect.root_position);
    for (size_t j = 0; j < rec.rotations.size(); ++j)
      CHECK(rec.rotations[j].coeffs() == expect.rotations[j].coeffs());
  }

  // evaluate: thresholds drive the pass/fail flag.
  const auto outcome = pipeline::run_evaluate(cfg, false, {});
  CHECK(outcome.values.count("l2q") == 1);
  CHECK(outcome.values.count("ssim") == 1);
  CHECK(outcome.thresholds_ok);
  const auto failing = pipeline::run_evaluate(cfg, false, {{"l2p", -1.0}});
  CHECK_FALSE(failing.thresholds_ok);

  // Determinism: force re-runs reproduce byte-identical mimic output.
  const auto sha_before = pipeline::sha256_file(m15);
  pipeline::run_synth_data(cfg, true);
  pipeline::run_adapt(cfg, true);
  pipeline::run_train_estimator(cfg, true);
  pipeline::run_generate(cfg, true);
  pipeline::run_mimic(cfg, true);
  CHECK(pipeline::sha256_file(m15) == sha_before);
}

TEST_CASE("ablation flags change the relevant stage behavior") {
  const auto dir = make_small_run("ablate");
  const auto cfg = pipeline::load_run_config(
      dir / "config.json",
      {"ablations.no_fine_stage=true", "ablations.no_icadapt=true"});
  CHECK(cfg.no_fine_stage);
  CHECK(cfg.no_icadapt);
  pipeline::run_synth_data(cfg, false);
  // With no_icadapt the generate stage runs from the fresh backend without
  // requiring the adapt checkpoint.
  CHECK_FALSE(pipeline::run_generate(cfg, false).skipped);
  CHECK(fs::exists(cfg.output_root / "generate" / "fine" / "frame_00000.png"));
  CHECK_FALSE(fs::exists(cfg.output_root / "generate" / "fine_plan.json"));
}

TEST_CASE("demo scene writes a loadable config and motion") {
  const auto dir = fs::temp_directory_path() / "anymole_demo_scene";
  fs::remove_all(dir);
  pipeline::write_demo_scene(dir);
  const auto cfg = pipeline::load_run_config(dir / "config.json");
  const auto m = motion::load_motion(cfg.motion_path);
  CHECK(m.fps == 30);
  CHECK(m.context_length == 60);
  CHECK(m.keyframe_indices.size() == 5);  // 2..6 s at one-second spacing
  CHECK(cfg.adapt.steps == 500);
  CHECK(cfg.adapt.learning_rate == doctest::Approx(1e-5));
  CHECK(cfg.est_train.steps == 3500);
  CHECK(cfg.est_train.keyframe_weight == 3);
  CHECK(cfg.mimic_cfg.lambda_img == 50.0);
  CHECK(cfg.mimic_cfg.lambda_pos == 7000.0);
  CHECK(cfg.mimic_cfg.lambda_rot == 30000.0);
  CHECK(cfg.mimic_cfg.steps_per_sequence == 100);
}

TEST_CASE("sha256 self-check") {
  CHECK(pipeline::sha256_bytes("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(pipeline::sha256_bytes("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("ANYMOLE_OUTPUT_ROOT overrides the configured output root") {
  const auto dir = make_small_run("envroot");
  const auto alt = fs::temp_directory_path() / "anymole_env_root";
  setenv("ANYMOLE_OUTPUT_ROOT", alt.string().c_str(), 1);
  const auto cfg = pipeline::load_run_config(dir / "config.json");
  unsetenv("ANYMOLE_OUTPUT_ROOT");
  CHECK(cfg.output_root == alt);
  const auto plain = pipeline::load_run_config(dir / "config.json");
  CHECK(plain.output_root == dir / "out");
}
