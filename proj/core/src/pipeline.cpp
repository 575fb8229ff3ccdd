#include "anymole/pipeline.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "anymole/clip_sampler.hpp"
#include "anymole/errors.hpp"
#include "anymole/guidance.hpp"
#include "anymole/log.hpp"
#include "anymole/metrics.hpp"
#include "anymole/motion.hpp"
#include "anymole/toyscene.hpp"

namespace anymole::pipeline {

using nlohmann::json;

// ----------------------------------------------------------------- sha256

std::string sha256_bytes(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr))
    throw IoError("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot checksum missing file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_bytes(ss.str());
}

// ------------------------------------------------------------ run config

namespace {

json apply_overrides(json doc, const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override \"" + ov + "\" must look like section.key=value");
    const std::string path = ov.substr(0, eq);
    const std::string raw = ov.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;  // plain string
    }
    json* node = &doc;
    std::istringstream keys(path);
    std::string key, prev;
    std::vector<std::string> parts;
    while (std::getline(keys, key, '.')) parts.push_back(key);
    if (parts.empty()) throw ConfigError("override with empty path");
    for (size_t i = 0; i + 1 < parts.size(); ++i) node = &((*node)[parts[i]]);
    (*node)[parts.back()] = value;
  }
  return doc;
}

const json& section(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw ConfigError(std::string("run config: missing \"") + name + "\" section");
  return *it;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  return it == j.end() ? fallback : it->get<T>();
}

std::uint64_t require_seed(const json& j, const char* stage) {
  auto it = j.find("seed");
  if (it == j.end() || it->is_null() || !it->is_number())
    throw ConfigError(std::string("run config: randomized stage \"") + stage +
                      "\" must carry an explicit seed");
  return it->get<std::uint64_t>();
}

}  // namespace

camera::CameraParams RunConfig::camera_for(const std::string& view_name,
                                           const Eigen::Vector3d& center) const {
  camera::CameraParams cam = camera::named_view(view_name, center, camera_distance, image_width,
                                                image_height, camera_scale);
  // The named view centers the depth range on the camera distance; the
  // configured range wins.
  cam.depth_near = depth_near;
  cam.depth_far = depth_far;
  cam.validate();
  return cam;
}

camera::CameraParams RunConfig::front_camera() const {
  return camera_for(camera_view, subject_center);
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run config: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("run config " + path.string() + ": " + e.what());
  }
  doc = apply_overrides(std::move(doc), overrides);

  RunConfig cfg;
  cfg.config_path = path;
  cfg.effective_json = doc.dump(1);
  const auto base = path.parent_path();
  // ANYMOLE_OUTPUT_ROOT wins over the config so one config can drive
  // several runs.
  if (const char* env_root = std::getenv("ANYMOLE_OUTPUT_ROOT")) {
    cfg.output_root = env_root;
  } else {
    cfg.output_root = get_or<std::string>(doc, "output_root", "out");
    if (cfg.output_root.is_relative()) cfg.output_root = base / cfg.output_root;
  }

  const json& scene = section(doc, "scene");
  cfg.motion_path = scene.at("motion").get<std::string>();
  if (cfg.motion_path.is_relative()) cfg.motion_path = base / cfg.motion_path;

  const json& cam = section(doc, "camera");
  cfg.camera_view = get_or<std::string>(cam, "view", "front");
  cfg.camera_distance = cam.at("distance").get<double>();
  cfg.camera_scale = cam.at("scale").get<double>();
  cfg.image_width = cam.at("image").at(0).get<int>();
  cfg.image_height = cam.at("image").at(1).get<int>();
  cfg.depth_near = cam.at("depth_range").at(0).get<double>();
  cfg.depth_far = cam.at("depth_range").at(1).get<double>();
  if (auto it = cam.find("subject_center"); it != cam.end())
    cfg.subject_center = {(*it).at(0).get<double>(), (*it).at(1).get<double>(),
                          (*it).at(2).get<double>()};
  cfg.views = get_or<std::vector<std::string>>(doc, "views", cfg.views);

  if (auto it = doc.find("render"); it != doc.end()) {
    cfg.style.joint_radius = get_or<double>(*it, "joint_radius", cfg.style.joint_radius);
    cfg.style.bone_thickness = get_or<double>(*it, "bone_thickness", cfg.style.bone_thickness);
    cfg.style.softness = get_or<double>(*it, "softness", cfg.style.softness);
    cfg.style.background = get_or<double>(*it, "background", cfg.style.background);
  }

  const json& adapt = section(doc, "adapt");
  cfg.adapt.steps = get_or<int>(adapt, "steps", cfg.adapt.steps);
  cfg.adapt.learning_rate = get_or<double>(adapt, "learning_rate", cfg.adapt.learning_rate);
  cfg.adapt.batch_size = get_or<int>(adapt, "batch_size", cfg.adapt.batch_size);
  cfg.adapt.views = get_or<int>(adapt, "views", cfg.adapt.views);
  cfg.adapt.intervals = get_or<std::vector<int>>(adapt, "intervals", cfg.adapt.intervals);
  cfg.adapt.text = get_or<std::string>(adapt, "text", cfg.adapt.text);
  cfg.adapt.seed = require_seed(adapt, "adapt");
  cfg.backend.width = cfg.image_width;
  cfg.backend.height = cfg.image_height;
  cfg.backend.t_max = get_or<int>(adapt, "t_max", cfg.backend.t_max);
  cfg.backend.init_seed = get_or<std::uint64_t>(adapt, "model_init_seed", cfg.backend.init_seed);

  const json& est = section(doc, "estimator");
  cfg.est_model.image_width = cfg.image_width;
  cfg.est_model.image_height = cfg.image_height;
  cfg.est_model.provider_patch = get_or<int>(est, "provider_patch", cfg.est_model.provider_patch);
  cfg.est_model.provider_channels =
      get_or<int>(est, "provider_channels", cfg.est_model.provider_channels);
  cfg.est_model.merged_channels =
      get_or<int>(est, "merged_channels", cfg.est_model.merged_channels);
  cfg.est_model.depth_hidden = get_or<int>(est, "depth_hidden", cfg.est_model.depth_hidden);
  cfg.est_model.init_seed = get_or<std::uint64_t>(est, "init_seed", cfg.est_model.init_seed);
  cfg.est_train.steps = get_or<int>(est, "steps", cfg.est_train.steps);
  cfg.est_train.batch_size = get_or<int>(est, "batch_size", cfg.est_train.batch_size);
  cfg.est_train.learning_rate = get_or<double>(est, "learning_rate", cfg.est_train.learning_rate);
  cfg.est_train.views = get_or<int>(est, "views", cfg.est_train.views);
  cfg.est_train.keyframe_weight =
      get_or<int>(est, "keyframe_weight", cfg.est_train.keyframe_weight);
  cfg.est_train.seed = require_seed(est, "estimator");
  cfg.est_provider_seed = get_or<std::uint64_t>(est, "provider_seed", cfg.est_provider_seed);

  cfg.generate_seed = require_seed(section(doc, "generate"), "generate");

  const json& mim = section(doc, "mimic");
  cfg.mimic_cfg.lambda_img = get_or<double>(mim, "lambda_img", cfg.mimic_cfg.lambda_img);
  cfg.mimic_cfg.lambda_pos = get_or<double>(mim, "lambda_pos", cfg.mimic_cfg.lambda_pos);
  cfg.mimic_cfg.lambda_rot = get_or<double>(mim, "lambda_rot", cfg.mimic_cfg.lambda_rot);
  cfg.mimic_cfg.steps_per_sequence = get_or<int>(mim, "steps", cfg.mimic_cfg.steps_per_sequence);
  cfg.mimic_cfg.batch_size = get_or<int>(mim, "batch_size", cfg.mimic_cfg.batch_size);
  cfg.mimic_cfg.views = get_or<int>(mim, "views", cfg.mimic_cfg.views);
  cfg.mimic_cfg.step_size = get_or<double>(mim, "step_size", cfg.mimic_cfg.step_size);

  if (auto it = doc.find("evaluate"); it != doc.end())
    cfg.hl2q_threshold = get_or<double>(*it, "hl2q_threshold", cfg.hl2q_threshold);

  if (auto it = doc.find("ablations"); it != doc.end()) {
    cfg.no_icadapt = get_or<bool>(*it, "no_icadapt", false);
    cfg.no_fine_stage = get_or<bool>(*it, "no_fine_stage", false);
    cfg.no_keyframe_weighting = get_or<bool>(*it, "no_keyframe_weighting", false);
  }
  return cfg;
}

void write_demo_scene(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  toyscene::SceneSpec spec;
  motion::save_motion(toyscene::make_motion(spec), dir / "motion.json");

  const Eigen::Vector3d center = toyscene::subject_center(spec);
  json j;
  j["output_root"] = "out";
  j["scene"] = {{"motion", "motion.json"}};
  j["camera"] = {{"view", "front"},
                 {"distance", spec.camera_distance},
                 {"scale", spec.camera_scale},
                 {"image", {spec.image_size, spec.image_size}},
                 {"depth_range",
                  {spec.camera_distance - spec.depth_radius, spec.camera_distance + spec.depth_radius}},
                 {"subject_center", {center.x(), center.y(), center.z()}}};
  j["views"] = {"front", "left", "right", "back"};
  j["render"] = {{"joint_radius", 1.7}, {"bone_thickness", 1.0}, {"softness", 1.0},
                 {"background", 0.05}};
  j["adapt"] = {{"steps", 500},      {"learning_rate", 1e-5}, {"batch_size", 16},
                {"views", 4},        {"intervals", {1, 2, 3}}, {"seed", 11},
                {"t_max", 50},       {"model_init_seed", 1234},
                {"text", "a rigged character animating in a fixed scene"}};
  j["estimator"] = {{"steps", 3500},        {"batch_size", 32}, {"learning_rate", 2e-3},
                    {"views", 3},           {"keyframe_weight", 3}, {"seed", 22},
                    {"provider_patch", 4},  {"provider_channels", 8},
                    {"merged_channels", 8}, {"depth_hidden", 32}, {"init_seed", 77},
                    {"provider_seed", 555}};
  j["generate"] = {{"seed", 33}};
  j["mimic"] = {{"lambda_img", 50.0}, {"lambda_pos", 7000.0}, {"lambda_rot", 30000.0},
                {"steps", 100},       {"batch_size", 6},      {"views", 1},
                {"step_size", 0.01}};
  j["evaluate"] = {{"hl2q_threshold", 0.5}};

  std::ofstream out(dir / "config.json");
  if (!out) throw IoError("cannot write demo config");
  out << j.dump(1) << "\n";
}

// -------------------------------------------------------------- manifests

namespace {

struct Manifest {
  std::string stage;
  json config;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256
  json info;
};

std::filesystem::path manifest_path(const RunConfig& cfg, const std::string& stage) {
  return cfg.output_root / stage / "manifest.json";
}

void write_manifest(const Manifest& m, const std::filesystem::path& path, double elapsed) {
  json j;
  j["stage"] = m.stage;
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["info"] = m.info;
  j["elapsed_seconds"] = elapsed;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << j.dump(1) << "\n";
}

// A stage is a no-op when its recorded inputs and outputs all still match.
bool can_skip(const std::filesystem::path& manifest, const std::map<std::string, std::string>& inputs) {
  std::ifstream in(manifest);
  if (!in) return false;
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error&) {
    return false;
  }
  if (!j.contains("inputs") || !j.contains("outputs")) return false;
  const auto recorded = j["inputs"].get<std::map<std::string, std::string>>();
  if (recorded != inputs) return false;
  for (const auto& [path, sha] : j["outputs"].get<std::map<std::string, std::string>>()) {
    if (!std::filesystem::exists(path)) return false;
    if (sha256_file(path) != sha) return false;
  }
  return true;
}

void require_input(const std::filesystem::path& path, const std::string& producer) {
  if (!std::filesystem::exists(path))
    throw ConfigError("missing upstream artifact " + path.string() + "; run `" + producer +
                      "` first");
}

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

render::RenderStyle style_for(const RunConfig& cfg, int joints) {
  render::RenderStyle style = cfg.style;
  if (style.colors.empty()) style.colors = render::default_palette(joints);
  return style;
}

std::vector<render::ViewSetup> view_setups(const RunConfig& cfg) {
  std::vector<render::ViewSetup> views;
  for (const auto& name : cfg.views) views.push_back({name, cfg.camera_for(name, cfg.subject_center)});
  return views;
}

}  // namespace

// ------------------------------------------------------------ synth-data

StageStatus run_synth_data(const RunConfig& cfg, bool force) {
  StageTimer timer;
  const auto dir = cfg.output_root / "synth";
  Manifest m;
  m.stage = "synth-data";
  m.config = json::parse(cfg.effective_json);
  m.inputs[cfg.motion_path.string()] = sha256_file(cfg.motion_path);

  StageStatus status;
  status.manifest_path = manifest_path(cfg, "synth");
  if (!force && can_skip(status.manifest_path, m.inputs)) {
    status.skipped = true;
    return status;
  }
  std::filesystem::create_directories(dir);

  const auto gtMotion = motion::load_motion(cfg.motion_path);
  const motion::Skeleton skeleton = gtMotion.skeleton();
  const auto style = style_for(cfg, skeleton.joint_count());
  const auto views = view_setups(cfg);

  motion::MotionSequence context = gtMotion;
  context.poses.assign(gtMotion.poses.begin(),
                       gtMotion.poses.begin() + gtMotion.context_length);
  context.keyframe_indices.clear();
  motion::MotionSequence keyMotion = gtMotion;
  keyMotion.poses.clear();
  for (int k : gtMotion.keyframe_indices)
    keyMotion.poses.push_back(gtMotion.poses[static_cast<size_t>(k)]);
  keyMotion.keyframe_indices.clear();
  keyMotion.context_length = 0;

  auto written = render::render_views(context, views, style, dir / "context");
  auto written_keys = render::render_views(keyMotion, views, style, dir / "keyframes");
  written.insert(written.end(), written_keys.begin(), written_keys.end());

  // Dataset manifest: clip enumeration plus weighted estimator samples.
  const auto clip_list =
      clips::gather_clips(static_cast<int>(views.size()), gtMotion.context_length, 16,
                          cfg.adapt.intervals, gtMotion.fps);
  std::vector<clips::ViewFrames> ctx_frames, key_frames;
  for (const auto& view : views) {
    clips::ViewFrames vf;
    vf.view = view.name;
    vf.cam = view.cam;
    for (const auto& pose : context.poses) vf.joints.push_back(motion::fk(skeleton, pose));
    ctx_frames.push_back(vf);
    vf.joints.clear();
    for (const auto& pose : keyMotion.poses) vf.joints.push_back(motion::fk(skeleton, pose));
    key_frames.push_back(std::move(vf));
  }
  const auto samples = clips::assemble_estimator_dataset(
      ctx_frames, key_frames, cfg.est_train.keyframe_weight, cfg.no_keyframe_weighting);
  clips::write_dataset_manifest(clip_list, samples, dir / "dataset.json");
  written.push_back(dir / "dataset.json");

  m.info = {{"views", cfg.views},
            {"context_frames", gtMotion.context_length},
            {"keyframes", gtMotion.keyframe_indices.size()},
            {"clips", clip_list.size()},
            {"weighted_samples", clips::weighted_entry_count(samples)}};
  for (const auto& path : written) m.outputs[path.string()] = sha256_file(path);
  write_manifest(m, status.manifest_path, timer.seconds());
  return status;
}

// ------------------------------------------------------------------ adapt

namespace {

std::vector<std::vector<img::Image>> load_view_frames(const RunConfig& cfg,
                                                      const std::filesystem::path& root,
                                                      int frame_count) {
  std::vector<std::vector<img::Image>> frames;
  for (const auto& view : cfg.views) {
    std::vector<img::Image> sequence;
    for (int i = 0; i < frame_count; ++i) {
      const auto path = root / view / render::frame_filename(i);
      require_input(path, "synth-data");
      sequence.push_back(img::read_png(path));
    }
    frames.push_back(std::move(sequence));
  }
  return frames;
}

}  // namespace

StageStatus run_adapt(const RunConfig& cfg, bool force) {
  StageTimer timer;
  const auto dir = cfg.output_root / "adapt";
  const auto synth_manifest = cfg.output_root / "synth" / "manifest.json";
  require_input(synth_manifest, "synth-data");

  Manifest m;
  m.stage = "adapt";
  m.config = {{"steps", cfg.adapt.steps},
              {"learning_rate", cfg.adapt.learning_rate},
              {"batch_size", cfg.adapt.batch_size},
              {"views", cfg.adapt.views},
              {"intervals", cfg.adapt.intervals},
              {"text", cfg.adapt.text},
              {"seed", cfg.adapt.seed}};
  m.inputs[cfg.motion_path.string()] = sha256_file(cfg.motion_path);
  m.inputs[synth_manifest.string()] = sha256_file(synth_manifest);
  m.inputs["<adapt-config>"] = sha256_bytes(m.config.dump());

  StageStatus status;
  status.manifest_path = manifest_path(cfg, "adapt");
  if (!force && can_skip(status.manifest_path, m.inputs)) {
    status.skipped = true;
    return status;
  }
  std::filesystem::create_directories(dir);

  const auto gtMotion = motion::load_motion(cfg.motion_path);
  const auto view_frames = load_view_frames(cfg, cfg.output_root / "synth" / "context",
                                            gtMotion.context_length);
  const auto clip_list =
      clips::gather_clips(static_cast<int>(view_frames.size()), gtMotion.context_length, 16,
                          cfg.adapt.intervals, gtMotion.fps);

  diffusion::ToyVideoModel model(cfg.backend);
  const auto trace = diffusion::icadapt_indexed(model, view_frames, clip_list, cfg.adapt);

  diffusion::save_checkpoint(model, cfg.adapt, dir / "model.bin", dir / "model.json");
  m.info = {{"clips", clip_list.size()},
            {"final_loss", trace.losses.empty() ? 0.0 : trace.losses.back()},
            {"spatial_updates", trace.spatial_updates},
            {"temporal_updates", trace.temporal_updates},
            {"fps_embedding_updates", trace.fps_embedding_updates},
            {"image_projector_updates", trace.image_projector_updates}};
  m.outputs[(dir / "model.bin").string()] = sha256_file(dir / "model.bin");
  m.outputs[(dir / "model.json").string()] = sha256_file(dir / "model.json");
  write_manifest(m, status.manifest_path, timer.seconds());
  return status;
}

// -------------------------------------------------------- train-estimator

StageStatus run_train_estimator(const RunConfig& cfg, bool force) {
  StageTimer timer;
  const auto dir = cfg.output_root / "estimator";
  const auto synth_manifest = cfg.output_root / "synth" / "manifest.json";
  require_input(synth_manifest, "synth-data");

  Manifest m;
  m.stage = "train-estimator";
  m.config = {{"steps", cfg.est_train.steps},
              {"batch_size", cfg.est_train.batch_size},
              {"learning_rate", cfg.est_train.learning_rate},
              {"views", cfg.est_train.views},
              {"keyframe_weight", cfg.est_train.keyframe_weight},
              {"seed", cfg.est_train.seed},
              {"no_keyframe_weighting", cfg.no_keyframe_weighting}};
  m.inputs[cfg.motion_path.string()] = sha256_file(cfg.motion_path);
  m.inputs[synth_manifest.string()] = sha256_file(synth_manifest);
  m.inputs["<estimator-config>"] = sha256_bytes(m.config.dump());

  StageStatus status;
  status.manifest_path = manifest_path(cfg, "estimator");
  if (!force && can_skip(status.manifest_path, m.inputs)) {
    status.skipped = true;
    return status;
  }
  std::filesystem::create_directories(dir);

  const auto gtMotion = motion::load_motion(cfg.motion_path);
  const motion::Skeleton skeleton = gtMotion.skeleton();

  // Estimator dataset: all views except back (dropped by the assembler).
  std::vector<clips::ViewFrames> ctx_frames, key_frames;
  std::map<std::string, std::vector<img::Image>> images_ctx, images_key;
  for (const auto& view : view_setups(cfg)) {
    clips::ViewFrames ctx{view.name, view.cam, {}}, key{view.name, view.cam, {}};
    if (view.name != "back") {
      std::vector<img::Image> ctx_imgs, key_imgs;
      for (int i = 0; i < gtMotion.context_length; ++i) {
        const auto path = cfg.output_root / "synth" / "context" / view.name /
                          render::frame_filename(i);
        require_input(path, "synth-data");
        ctx_imgs.push_back(img::read_png(path));
        ctx.joints.push_back(motion::fk(skeleton, gtMotion.poses[static_cast<size_t>(i)]));
      }
      for (size_t k = 0; k < gtMotion.keyframe_indices.size(); ++k) {
        const auto path = cfg.output_root / "synth" / "keyframes" / view.name /
                          render::frame_filename(static_cast<int>(k));
        require_input(path, "synth-data");
        key_imgs.push_back(img::read_png(path));
        key.joints.push_back(motion::fk(
            skeleton, gtMotion.poses[static_cast<size_t>(gtMotion.keyframe_indices[k])]));
      }
      images_ctx[view.name] = std::move(ctx_imgs);
      images_key[view.name] = std::move(key_imgs);
    }
    ctx_frames.push_back(std::move(ctx));
    key_frames.push_back(std::move(key));
  }
  if (cfg.no_keyframe_weighting)
    for (auto& view : key_frames) view.joints.clear();  // "no data selection" ablation
  const auto dataset = clips::assemble_estimator_dataset(
      ctx_frames, key_frames, cfg.no_keyframe_weighting ? 1 : cfg.est_train.keyframe_weight,
      cfg.no_keyframe_weighting);

  estimator::EstimatorConfig model_cfg = cfg.est_model;
  model_cfg.joints = skeleton.joint_count();
  estimator::EstimatorModel model(model_cfg);
  const estimator::SyntheticPatchProvider provider(model_cfg.provider_patch,
                                                   model_cfg.provider_channels, cfg.est_provider_seed);
  const auto lookup = [&](const clips::EstimatorSample& s) -> const img::Image& {
    const auto& pool = s.is_keyframe ? images_key : images_ctx;
    return pool.at(s.view)[static_cast<size_t>(s.frame_index)];
  };
  const auto trace = estimator::train_estimator(model, provider, dataset, lookup, cfg.est_train);

  estimator::save_estimator(model, provider.id(), cfg.est_train, dir / "model.bin",
                            dir / "model.json");
  m.info = {{"weighted_samples", clips::weighted_entry_count(dataset)},
            {"excluded_samples", trace.excluded_samples},
            {"final_loss", trace.losses.empty() ? 0.0 : trace.losses.back()},
            {"steps_run", trace.steps_run}};
  m.outputs[(dir / "model.bin").string()] = sha256_file(dir / "model.bin");
  m.outputs[(dir / "model.json").string()] = sha256_file(dir / "model.json");
  write_manifest(m, status.manifest_path, timer.seconds());
  return status;
}

// --------------------------------------------------------------- generate

StageStatus run_generate(const RunConfig& cfg, bool force) {
  StageTimer timer;
  const auto dir = cfg.output_root / "generate";
  const auto synth_manifest = cfg.output_root / "synth" / "manifest.json";
  require_input(synth_manifest, "synth-data");
  const auto adapt_bin = cfg.output_root / "adapt" / "model.bin";
  if (!cfg.no_icadapt) require_input(adapt_bin, "adapt");

  Manifest m;
  m.stage = "generate";
  m.config = {{"seed", cfg.generate_seed},
              {"no_icadapt", cfg.no_icadapt},
              {"no_fine_stage", cfg.no_fine_stage}};
  m.inputs[cfg.motion_path.string()] = sha256_file(cfg.motion_path);
  m.inputs[synth_manifest.string()] = sha256_file(synth_manifest);
  if (!cfg.no_icadapt) m.inputs[adapt_bin.string()] = sha256_file(adapt_bin);
  m.inputs["<generate-config>"] = sha256_bytes(m.config.dump());

  StageStatus status;
  status.manifest_path = manifest_path(cfg, "generate");
  if (!force && can_skip(status.manifest_path, m.inputs)) {
    status.skipped = true;
    return status;
  }
  std::filesystem::create_directories(dir / "coarse");
  std::filesystem::create_directories(dir / "fine");

  const auto gtMotion = motion::load_motion(cfg.motion_path);
  if (gtMotion.context_length % gtMotion.fps != 0)
    throw ConfigError("generate: context must cover whole seconds");
  const int context_seconds = gtMotion.context_length / gtMotion.fps;
  const int total_seconds =
      static_cast<int>((gtMotion.poses.size() - 1) / static_cast<size_t>(gtMotion.fps));

  diffusion::ToyVideoModel model =
      cfg.no_icadapt ? diffusion::ToyVideoModel(cfg.backend)
                     : diffusion::load_checkpoint(adapt_bin, cfg.output_root / "adapt" / "model.json");

  // Known frames: front-view context renders plus front-view keyframes.
  guidance::KnownFrames known;
  std::vector<img::Image> context_imgs;
  for (int i = 0; i < gtMotion.context_length; ++i) {
    const auto path =
        cfg.output_root / "synth" / "context" / cfg.camera_view / render::frame_filename(i);
    require_input(path, "synth-data");
    context_imgs.push_back(img::read_png(path));
  }
  known.add_context(context_imgs);
  for (size_t k = 0; k < gtMotion.keyframe_indices.size(); ++k) {
    const auto path = cfg.output_root / "synth" / "keyframes" / cfg.camera_view /
                      render::frame_filename(static_cast<int>(k));
    require_input(path, "synth-data");
    known.add_keyframe(gtMotion.keyframe_indices[k], img::read_png(path));
  }

  Rng rng(cfg.generate_seed);
  Rng coarse_rng = rng.fork(1), fine_rng = rng.fork(2);
  const auto coarse = guidance::coarse_stage(model, known, total_seconds, context_seconds,
                                             cfg.adapt.text, coarse_rng);
  guidance::write_stage_manifest(coarse, dir / "coarse_plan.json");
  std::vector<std::filesystem::path> written = {dir / "coarse_plan.json"};
  for (const auto& [tick, frame] : coarse.frames) {
    const auto path = dir / "coarse" / render::frame_filename(tick / 6);
    img::write_png(frame, path);
    written.push_back(path);
  }

  std::map<int, img::Image> fine_frames;
  if (cfg.no_fine_stage) {
    // Ablation: hold each coarse frame over its 1/5-second span.
    for (int tick = 0; tick <= total_seconds * guidance::kTicksPerSecond; tick += 2) {
      const int held = (tick / 6) * 6;
      fine_frames[tick] = coarse.frames.at(held);
    }
  } else {
    const auto fine = guidance::fine_stage(model, coarse, known, total_seconds, context_seconds,
                                           cfg.adapt.text, fine_rng);
    guidance::write_stage_manifest(fine, dir / "fine_plan.json");
    written.push_back(dir / "fine_plan.json");
    fine_frames = fine.frames;
  }
  for (const auto& [tick, frame] : fine_frames) {
    const auto path = dir / "fine" / render::frame_filename(tick / 2);
    img::write_png(frame, path);
    written.push_back(path);
  }

  const auto plan = guidance::plan_two_stage(total_seconds, context_seconds);
  guidance::write_plan_manifest(plan, dir / "plan.json");
  written.push_back(dir / "plan.json");

  m.info = {{"total_seconds", total_seconds},
            {"context_seconds", context_seconds},
            {"coarse_calls", plan.coarse.backend_calls()},
            {"fine_calls", plan.fine.backend_calls()},
            {"backend_calls", plan.total_backend_calls}};
  for (const auto& path : written) m.outputs[path.string()] = sha256_file(path);
  write_manifest(m, status.manifest_path, timer.seconds());
  return status;
}

// ------------------------------------------------------------------ mimic

StageStatus run_mimic(const RunConfig& cfg, bool force) {
  StageTimer timer;
  const auto dir = cfg.output_root / "mimic";
  const auto est_bin = cfg.output_root / "estimator" / "model.bin";
  const auto generate_manifest = cfg.output_root / "generate" / "manifest.json";
  require_input(est_bin, "train-estimator");
  require_input(generate_manifest, "generate");

  Manifest m;
  m.stage = "mimic";
  m.config = {{"lambda_img", cfg.mimic_cfg.lambda_img},
              {"lambda_pos", cfg.mimic_cfg.lambda_pos},
              {"lambda_rot", cfg.mimic_cfg.lambda_rot},
              {"steps", cfg.mimic_cfg.steps_per_sequence},
              {"batch_size", cfg.mimic_cfg.batch_size},
              {"views", cfg.mimic_cfg.views},
              {"step_size", cfg.mimic_cfg.step_size}};
  m.inputs[cfg.motion_path.string()] = sha256_file(cfg.motion_path);
  m.inputs[est_bin.string()] = sha256_file(est_bin);
  m.inputs[generate_manifest.string()] = sha256_file(generate_manifest);
  m.inputs["<mimic-config>"] = sha256_bytes(m.config.dump());

  StageStatus status;
  status.manifest_path = manifest_path(cfg, "mimic");
  if (!force && can_skip(status.manifest_path, m.inputs)) {
    status.skipped = true;
    return status;
  }
  std::filesystem::create_directories(dir);

  const auto gtMotion = motion::load_motion(cfg.motion_path);
  const int begin = gtMotion.keyframe_indices.front();
  const int end = gtMotion.keyframe_indices.back();
  auto window = toyscene::keyed_window_15fps(gtMotion, begin, end);

  estimator::EstimatorModel model =
      estimator::load_estimator(est_bin, cfg.output_root / "estimator" / "model.json");
  const estimator::SyntheticPatchProvider provider(
      model.config().provider_patch, model.config().provider_channels, cfg.est_provider_seed);

  std::vector<img::Image> video;
  const int step = gtMotion.fps / 15;
  for (size_t j = 0; j < window.poses.size(); ++j) {
    const int fine_index = (begin + static_cast<int>(j) * step) / step;
    const auto path = cfg.output_root / "generate" / "fine" / render::frame_filename(fine_index);
    require_input(path, "generate");
    video.push_back(img::read_png(path));
  }

  mimic::MimicContext ctx{gtMotion.skeleton(), style_for(cfg, gtMotion.skeleton().joint_count()),
                          cfg.front_camera(), cfg.mimic_cfg};
  const auto frame_data = mimic::make_frame_data(video, model, provider);
  const auto result = mimic::mimic_sequence(window, frame_data, ctx);

  motion::save_motion(result.motion, dir / "motion15.json");
  motion::save_motion(motion::upsample_motion(result.motion, 30), dir / "motion30.json");
  mimic::write_loss_trace_csv(result, dir / "trace.csv");

  m.info = {{"rounds", result.rounds},
            {"tasks", result.tasks},
            {"repetitions", result.batches},
            {"planned_repetitions",
             mimic::plan_repetitions(window.keyframe_indices, cfg.mimic_cfg.batch_size)}};
  for (const char* f : {"motion15.json", "motion30.json", "trace.csv"})
    m.outputs[(dir / f).string()] = sha256_file(dir / f);
  write_manifest(m, status.manifest_path, timer.seconds());
  return status;
}

// --------------------------------------------------------------- evaluate

EvaluateOutcome run_evaluate(const RunConfig& cfg, bool force,
                             const std::map<std::string, double>& thresholds,
                             const std::optional<std::filesystem::path>& pred_motion) {
  StageTimer timer;
  const auto dir = cfg.output_root / "evaluate";
  const auto pred_path = pred_motion.value_or(cfg.output_root / "mimic" / "motion15.json");
  require_input(pred_path, "mimic");

  EvaluateOutcome outcome;
  Manifest m;
  m.stage = "evaluate";
  m.config = {{"hl2q_threshold", cfg.hl2q_threshold}};
  m.inputs[cfg.motion_path.string()] = sha256_file(cfg.motion_path);
  m.inputs[pred_path.string()] = sha256_file(pred_path);

  outcome.status.manifest_path = manifest_path(cfg, "evaluate");
  std::filesystem::create_directories(dir);

  const auto gtMotion = motion::load_motion(cfg.motion_path);
  const auto pred = motion::load_motion(pred_path);

  // Ground-truth window matching the prediction grid.
  motion::MotionSequence gt_window = pred;
  {
    const int begin = gtMotion.keyframe_indices.front();
    const int step = gtMotion.fps / pred.fps;
    for (size_t j = 0; j < gt_window.poses.size(); ++j)
      gt_window.poses[j] = gtMotion.poses[static_cast<size_t>(begin + static_cast<int>(j) * step)];
  }

  const auto style = style_for(cfg, pred.skeleton().joint_count());
  metrics::MetricRegistry registry;
  const auto report = metrics::evaluate_all(pred, gt_window, cfg.front_camera(), style, registry,
                                            {cfg.hl2q_threshold});
  metrics::write_report_json(report, dir / "report.json");
  metrics::write_report_csv(report, pred_path.stem().string(), dir / "report.csv");
  outcome.values = report.values;

  for (const auto& [name, limit] : thresholds) {
    auto it = report.values.find(name);
    if (it == report.values.end()) {
      outcome.thresholds_ok = false;
      outcome.threshold_failures.push_back(name + " missing from report");
      continue;
    }
    if (!(it->second <= limit)) {
      outcome.thresholds_ok = false;
      outcome.threshold_failures.push_back(name + "=" + std::to_string(it->second) + " > " +
                                           std::to_string(limit));
    }
  }

  m.info = {{"metrics", report.values}, {"thresholds_ok", outcome.thresholds_ok}};
  m.outputs[(dir / "report.json").string()] = sha256_file(dir / "report.json");
  m.outputs[(dir / "report.csv").string()] = sha256_file(dir / "report.csv");
  write_manifest(m, outcome.status.manifest_path, timer.seconds());
  (void)force;
  return outcome;
}

StageStatus run_stage(const std::string& stage, const RunConfig& cfg, bool force) {
  if (stage == "synth-data") return run_synth_data(cfg, force);
  if (stage == "adapt") return run_adapt(cfg, force);
  if (stage == "train-estimator") return run_train_estimator(cfg, force);
  if (stage == "generate") return run_generate(cfg, force);
  if (stage == "mimic") return run_mimic(cfg, force);
  if (stage == "evaluate") return run_evaluate(cfg, force, {}).status;
  throw ConfigError("unknown stage \"" + stage + "\"");
}

}  // namespace anymole::pipeline
