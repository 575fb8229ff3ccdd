// Acceptance suite: one criterion per function, one PASS/FAIL line each.
// Everything runs on the bundled synthetic scene with fixed seeds; the
// training criteria also enforce their wall-clock budgets.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>

#include "anymole/clip_sampler.hpp"
#include "anymole/diffusion.hpp"
#include "anymole/estimator.hpp"
#include "anymole/guidance.hpp"
#include "anymole/metrics.hpp"
#include "anymole/mimic.hpp"
#include "anymole/motion.hpp"
#include "anymole/pipeline.hpp"
#include "anymole/render.hpp"
#include "anymole/toyscene.hpp"
#include "support/oracles.hpp"

using namespace anymole;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

#define REQUIRE_OK(cond, message)                                   \
  do {                                                              \
    if (!(cond)) {                                                  \
      out.pass = false;                                             \
      out.detail = (message);                                       \
      return out;                                                   \
    }                                                               \
  } while (0)

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// Shared artifacts between the estimator-training and mimicking criteria.
struct SceneState {
  toyscene::SceneSpec spec;
  motion::MotionSequence gt;
  render::RenderStyle style;
  std::unique_ptr<estimator::EstimatorModel> model;
  std::unique_ptr<estimator::SyntheticPatchProvider> provider;
};
SceneState g_scene;

// ------------------------------------------------------------ criterion 1

Outcome criterion_fk_oracle() {
  Outcome out;
  const auto start = Clock::now();
  Rng rng(1001);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto skeleton = oracles::random_skeleton(rng, 10);
    const auto pose = oracles::random_pose(rng, skeleton.joint_count());
    const auto ours = motion::fk(skeleton, pose);
    const auto reference = oracles::fk_homogeneous(skeleton, pose);
    for (size_t j = 0; j < ours.size(); ++j)
      worst = std::max(worst, (ours[j] - reference[j]).norm());
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
  REQUIRE_OK(worst < 1e-6, "max FK deviation " + fmt(worst));
  REQUIRE_OK(seconds < 10.0, "runtime " + fmt(seconds) + " s exceeds 10 s");
  out.detail = "1000 skeletons, max deviation " + fmt(worst) + ", " + fmt(seconds) + " s";
  return out;
}

// ------------------------------------------------------------ criterion 2

Outcome criterion_metrics() {
  Outcome out;
  Rng rng(1002);
  for (int trial = 0; trial < 100; ++trial) {
    const int joints = static_cast<int>(rng.uniform_int(2, 7));
    const auto a = oracles::random_motion(rng, joints, 6);
    const auto b = oracles::random_motion(rng, joints, 6);
    REQUIRE_OK(metrics::hl2q(a, b, {1.0}) == metrics::l2q(a, b),
               "hl2q(threshold=1) != l2q bitwise");
  }
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracles::random_motion(rng, 3, 10);
    const auto b = oracles::random_motion(rng, 3, 10);
    REQUIRE_OK(std::abs(metrics::l2p(a, b) - oracles::l2p_reference(a, b)) < 1e-9,
               "l2p deviates from the brute-force oracle");
    std::vector<std::vector<double>> ca(12, std::vector<double>(10)), cb = ca;
    for (size_t f = 0; f < 10; ++f)
      for (size_t j = 0; j < 3; ++j) {
        const auto qa = motion::canonicalized(a.poses[f].rotations[j]);
        const auto qb = motion::canonicalized(b.poses[f].rotations[j]);
        const double va[4] = {qa.w(), qa.x(), qa.y(), qa.z()};
        const double vb[4] = {qb.w(), qb.x(), qb.y(), qb.z()};
        for (size_t k = 0; k < 4; ++k) {
          ca[j * 4 + k][f] = va[k];
          cb[j * 4 + k][f] = vb[k];
        }
      }
    REQUIRE_OK(std::abs(metrics::npss(a, b) - oracles::npss_reference(ca, cb)) < 1e-9,
               "npss deviates from the DFT+EMD oracle");
  }
  const auto m = oracles::random_motion(rng, 4, 8);
  REQUIRE_OK(metrics::l2q(m, m) == 0.0, "l2q not zero on identical input");
  REQUIRE_OK(metrics::hl2q(m, m, {0.5}) == 0.0, "hl2q not zero on identical input");
  REQUIRE_OK(metrics::l2p(m, m) == 0.0, "l2p not zero on identical input");
  REQUIRE_OK(metrics::npss(m, m) == 0.0, "npss not zero on identical input");
  img::Image image = img::Image::zeros(24, 24, 1);
  for (double& v : image.data) v = rng.uniform();
  REQUIRE_OK(std::abs(metrics::ssim(image, image) - 1.0) < 1e-12,
             "ssim not one on identical input");
  out.detail = "bitwise hl2q==l2q on 100 pairs; oracles within 1e-9";
  return out;
}

// ------------------------------------------------------------ criterion 3

Outcome criterion_clip_sampler() {
  Outcome out;
  const auto clip_list = clips::gather_clips(4, 60, 16, {1, 2, 3}, 30);
  REQUIRE_OK(clip_list.size() == 348,
             "expected 348 clips, got " + std::to_string(clip_list.size()));
  std::set<int> tags;
  for (const auto& c : clip_list) tags.insert(c.fps_tag);
  REQUIRE_OK((tags == std::set<int>{10, 15, 30}), "fps tags are not {30, 15, 10}");

  // Brute-force index scan.
  long scan = 0;
  for (int view = 0; view < 4; ++view)
    for (int s : {1, 2, 3})
      for (int start = 0; start + 16 * s <= 60; ++start) ++scan;
  REQUIRE_OK(static_cast<long>(clip_list.size()) == scan, "enumeration disagrees with scan");
  for (const auto& c : clip_list) {
    REQUIRE_OK(static_cast<int>(c.frame_indices.size()) == 16, "clip length != 16");
    for (size_t i = 1; i < c.frame_indices.size(); ++i)
      REQUIRE_OK(c.frame_indices[i] - c.frame_indices[i - 1] == c.interval,
                 "clip stride not constant");
    REQUIRE_OK(c.frame_indices.back() < 60, "clip index out of range");
  }
  out.detail = "348 clips, tags {30,15,10}, scan match";
  return out;
}

// ------------------------------------------------------------ criterion 4

Outcome criterion_icadapt() {
  Outcome out;
  const auto start = Clock::now();
  diffusion::ToyModelConfig mc;
  mc.width = 32;
  mc.height = 32;
  mc.t_max = 50;
  diffusion::ToyVideoModel model(mc);

  Rng rng(1004);
  std::vector<diffusion::VideoClip> clip_list;
  for (int i = 0; i < 10; ++i) {
    diffusion::VideoClip clip;
    clip.fps = (i % 2 == 0) ? 15 : 10;
    for (int f = 0; f < 16; ++f) {
      img::Image frame = img::Image::zeros(32, 32, 3);
      for (double& v : frame.data) v = rng.uniform();
      clip.frames.push_back(std::move(frame));
    }
    clip_list.push_back(std::move(clip));
  }

  const auto temporal_before = model.group(diffusion::ParamGroup::kTemporal);
  const auto fps_before = model.group(diffusion::ParamGroup::kFpsEmbedding);
  const auto spatial_before = model.group(diffusion::ParamGroup::kSpatial);

  diffusion::AdaptConfig cfg;
  cfg.steps = 50;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 8;
  cfg.seed = 404;
  const auto trace = diffusion::icadapt(model, clip_list, cfg);

  for (size_t i = 0; i < temporal_before.size(); ++i)
    REQUIRE_OK(model.group(diffusion::ParamGroup::kTemporal)[i].tensor.v ==
                   temporal_before[i].tensor.v,
               "temporal parameters changed");
  for (size_t i = 0; i < fps_before.size(); ++i)
    REQUIRE_OK(model.group(diffusion::ParamGroup::kFpsEmbedding)[i].tensor.v ==
                   fps_before[i].tensor.v,
               "fps embedding changed");
  bool spatial_changed = false;
  for (size_t i = 0; i < spatial_before.size(); ++i)
    spatial_changed = spatial_changed ||
                      model.group(diffusion::ParamGroup::kSpatial)[i].tensor.v !=
                          spatial_before[i].tensor.v;
  REQUIRE_OK(spatial_changed, "spatial parameters did not change");
  REQUIRE_OK(trace.temporal_updates == 0 && trace.fps_embedding_updates == 0,
             "frozen sets received updates");

  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += trace.losses[static_cast<size_t>(i)] / 10.0;
    tail += trace.losses[trace.losses.size() - 1 - static_cast<size_t>(i)] / 10.0;
  }
  REQUIRE_OK(tail < head, "loss did not decrease (head " + fmt(head) + ", tail " + fmt(tail) + ")");

  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
  REQUIRE_OK(seconds < 120.0, "runtime " + fmt(seconds) + " s exceeds 2 min");
  out.detail = "loss " + fmt(head) + " -> " + fmt(tail) + ", frozen sets bitwise, " +
               fmt(seconds) + " s";
  return out;
}

// ------------------------------------------------------------ criterion 5

Outcome criterion_guidance_pinning() {
  Outcome out;
  diffusion::ToyModelConfig mc;
  mc.width = 16;
  mc.height = 16;
  mc.t_max = 16;
  diffusion::ToyVideoModel model(mc);

  auto frame_at = [](double level) {
    img::Image im = img::Image::zeros(16, 16, 3);
    for (size_t i = 0; i < im.data.size(); ++i)
      im.data[i] = std::fmod(level + 0.003 * static_cast<double>(i), 1.0);
    return im;
  };

  // Guidance on a partial set reappears within codec tolerance.
  guidance::GuidanceSpec spec;
  for (int i : {2, 5, 9, 12}) spec.images[i] = frame_at(0.1 * i);
  Rng rng(1005);
  const auto frames = guidance::generate_segment(model, frame_at(0.05), frame_at(0.95), spec, 15,
                                                 "scene", rng);
  for (const auto& [index, wanted] : spec.images) {
    const double err = img::mean_abs_diff(frames[static_cast<size_t>(index)], wanted);
    REQUIRE_OK(err < 1e-3, "guided frame " + std::to_string(index) + " error " + fmt(err));
  }
  REQUIRE_OK(img::mean_abs_diff(frames.front(), frame_at(0.05)) < 1e-3, "first endpoint drifted");
  REQUIRE_OK(img::mean_abs_diff(frames.back(), frame_at(0.95)) < 1e-3, "last endpoint drifted");

  // Locality of inpaint_replace is bitwise.
  diffusion::LatentVideo z;
  Rng zrng(1006);
  z.values = ad::Tensor::randn({16, 48, 4, 4}, zrng);
  const auto encoded = guidance::encode_guidance(model, spec);
  Rng noise(1007);
  const auto replaced = guidance::inpaint_replace(z, encoded, 7, model.schedule(), noise);
  const int per_frame = z.values.numel() / 16;
  for (int f = 0; f < 16; ++f) {
    if (spec.images.count(f)) continue;
    for (int i = 0; i < per_frame; ++i)
      REQUIRE_OK(replaced.values.v[static_cast<size_t>(f * per_frame + i)] ==
                     z.values.v[static_cast<size_t>(f * per_frame + i)],
                 "unguided frame " + std::to_string(f) + " modified");
  }
  out.detail = "4 guided + 2 endpoint frames pinned; complement bitwise untouched";
  return out;
}

// ------------------------------------------------------------ criterion 6

Outcome criterion_plan_linearity() {
  Outcome out;
  std::vector<int> calls;
  for (int total = 3; total <= 10; ++total)
    calls.push_back(guidance::plan_two_stage(total, 2).total_backend_calls);
  for (size_t i = 2; i < calls.size(); ++i)
    REQUIRE_OK(calls[i] - 2 * calls[i - 1] + calls[i - 2] == 0, "second difference non-zero");
  const auto plan = guidance::plan_two_stage(8, 2);
  REQUIRE_OK(plan.coarse.backend_calls() == 6,
             "coarse calls " + std::to_string(plan.coarse.backend_calls()));
  REQUIRE_OK(plan.fine.backend_calls() == 8,
             "fine calls " + std::to_string(plan.fine.backend_calls()));
  out.detail = "calls over 3..10 s affine; 8 s = 6 coarse + 8 fine";
  return out;
}

// ------------------------------------------------------------ criterion 7

Outcome criterion_estimator_gradients() {
  Outcome out;
  estimator::EstimatorConfig cfg;
  cfg.image_width = 16;
  cfg.image_height = 16;
  cfg.joints = 3;
  cfg.provider_patch = 4;   // 4x4 feature grid -> 8x8 heatmaps
  cfg.provider_channels = 4;
  cfg.merged_channels = 4;  // C = 4
  cfg.depth_hidden = 8;
  cfg.init_seed = 1007;
  estimator::EstimatorModel model(cfg);
  REQUIRE_OK(cfg.heatmap_width() == 8 && cfg.heatmap_height() == 8, "heatmap grid is not 8x8");

  const estimator::SyntheticPatchProvider provider(4, 4, 2024);
  Rng rng(1008);
  img::Image image = img::Image::zeros(16, 16, 3);
  for (double& v : image.data) v = rng.uniform();
  const auto [f2d, f3d] = provider.provide(image);

  // Zero-init residual: ablating the residual path changes nothing bitwise.
  const auto merged = model.merge_features(f2d, f3d);
  const auto with_res = model.decode_heatmaps(merged);
  auto res_backup = model.tensor("decoder.res1_w");
  for (double& v : model.tensor("decoder.res1_w").v) v += 0.31;
  const auto perturbed_input = model.decode_heatmaps(merged);
  model.tensor("decoder.res1_w") = res_backup;
  REQUIRE_OK(with_res.v == perturbed_input.v, "zero-init residual path is live at init");

  // Make every block generic before the gradient sweep.
  Rng jitter(1009);
  for (double& v : model.tensor("decoder.res2_w").v) v = 0.05 * jitter.normal();
  for (double& v : model.tensor("depth.l3_w").v) v = 0.2 * jitter.normal();

  ad::Tensor target({3, 3});
  target.v = {4.0, 5.0, 1.0, 9.0, 7.0, -1.0, 11.0, 3.0, 0.5};

  ad::Graph g;
  auto binds = model.bind(g, true);
  auto fwd = model.forward(g, binds, g.constant(f2d.values), g.constant(f3d.values));
  const auto loss = g.sq_diff_sum(fwd.screen, target);
  g.backward(loss);

  const double h = 1e-5;
  double worst = 0.0;
  long checked = 0;
  for (auto& [tensor, id] : binds.trainable) {
    const std::string* name = nullptr;
    for (const auto& nt : model.params())
      if (&nt.tensor == tensor) name = &nt.name;
    if (name->rfind("decoder.", 0) != 0 && name->rfind("depth.", 0) != 0) continue;
    const ad::Tensor grad = g.grad(id);
    for (int k = 0; k < tensor->numel(); ++k) {
      const double saved = tensor->v[static_cast<size_t>(k)];
      auto eval = [&]() {
        ad::Graph g2;
        auto b2 = model.bind(g2, false);
        auto f2 = model.forward(g2, b2, g2.constant(f2d.values), g2.constant(f3d.values));
        return g2.val(g2.sq_diff_sum(f2.screen, target)).v[0];
      };
      tensor->v[static_cast<size_t>(k)] = saved + h;
      const double plus = eval();
      tensor->v[static_cast<size_t>(k)] = saved - h;
      const double minus = eval();
      tensor->v[static_cast<size_t>(k)] = saved;
      const double fd = (plus - minus) / (2.0 * h);
      const double an = grad.v[static_cast<size_t>(k)];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3}));
      ++checked;
    }
  }
  REQUIRE_OK(worst < 1e-3, "worst relative gradient error " + fmt(worst));
  out.detail = std::to_string(checked) + " decoder/MLP elements, worst rel err " + fmt(worst);
  return out;
}

// ------------------------------------------------------------ criterion 8

Outcome criterion_estimator_training() {
  Outcome out;
  const auto start = Clock::now();

  g_scene.spec = toyscene::SceneSpec{};
  g_scene.gt = toyscene::make_motion(g_scene.spec);
  g_scene.style = toyscene::scene_style(g_scene.spec.joints);
  const auto skeleton = g_scene.gt.skeleton();

  // Dataset: 60 context frames and the 4 post-boundary keyframes in three
  // views, keyframes weighted 3x -> 216 weighted samples.
  const std::vector<std::string> names = {"front", "left", "right"};
  std::vector<clips::ViewFrames> ctx_frames, key_frames;
  std::map<std::string, std::vector<img::Image>> images_ctx, images_key;
  const std::vector<int> dataset_keys(g_scene.gt.keyframe_indices.begin() + 1,
                                      g_scene.gt.keyframe_indices.end());
  for (const auto& name : names) {
    const auto cam = toyscene::scene_camera(g_scene.spec, name);
    clips::ViewFrames ctx{name, cam, {}}, key{name, cam, {}};
    for (int i = 0; i < g_scene.gt.context_length; ++i) {
      const auto& pose = g_scene.gt.poses[static_cast<size_t>(i)];
      ctx.joints.push_back(motion::fk(skeleton, pose));
      images_ctx[name].push_back(render::render(skeleton, pose, cam, g_scene.style));
    }
    for (int k : dataset_keys) {
      const auto& pose = g_scene.gt.poses[static_cast<size_t>(k)];
      key.joints.push_back(motion::fk(skeleton, pose));
      images_key[name].push_back(render::render(skeleton, pose, cam, g_scene.style));
    }
    ctx_frames.push_back(std::move(ctx));
    key_frames.push_back(std::move(key));
  }
  const auto dataset = clips::assemble_estimator_dataset(ctx_frames, key_frames, 3);
  REQUIRE_OK(clips::weighted_entry_count(dataset) == 216,
             "weighted dataset size " + std::to_string(clips::weighted_entry_count(dataset)));

  estimator::EstimatorConfig mc;
  mc.image_width = g_scene.spec.image_size;
  mc.image_height = g_scene.spec.image_size;
  mc.joints = g_scene.spec.joints;
  mc.provider_channels = 8;
  mc.merged_channels = 8;
  mc.depth_hidden = 32;
  mc.init_seed = 77;
  g_scene.model = std::make_unique<estimator::EstimatorModel>(mc);
  g_scene.provider = std::make_unique<estimator::SyntheticPatchProvider>(4, 8, 555);

  estimator::TrainConfig tc;
  tc.steps = 1600;
  tc.batch_size = 16;
  tc.learning_rate = 2e-3;
  tc.seed = 99;
  const auto trace = estimator::train_estimator(
      *g_scene.model, *g_scene.provider, dataset,
      [&](const clips::EstimatorSample& s) -> const img::Image& {
        return (s.is_keyframe ? images_key : images_ctx).at(s.view)[static_cast<size_t>(s.frame_index)];
      },
      tc);
  REQUIRE_OK(trace.excluded_samples == 0, "training samples were excluded");

  // Held-out frames: timestamps halfway between context frames, never seen
  // in training, rendered in the front view.
  const auto cam = toyscene::scene_camera(g_scene.spec, "front");
  double err2d = 0.0, err_depth = 0.0;
  long count = 0;
  for (int i = 0; i < 40; ++i) {
    const double t = (i + 0.5) / 30.0;
    auto pose = toyscene::pose_at(g_scene.spec, t);
    const auto image = render::render(skeleton, pose, cam, g_scene.style);
    const auto est = g_scene.model->estimate(image, *g_scene.provider);
    const auto truth = camera::project(motion::fk(skeleton, pose), cam);
    for (size_t j = 0; j < truth.size(); ++j) {
      const double dx = est.joints[j].x - truth[j].x;
      const double dy = est.joints[j].y - truth[j].y;
      err2d += std::sqrt(dx * dx + dy * dy);
      err_depth += std::abs(est.joints[j].depth - truth[j].depth);
      ++count;
    }
  }
  err2d /= static_cast<double>(count);
  err_depth /= static_cast<double>(count);
  const double depth_range_px = g_scene.spec.image_size;  // full NDC span in pixels
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();

  REQUIRE_OK(err2d < 3.0, "held-out 2D error " + fmt(err2d) + " px");
  REQUIRE_OK(err_depth < 0.05 * depth_range_px,
             "held-out depth error " + fmt(err_depth) + " px vs budget " +
                 fmt(0.05 * depth_range_px));
  REQUIRE_OK(seconds < 600.0, "runtime " + fmt(seconds) + " s exceeds 10 min");
  out.detail = "2D " + fmt(err2d) + " px, depth " + fmt(err_depth) + " px, " + fmt(seconds) + " s";
  return out;
}

// ------------------------------------------------------------ criterion 9

Outcome criterion_mimic_round_trip() {
  Outcome out;
  const auto start = Clock::now();
  REQUIRE_OK(g_scene.model != nullptr, "estimator criterion must run first");

  const auto skeleton = g_scene.gt.skeleton();
  const int begin = g_scene.gt.keyframe_indices.front();
  const int end = g_scene.gt.keyframe_indices.back();

  // Ground-truth 4-second window at 15 fps, rendered as the "generated
  // video", plus the keyed placeholder window the optimizer starts from.
  motion::MotionSequence gt_window = toyscene::keyed_window_15fps(g_scene.gt, begin, end);
  motion::MotionSequence true_window = gt_window;
  {
    const int step = g_scene.gt.fps / 15;
    for (size_t j = 0; j < true_window.poses.size(); ++j)
      true_window.poses[j] =
          g_scene.gt.poses[static_cast<size_t>(begin + static_cast<int>(j) * step)];
  }
  REQUIRE_OK(true_window.poses.size() == 61, "window is not 4 s at 15 fps");

  mimic::MimicContext ctx{skeleton, g_scene.style, toyscene::scene_camera(g_scene.spec, "front"),
                          {}};
  const auto video = render::render_frames(true_window, ctx.cam, ctx.style);
  const auto frame_data = mimic::make_frame_data(video, *g_scene.model, *g_scene.provider);
  const auto result = mimic::mimic_sequence(gt_window, frame_data, ctx);

  // Keyframes bitwise preserved.
  for (int k : gt_window.keyframe_indices) {
    const auto& a = result.motion.poses[static_cast<size_t>(k)];
    const auto& b = true_window.poses[static_cast<size_t>(k)];
    REQUIRE_OK(a.root_position == b.root_position, "keyframe root moved");
    for (size_t j = 0; j < a.rotations.size(); ++j)
      REQUIRE_OK(a.rotations[j].coeffs() == b.rotations[j].coeffs(), "keyframe rotation moved");
  }

  const double l2p = metrics::l2p(result.motion, true_window);
  const double hl2q = metrics::hl2q(result.motion, true_window, {0.5});

  // Static baseline: hold each previous keyframe across its interval.
  const double static_l2q = metrics::l2q(gt_window, true_window);
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();

  REQUIRE_OK(l2p < 0.02, "height-normalized L2P " + fmt(l2p));
  REQUIRE_OK(5.0 * hl2q < static_l2q,
             "HL2Q " + fmt(hl2q) + " not 5x below static-baseline L2Q " + fmt(static_l2q));
  REQUIRE_OK(seconds < 900.0, "runtime " + fmt(seconds) + " s exceeds 15 min");
  out.detail = "L2P " + fmt(l2p) + ", HL2Q " + fmt(hl2q) + " vs static L2Q " + fmt(static_l2q) +
               ", " + fmt(seconds) + " s";
  return out;
}

// ----------------------------------------------------------- criterion 10

Outcome criterion_mimic_gradients_schedule() {
  Outcome out;

  // Inward schedule enumeration.
  const auto rounds = mimic::inward_schedule(0, 10);
  std::vector<std::vector<int>> got;
  for (const auto& r : rounds) {
    std::vector<int> frames;
    for (const auto& t : r) frames.push_back(t.frame);
    got.push_back(frames);
  }
  const std::vector<std::vector<int>> expected = {{1, 9}, {2, 8}, {3, 7}, {4, 6}, {5}};
  REQUIRE_OK(got == expected, "inward_schedule(0,10) enumeration mismatch");

  // 8 s / 2 s-context / batch-6: 14 repetitions.
  std::vector<int> keys;
  for (int s = 0; s <= 6; ++s) keys.push_back(15 * s);
  REQUIRE_OK(mimic::plan_repetitions(keys, 6) == 14,
             "repetitions " + std::to_string(mimic::plan_repetitions(keys, 6)));

  // Full-objective gradients vs finite differences on the toy scene.
  toyscene::SceneSpec spec;
  spec.joints = 3;
  mimic::MimicContext ctx{toyscene::chain_skeleton(3, 0.8), toyscene::scene_style(3),
                          toyscene::scene_camera(spec, "front"), {}};
  motion::Pose pose = toyscene::pose_at(spec, 0.3);
  pose.rotations.resize(3);
  motion::Pose target_pose = toyscene::pose_at(spec, 0.45);
  target_pose.rotations.resize(3);

  const auto positions = motion::fk(ctx.skeleton, target_pose);
  const auto screen = camera::project(positions, ctx.cam);
  ad::Tensor target({3, 3});
  for (size_t j = 0; j < 3; ++j) {
    target.v[j * 3 + 0] = screen[j].x;
    target.v[j * 3 + 1] = screen[j].y;
    target.v[j * 3 + 2] = screen[j].depth;
  }
  const auto frame = render::render(ctx.skeleton, target_pose, ctx.cam, ctx.style);
  mimic::RegTargets reg{target_pose.root_position, target_pose.rotations};

  Eigen::Vector3d grad_p;
  std::vector<Eigen::Vector4d> grad_r;
  mimic::mimic_loss(pose, target, frame, ctx, reg, &grad_p, &grad_r);
  auto eval = [&](const motion::Pose& p) {
    return mimic::mimic_loss(p, target, frame, ctx, reg).total;
  };
  const double h = 1e-6;
  double worst = 0.0;
  for (int k = 0; k < 3; ++k) {
    motion::Pose plus = pose, minus = pose;
    plus.root_position[k] += h;
    minus.root_position[k] -= h;
    const double fd = (eval(plus) - eval(minus)) / (2 * h);
    worst = std::max(worst, oracles::rel_err(fd, grad_p[k]));
  }
  Rng rng(1010);
  for (int j = 0; j < 3; ++j) {
    Eigen::Vector4d q(pose.rotations[static_cast<size_t>(j)].w(),
                      pose.rotations[static_cast<size_t>(j)].x(),
                      pose.rotations[static_cast<size_t>(j)].y(),
                      pose.rotations[static_cast<size_t>(j)].z());
    Eigen::Vector4d dir(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    dir -= dir.dot(q) * q;
    dir.normalize();
    auto eval_dir = [&](double eps) {
      motion::Pose p = pose;
      const Eigen::Vector4d v = q + eps * dir;
      p.rotations[static_cast<size_t>(j)] = Eigen::Quaterniond(v[0], v[1], v[2], v[3]).normalized();
      return eval(p);
    };
    const double fd = (eval_dir(h) - eval_dir(-h)) / (2 * h);
    worst = std::max(worst, oracles::rel_err(fd, grad_r[static_cast<size_t>(j)].dot(dir)));
  }
  REQUIRE_OK(worst < 1e-3, "worst relative gradient error " + fmt(worst));
  out.detail = "schedule exact; 14 repetitions; worst grad rel err " + fmt(worst);
  return out;
}

// ----------------------------------------------------------- criterion 11

Outcome criterion_determinism() {
  Outcome out;
  const auto dir = fs::temp_directory_path() / "anymole_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);

  toyscene::SceneSpec spec;
  spec.total_seconds = 4;
  spec.image_size = 32;
  spec.camera_scale = 4.5;
  motion::save_motion(toyscene::make_motion(spec), dir / "motion.json");
  std::ofstream(dir / "config.json") << R"({
  "output_root": "out",
  "scene": {"motion": "motion.json"},
  "camera": {"view": "front", "distance": 8.0, "scale": 4.5, "image": [32, 32],
             "depth_range": [4.0, 12.0], "subject_center": [0.0, 1.6, 0.0]},
  "views": ["front", "left", "right", "back"],
  "adapt": {"steps": 5, "learning_rate": 0.005, "batch_size": 4, "views": 4,
            "intervals": [1, 2, 3], "seed": 11, "t_max": 10,
            "text": "a rigged character animating in a fixed scene"},
  "estimator": {"steps": 25, "batch_size": 8, "learning_rate": 0.002, "views": 3,
                "keyframe_weight": 3, "seed": 22, "provider_channels": 6,
                "merged_channels": 6, "depth_hidden": 16, "init_seed": 77,
                "provider_seed": 555},
  "generate": {"seed": 33},
  "mimic": {"steps": 3, "batch_size": 6, "step_size": 0.01},
  "evaluate": {"hl2q_threshold": 0.5}
})";

  const auto cfg = pipeline::load_run_config(dir / "config.json");
  auto run_all = [&]() {
    pipeline::run_synth_data(cfg, true);
    pipeline::run_adapt(cfg, true);
    pipeline::run_train_estimator(cfg, true);
    pipeline::run_generate(cfg, true);
    pipeline::run_mimic(cfg, true);
  };
  run_all();
  const auto m15 = cfg.output_root / "mimic" / "motion15.json";
  const auto m30 = cfg.output_root / "mimic" / "motion30.json";
  const auto sha15 = pipeline::sha256_file(m15);
  const auto sha30 = pipeline::sha256_file(m30);
  run_all();
  REQUIRE_OK(pipeline::sha256_file(m15) == sha15, "motion15.json changed across re-runs");
  REQUIRE_OK(pipeline::sha256_file(m30) == sha30, "motion30.json changed across re-runs");
  out.detail = "two forced pipeline runs, byte-identical motion outputs";
  return out;
}

}  // namespace

int main() {
  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Entry> criteria = {
      {1, "kinematics oracle", criterion_fk_oracle},
      {2, "metric suite vs oracles", criterion_metrics},
      {3, "clip sampler enumeration", criterion_clip_sampler},
      {4, "icadapt freeze/train contract", criterion_icadapt},
      {5, "guidance pinning", criterion_guidance_pinning},
      {6, "two-stage plan linearity", criterion_plan_linearity},
      {7, "estimator gradient check", criterion_estimator_gradients},
      {8, "estimator training accuracy", criterion_estimator_training},
      {9, "mimicking round trip", criterion_mimic_round_trip},
      {10, "mimic gradients and schedule", criterion_mimic_gradients_schedule},
      {11, "pipeline determinism", criterion_determinism},
  };

  int failures = 0;
  for (const auto& entry : criteria) {
    Outcome outcome;
    try {
      outcome = entry.fn();
    } catch (const std::exception& e) {
      outcome.pass = false;
      outcome.detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] criterion %2d (%s): %s\n", outcome.pass ? "PASS" : "FAIL", entry.id,
                entry.name, outcome.detail.c_str());
    std::fflush(stdout);
    if (!outcome.pass) ++failures;
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
