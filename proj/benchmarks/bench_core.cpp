#include <benchmark/benchmark.h>

#include "anymole/autodiff.hpp"
#include "anymole/diffusion.hpp"
#include "anymole/metrics.hpp"
#include "anymole/motion.hpp"
#include "anymole/render.hpp"
#include "anymole/rng.hpp"
#include "anymole/toyscene.hpp"

using namespace anymole;

namespace {

motion::MotionSequence bench_motion(int joints, int frames) {
  Rng rng(1);
  motion::MotionSequence m;
  m.skeleton_joints = toyscene::chain_skeleton(joints, 0.8).joints();
  m.fps = 30;
  for (int f = 0; f < frames; ++f) {
    motion::Pose pose;
    for (int j = 0; j < joints; ++j) {
      Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
      q.normalize();
      pose.rotations.push_back(motion::canonicalized(q));
    }
    m.poses.push_back(std::move(pose));
  }
  return m;
}

}  // namespace

static void BM_ForwardKinematics(benchmark::State& state) {
  const auto m = bench_motion(static_cast<int>(state.range(0)), 1);
  const auto skeleton = m.skeleton();
  for (auto _ : state) {
    auto positions = motion::fk(skeleton, m.poses[0]);
    benchmark::DoNotOptimize(positions);
  }
}
BENCHMARK(BM_ForwardKinematics)->Arg(5)->Arg(10)->Arg(30);

static void BM_RenderFrame(benchmark::State& state) {
  toyscene::SceneSpec spec;
  spec.image_size = static_cast<int>(state.range(0));
  spec.camera_scale = spec.image_size / 7.0;
  const auto skeleton = toyscene::chain_skeleton(spec.joints, spec.link_length);
  const auto cam = toyscene::scene_camera(spec, "front");
  const auto style = toyscene::scene_style(spec.joints);
  const auto pose = toyscene::pose_at(spec, 0.4);
  for (auto _ : state) {
    auto image = render::render(skeleton, pose, cam, style);
    benchmark::DoNotOptimize(image);
  }
}
BENCHMARK(BM_RenderFrame)->Arg(32)->Arg(64)->Arg(128);

static void BM_Conv2d(benchmark::State& state) {
  Rng rng(2);
  const int c = static_cast<int>(state.range(0));
  ad::Tensor x = ad::Tensor::randn({1, c, 16, 16}, rng);
  ad::Tensor w = ad::Tensor::randn({c, c, 3, 3}, rng, 0.1);
  ad::Tensor b = ad::Tensor::randn({c}, rng, 0.1);
  for (auto _ : state) {
    ad::Graph g;
    auto out = g.conv2d(g.constant(x), g.constant(w), g.constant(b), 1);
    benchmark::DoNotOptimize(g.val(out).v.data());
  }
}
BENCHMARK(BM_Conv2d)->Arg(4)->Arg(8)->Arg(16);

static void BM_DenoiseStep(benchmark::State& state) {
  diffusion::ToyModelConfig cfg;
  cfg.width = 32;
  cfg.height = 32;
  diffusion::ToyVideoModel model(cfg);
  Rng rng(3);
  diffusion::LatentVideo z;
  z.values = ad::Tensor::randn({16, 48, 8, 8}, rng);
  z.noise_level = 10;
  diffusion::Conditioning cond;
  cond.first_frame = img::Image::zeros(32, 32, 3);
  cond.last_frame = img::Image::zeros(32, 32, 3);
  cond.fps = 15;
  cond.timestep = 10;
  for (auto _ : state) {
    auto out = model.denoise_step(z, cond);
    benchmark::DoNotOptimize(out.values.v.data());
  }
}
BENCHMARK(BM_DenoiseStep);

static void BM_Npss(benchmark::State& state) {
  const auto a = bench_motion(5, static_cast<int>(state.range(0)));
  const auto b = bench_motion(5, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::npss(a, b));
  }
}
BENCHMARK(BM_Npss)->Arg(30)->Arg(60);

static void BM_LatentCodecRoundTrip(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  diffusion::LatentCodec codec(size, size);
  Rng rng(4);
  img::Image frame = img::Image::zeros(size, size, 3);
  for (double& v : frame.data) v = rng.uniform();
  for (auto _ : state) {
    auto image = codec.decode(codec.encode(frame));
    benchmark::DoNotOptimize(image.data.data());
  }
}
BENCHMARK(BM_LatentCodecRoundTrip)->Arg(32)->Arg(64);

BENCHMARK_MAIN();
