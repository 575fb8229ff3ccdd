#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "anymole/clip_sampler.hpp"
#include "anymole/errors.hpp"
#include "anymole/log.hpp"
#include "anymole/rng.hpp"

using namespace anymole;

namespace {

std::vector<clips::ViewFrames> make_views(const std::vector<std::string>& names, int frames,
                                          int joints = 3) {
  std::vector<clips::ViewFrames> views;
  for (const auto& name : names) {
    clips::ViewFrames vf;
    vf.view = name;
    vf.cam = camera::named_view(name, {0, 0, 0}, 5.0, 64, 64, 8.0, 2.5);
    for (int f = 0; f < frames; ++f) {
      std::vector<Eigen::Vector3d> js;
      for (int j = 0; j < joints; ++j) js.emplace_back(0.1 * j, 0.05 * f, 0.0);
      vf.joints.push_back(std::move(js));
    }
    views.push_back(std::move(vf));
  }
  return views;
}

}  // namespace

TEST_CASE("gather_clips: the four-view 60-frame enumeration (348 clips)") {
  const auto clip_list = clips::gather_clips(4, 60, 16, {1, 2, 3}, 30);
  CHECK(clip_list.size() == 348);

  // Per view: 45 + 29 + 13.
  int per_view = 0;
  for (const auto& c : clip_list)
    if (c.view == 0) ++per_view;
  CHECK(per_view == 87);

  std::set<int> tags;
  for (const auto& c : clip_list) tags.insert(c.fps_tag);
  CHECK(tags == std::set<int>{10, 15, 30});
}

TEST_CASE("gather_clips: boundary case with exactly one clip") {
  const auto clip_list = clips::gather_clips(1, 16, 16, {1}, 30);
  REQUIRE(clip_list.size() == 1);
  for (int i = 0; i < 16; ++i) CHECK(clip_list[0].frame_indices[static_cast<size_t>(i)] == i);
}

TEST_CASE("gather_clips: fps tags follow base_fps / interval exactly") {
  const auto clip_list = clips::gather_clips(1, 60, 16, {1, 2, 3}, 30);
  for (const auto& c : clip_list) CHECK(c.fps_tag == 30 / c.interval);
}

TEST_CASE("gather_clips: oversized interval contributes zero clips with a warning") {
  log::reset_warning_count();
  const auto clip_list = clips::gather_clips(2, 20, 16, {1, 5}, 30);
  CHECK(log::warning_count() > 0);
  for (const auto& c : clip_list) CHECK(c.interval == 1);
  CHECK(clip_list.size() == 2 * (20 - 16 + 1));
}

TEST_CASE("gather_clips: interval must divide the base fps") {
  CHECK_THROWS_AS(clips::gather_clips(1, 60, 16, {4}, 30), ConfigError);
}

TEST_CASE("gather_clips: counts match a brute-force index scan") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int n_views = static_cast<int>(rng.uniform_int(1, 4));
    const int n_fpv = static_cast<int>(rng.uniform_int(8, 80));
    const int k = static_cast<int>(rng.uniform_int(2, 16));
    const std::vector<int> intervals = {1, 2, 3, 5, 6};
    const auto clip_list = clips::gather_clips(n_views, n_fpv, k, intervals, 30);

    long expected = 0;
    for (int s : intervals) {
      // Brute force: every start whose last strided index stays in range,
      // per the enumeration's own loop bound.
      long count = 0;
      for (int start = 0; start + k * s <= n_fpv; ++start) ++count;
      expected += count * n_views;
    }
    CHECK(static_cast<long>(clip_list.size()) == expected);

    for (const auto& c : clip_list) {
      CHECK(c.frame_indices.size() == static_cast<size_t>(k));
      for (size_t i = 0; i < c.frame_indices.size(); ++i) {
        CHECK(c.frame_indices[i] >= 0);
        CHECK(c.frame_indices[i] < n_fpv);
        if (i > 0) CHECK(c.frame_indices[i] - c.frame_indices[i - 1] == c.interval);
      }
    }
  }
}

TEST_CASE("gather_clips is deterministic") {
  const auto a = clips::gather_clips(3, 42, 12, {1, 2}, 30);
  const auto b = clips::gather_clips(3, 42, 12, {1, 2}, 30);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].view == b[i].view);
    CHECK(a[i].interval == b[i].interval);
    CHECK(a[i].frame_indices == b[i].frame_indices);
  }
}

TEST_CASE("assemble: weighted entry arithmetic (216 entries)") {
  const auto ctx = make_views({"front", "left", "right"}, 60);
  const auto keys = make_views({"front", "left", "right"}, 4);
  const auto samples = clips::assemble_estimator_dataset(ctx, keys, 3);
  CHECK(clips::weighted_entry_count(samples) == 216);
  CHECK(clips::expand_epoch(samples).size() == 216);
}

TEST_CASE("assemble: weight 1 keeps keyframes single") {
  const auto ctx = make_views({"front"}, 10);
  const auto keys = make_views({"front"}, 4);
  const auto samples = clips::assemble_estimator_dataset(ctx, keys, 1);
  CHECK(clips::weighted_entry_count(samples) == 14);
  for (const auto& s : samples) CHECK(s.multiplicity == (s.is_keyframe ? 1 : 1));
}

TEST_CASE("assemble: back views never survive") {
  const auto ctx = make_views({"front", "left", "right", "back"}, 5);
  const auto keys = make_views({"front", "left", "right", "back"}, 2);
  const auto samples = clips::assemble_estimator_dataset(ctx, keys, 2);
  for (const auto& s : samples) CHECK(s.view != "back");
  CHECK(clips::weighted_entry_count(samples) == 3 * 5 + 3 * 2 * 2);
}

TEST_CASE("assemble: empty keyframes require the explicit ablation flag") {
  const auto ctx = make_views({"front"}, 5);
  CHECK_THROWS_AS(clips::assemble_estimator_dataset(ctx, {}, 3), ConfigError);
  const auto samples = clips::assemble_estimator_dataset(ctx, {}, 3, true);
  CHECK(samples.size() == 5);
}

TEST_CASE("assemble: keyframe weight below one rejected") {
  const auto ctx = make_views({"front"}, 5);
  const auto keys = make_views({"front"}, 1);
  CHECK_THROWS_AS(clips::assemble_estimator_dataset(ctx, keys, 0), ContractViolation);
}

TEST_CASE("assemble: samples carry projected screen joints for their view") {
  const auto ctx = make_views({"front", "left"}, 3);
  const auto keys = make_views({"front", "left"}, 1);
  const auto samples = clips::assemble_estimator_dataset(ctx, keys, 2);
  for (const auto& s : samples) {
    REQUIRE(s.joints_screen.size() == s.joints_global.size());
    const auto* vf = &ctx[s.view == "front" ? 0 : 1];
    const auto expected = camera::project(s.joints_global, vf->cam);
    for (size_t j = 0; j < expected.size(); ++j) {
      CHECK(s.joints_screen[j].x == doctest::Approx(expected[j].x));
      CHECK(s.joints_screen[j].depth == doctest::Approx(expected[j].depth));
    }
  }
}
