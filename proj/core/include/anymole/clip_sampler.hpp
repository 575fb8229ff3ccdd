#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "anymole/camera.hpp"

namespace anymole::clips {

/// One strided 16-frame (in general, k-frame) window into a rendered view.
struct ClipIndex {
  int view = 0;
  std::vector<int> frame_indices;  // start + i * interval, constant stride
  int interval = 1;
  int fps_tag = 30;  // base_fps / interval, exact by construction
};

/// Enumerate training clips: for every view and every interval s, one clip
/// per start in [0, frames_per_view - k*s] inclusive. Ordering is
/// view-major, then interval, then start. Intervals too large for a single
/// clip contribute nothing (with a warning); intervals must divide
/// base_fps exactly.
std::vector<ClipIndex> gather_clips(int num_views, int frames_per_view, int k,
                                    const std::vector<int>& intervals, int base_fps);

/// One weighted supervision entry for the joint estimator. Images are
/// referenced by (view, frame index in that view's rendered sequence),
/// never copied.
struct EstimatorSample {
  std::string view;
  int frame_index = 0;
  bool is_keyframe = false;
  int multiplicity = 1;  // w for keyframe samples, 1 otherwise
  std::vector<Eigen::Vector3d> joints_global;
  std::vector<camera::ScreenJoint> joints_screen;  // projected with the view camera
};

struct ViewFrames {
  std::string view;
  camera::CameraParams cam;
  // Global joint positions per frame, indexed as the rendered sequence.
  std::vector<std::vector<Eigen::Vector3d>> joints;
};

/// Assemble the estimator dataset: context frames with multiplicity 1,
/// keyframes with multiplicity w, back views dropped. An empty keyframe set
/// requires allow_empty_keyframes (the "no data selection" ablation); it is
/// never produced silently.
std::vector<EstimatorSample> assemble_estimator_dataset(
    const std::vector<ViewFrames>& context_frames, const std::vector<ViewFrames>& keyframes,
    int keyframe_weight, bool allow_empty_keyframes = false);

/// Sum of multiplicities (size of one training epoch before shuffling).
long weighted_entry_count(const std::vector<EstimatorSample>& samples);

/// Duplicate samples by multiplicity into a flat epoch list of indices.
std::vector<int> expand_epoch(const std::vector<EstimatorSample>& samples);

void write_dataset_manifest(const std::vector<ClipIndex>& clip_list,
                            const std::vector<EstimatorSample>& samples,
                            const std::filesystem::path& path);

}  // namespace anymole::clips
