#pragma once

#include <string>
#include <vector>

#include "anymole/camera.hpp"
#include "anymole/motion.hpp"
#include "anymole/render.hpp"

namespace anymole::toyscene {

/// Bundled synthetic scene: an articulated chain following a smooth,
/// analytically defined motion (period two seconds, so the context window
/// covers one full cycle). Keyframes sit at one-second intervals after the
/// context.
struct SceneSpec {
  int joints = 5;
  double link_length = 0.8;
  int fps = 30;
  int total_seconds = 6;  // includes the context
  int context_seconds = 2;
  int image_size = 64;
  double camera_distance = 8.0;
  double camera_scale = 9.0;
  double depth_radius = 4.0;
};

motion::Skeleton chain_skeleton(int joints, double link_length);

/// Continuous-time ground-truth pose; usable at off-grid timestamps for
/// held-out evaluation frames.
motion::Pose pose_at(const SceneSpec& spec, double t);

/// Full ground-truth motion at spec.fps with context_length and keyframes
/// (every second from context_seconds to total_seconds) filled in.
motion::MotionSequence make_motion(const SceneSpec& spec);

Eigen::Vector3d subject_center(const SceneSpec& spec);
camera::CameraParams scene_camera(const SceneSpec& spec, const std::string& view);
std::vector<render::ViewSetup> scene_views(const SceneSpec& spec,
                                           const std::vector<std::string>& names);
render::RenderStyle scene_style(int joints);

/// 15 fps window over [begin_frame, end_frame] of a 30 fps motion, keyframe
/// indices remapped; interior poses hold the previous keyframe pose (they
/// are optimization placeholders, not data).
motion::MotionSequence keyed_window_15fps(const motion::MotionSequence& motion30, int begin_frame,
                                          int end_frame);

}  // namespace anymole::toyscene
