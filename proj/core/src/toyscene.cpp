#include "anymole/toyscene.hpp"

#include <cmath>
#include <numbers>

#include "anymole/errors.hpp"

namespace anymole::toyscene {

namespace {
constexpr double kPi = std::numbers::pi;

Eigen::Quaterniond axis_rotation(const Eigen::Vector3d& axis, double angle) {
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis));
}
}  // namespace

motion::Skeleton chain_skeleton(int joints, double link_length) {
  std::vector<motion::Joint> list;
  list.push_back({"root", -1, Eigen::Vector3d::Zero()});
  for (int j = 1; j < joints; ++j)
    list.push_back({"link" + std::to_string(j), j - 1, {0.0, link_length, 0.0}});
  return motion::Skeleton(std::move(list));
}

motion::Pose pose_at(const SceneSpec& spec, double t) {
  motion::Pose pose;
  pose.root_position = {0.35 * std::sin(kPi * t), 0.08 * std::sin(2.0 * kPi * t),
                        0.30 * std::sin(kPi * t + 1.1)};
  pose.rotations.resize(static_cast<size_t>(spec.joints));
  for (int j = 0; j < spec.joints; ++j) {
    const double swing = (j == 0 ? 0.12 : 0.30) * std::sin(kPi * t + 0.8 * j);
    const double lean = (j == 0 ? 0.10 : 0.22) * std::sin(kPi * t + 0.5 + 0.65 * j);
    const Eigen::Quaterniond q =
        axis_rotation(Eigen::Vector3d::UnitZ(), swing) * axis_rotation(Eigen::Vector3d::UnitX(), lean);
    pose.rotations[static_cast<size_t>(j)] = motion::canonicalized(q.normalized());
  }
  return pose;
}

motion::MotionSequence make_motion(const SceneSpec& spec) {
  if (spec.total_seconds <= spec.context_seconds)
    throw ContractViolation("toy scene: total must exceed the context span");
  motion::MotionSequence m;
  m.skeleton_joints = chain_skeleton(spec.joints, spec.link_length).joints();
  m.fps = spec.fps;
  const int frames = spec.total_seconds * spec.fps + 1;
  m.poses.reserve(static_cast<size_t>(frames));
  for (int i = 0; i < frames; ++i)
    m.poses.push_back(pose_at(spec, static_cast<double>(i) / spec.fps));
  m.context_length = spec.context_seconds * spec.fps;
  for (int s = spec.context_seconds; s <= spec.total_seconds; ++s)
    m.keyframe_indices.push_back(s * spec.fps);
  m.validate();
  return m;
}

Eigen::Vector3d subject_center(const SceneSpec& spec) {
  return {0.0, 0.5 * spec.link_length * (spec.joints - 1), 0.0};
}

camera::CameraParams scene_camera(const SceneSpec& spec, const std::string& view) {
  return camera::named_view(view, subject_center(spec), spec.camera_distance, spec.image_size,
                            spec.image_size, spec.camera_scale, spec.depth_radius);
}

std::vector<render::ViewSetup> scene_views(const SceneSpec& spec,
                                           const std::vector<std::string>& names) {
  std::vector<render::ViewSetup> views;
  for (const auto& name : names) views.push_back({name, scene_camera(spec, name)});
  return views;
}

render::RenderStyle scene_style(int joints) {
  render::RenderStyle style;
  style.joint_radius = 1.7;
  style.bone_thickness = 1.0;
  style.softness = 1.0;
  style.background = 0.05;
  style.colors = render::default_palette(joints);
  return style;
}

motion::MotionSequence keyed_window_15fps(const motion::MotionSequence& motion30, int begin_frame,
                                          int end_frame) {
  motion30.validate();
  if (motion30.fps % 15 != 0) throw UnsupportedRate("keyed window expects an fps multiple of 15");
  const int step = motion30.fps / 15;
  if ((end_frame - begin_frame) % step != 0)
    throw ContractViolation("keyed window: span must align with the 15 fps grid");

  motion::MotionSequence window;
  window.skeleton_joints = motion30.skeleton_joints;
  window.fps = 15;
  for (int k : motion30.keyframe_indices)
    if (k >= begin_frame && k <= end_frame) {
      if ((k - begin_frame) % step != 0)
        throw ContractViolation("keyed window: keyframe off the 15 fps grid");
      window.keyframe_indices.push_back((k - begin_frame) / step);
    }
  if (window.keyframe_indices.empty())
    throw ContractViolation("keyed window: no keyframes inside the span");

  const int frames = (end_frame - begin_frame) / step + 1;
  window.poses.reserve(static_cast<size_t>(frames));
  size_t next_key = 0;
  int hold = begin_frame;
  for (int i = 0; i < frames; ++i) {
    const int src = begin_frame + i * step;
    if (next_key < window.keyframe_indices.size() && window.keyframe_indices[next_key] == i) {
      window.poses.push_back(motion30.poses[static_cast<size_t>(src)]);
      hold = src;
      ++next_key;
    } else {
      // Placeholder: hold the previous keyframe pose until optimized.
      window.poses.push_back(motion30.poses[static_cast<size_t>(hold)]);
    }
  }
  window.validate();
  return window;
}

}  // namespace anymole::toyscene
