#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "anymole/camera.hpp"
#include "anymole/image.hpp"
#include "anymole/motion.hpp"

namespace anymole::render {

/// Smooth primitive styling. Joints render as Gaussian blobs
/// exp(-d^2 / (2 sigma^2)) with sigma = joint_radius * softness; bones as
/// soft capsules with sigma = bone_thickness * softness. Primitives compose
/// by per-pixel, per-channel maximum over a constant background.
struct RenderStyle {
  double joint_radius = 1.6;    // pixels
  double bone_thickness = 0.9;  // pixels
  double softness = 1.0;        // must stay > 0: hard edges are not differentiable
  double background = 0.05;
  std::vector<std::array<double, 3>> colors;  // per joint; empty = default palette

  void validate() const;
};

/// Deterministic, visually distinct per-joint palette.
std::vector<std::array<double, 3>> default_palette(int joint_count);

/// Screen-space rendering core shared with the differentiable image loss.
/// `winners` (when requested) stores, per channel-pixel, the index of the
/// primitive that produced the maximum (-1 for background). Primitives are
/// indexed joints first (0..J-1), then bones in child-joint order.
struct ScreenRender {
  img::Image image;  // RGB
  std::vector<int> winners;
};

ScreenRender render_screen(const std::vector<Eigen::Vector2d>& joint_xy,
                           const motion::Skeleton& skeleton, const RenderStyle& style,
                           int width, int height, bool record_winners = false);

/// Backward companion of render_screen: accumulates d(loss)/d(joint_xy)
/// from per-pixel RGB gradients using the recorded winners.
void render_screen_backward(const std::vector<Eigen::Vector2d>& joint_xy,
                            const motion::Skeleton& skeleton, const RenderStyle& style,
                            const ScreenRender& rendered, const std::vector<double>& grad_rgb,
                            std::vector<Eigen::Vector2d>& grad_xy);

/// Project the pose through the camera and render it.
img::Image render(const motion::Skeleton& skeleton, const motion::Pose& pose,
                  const camera::CameraParams& cam, const RenderStyle& style);

/// All frames of a motion under one camera, in memory.
std::vector<img::Image> render_frames(const motion::MotionSequence& motionIn,
                                      const camera::CameraParams& cam, const RenderStyle& style);

struct ViewSetup {
  std::string name;
  camera::CameraParams cam;
};

/// One PNG sequence per view: <out_dir>/<view>/frame_<index, zero-padded>.png
/// at the motion's own fps. Returns the written paths, view-major.
std::vector<std::filesystem::path> render_views(const motion::MotionSequence& motionIn,
                                                const std::vector<ViewSetup>& views,
                                                const RenderStyle& style,
                                                const std::filesystem::path& out_dir);

std::string frame_filename(int index);

}  // namespace anymole::render
