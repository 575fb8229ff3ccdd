#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <filesystem>
#include <string>
#include <vector>

#include "anymole/camera.hpp"
#include "anymole/estimator.hpp"
#include "anymole/image.hpp"
#include "anymole/motion.hpp"
#include "anymole/render.hpp"
#include "anymole/tensor.hpp"

namespace anymole::mimic {

struct MimicConfig {
  double lambda_img = 50.0;
  double lambda_pos = 7000.0;
  double lambda_rot = 30000.0;
  int steps_per_sequence = 100;
  int batch_size = 6;
  int views = 1;          // single (front) view
  double step_size = 1e-2;  // adaptive per-parameter descent (Adam) for P and R

  void validate() const;
};

/// One interior frame to optimize, with its initialization and regularizer
/// sources resolved.
struct FrameTask {
  int frame = 0;
  int init_from = 0;   // nearest already-optimized frame (keyframe in round 1)
  int prev_frame = 0;  // frame supplying R_prev (same side)
  int k1 = 0, k2 = 0;  // bracketing keyframes
  int round = 1;
  bool is_middle = false;  // single middle emission (k1+f == k2-f)
};

/// Rounds of the inward schedule for one keyframe interval: round f holds
/// the pair (k1+f, k2-f) while k1+f < k2-f; an exact middle frame is
/// emitted alone in the final round. Empty when k2 <= k1+1.
std::vector<std::vector<FrameTask>> inward_schedule(int k1, int k2);

/// P_intp: bracketing keyframe roots linearly interpolated at frame j.
/// R_prev: the temporally adjacent frame on j's side of the interval (the
/// keyframe itself in round 1; the lower neighbor for the middle frame).
struct RegTargets {
  Eigen::Vector3d p_intp;
  std::vector<Eigen::Quaterniond> r_prev;
};
RegTargets regularizer_targets(int frame, int k1, int k2,
                               const std::vector<motion::Pose>& working_poses);

struct MimicContext {
  motion::Skeleton skeleton;
  render::RenderStyle style;
  camera::CameraParams cam;
  MimicConfig config;
};

struct LossBreakdown {
  double total = 0.0;
  double joint = 0.0;
  double image = 0.0;
  double pos_reg = 0.0;
  double rot_reg = 0.0;
};

/// Full mimicking objective for one frame:
///   || screen(fk(P,R)) - target ||^2 + lambda_img ||render - frame||^2
///   + lambda_pos ||P - P_intp||^2 + lambda_rot ||R - R_prev||^2,
/// with the screen term covering x, y and denormalized depth, and the image
/// term on luminance. Gradients (exact, via the autodiff tape) are written
/// to grad_p / grad_r when non-null.
LossBreakdown mimic_loss(const motion::Pose& pose, const ad::Tensor& target_screen,
                         const img::Image& target_frame, const MimicContext& ctx,
                         const RegTargets& reg, Eigen::Vector3d* grad_p = nullptr,
                         std::vector<Eigen::Vector4d>* grad_r = nullptr);

struct FrameResult {
  motion::Pose pose;
  std::vector<double> losses;  // per optimization step
  bool failed = false;
  std::string diagnostic;
};

/// Gradient descent from the initialization, quaternions re-normalized
/// after each step; returns the best-loss iterate. Divergence (loss above
/// 10x the initial) aborts back to the initialization with `failed` set.
FrameResult mimic_frame(const FrameTask& task, const motion::Pose& init,
                        const ad::Tensor& target_screen, const img::Image& target_frame,
                        const MimicContext& ctx, const RegTargets& reg);

struct FrameData {
  img::Image image;
  ad::Tensor target_screen;  // (J,3)
};

/// Estimator targets plus image-term targets for every video frame.
std::vector<FrameData> make_frame_data(const std::vector<img::Image>& video,
                                       estimator::EstimatorModel& model,
                                       const estimator::FeatureProvider& provider);

struct MimicResult {
  motion::MotionSequence motion;
  long rounds = 0;
  long tasks = 0;
  long batches = 0;  // optimization repetitions (round tasks chunked by batch_size)
  std::vector<std::pair<int, FrameResult>> frame_results;  // (frame, result)
};

/// Sequential inward optimization over every adjacent keyframe pair of
/// `keyed_motion` (poses at 15 fps over the keyframe span; only keyframe
/// poses are read, and they are returned bitwise untouched). `frames` must
/// cover every motion frame.
MimicResult mimic_sequence(const motion::MotionSequence& keyed_motion,
                           const std::vector<FrameData>& frames, const MimicContext& ctx);

/// Batch/repetition bookkeeping without running any optimization.
long plan_repetitions(const std::vector<int>& keyframe_indices, int batch_size);

void write_loss_trace_csv(const MimicResult& result, const std::filesystem::path& path);

}  // namespace anymole::mimic
