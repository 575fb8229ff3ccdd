#include "anymole/mimic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "anymole/autodiff.hpp"
#include "anymole/errors.hpp"
#include "anymole/nn.hpp"

namespace anymole::mimic {

void MimicConfig::validate() const {
  if (lambda_img < 0.0 || lambda_pos < 0.0 || lambda_rot < 0.0)
    throw ContractViolation("mimic: lambda weights must be non-negative");
  if (steps_per_sequence <= 0) throw ContractViolation("mimic: steps must be positive");
  if (batch_size <= 0) throw ContractViolation("mimic: batch size must be positive");
  if (step_size <= 0.0) throw ContractViolation("mimic: step size must be positive");
}

std::vector<std::vector<FrameTask>> inward_schedule(int k1, int k2) {
  std::vector<std::vector<FrameTask>> rounds;
  if (k2 <= k1 + 1) return rounds;
  for (int f = 1;; ++f) {
    const int lo = k1 + f, hi = k2 - f;
    if (lo < hi) {
      FrameTask a{lo, lo - 1, lo - 1, k1, k2, f, false};
      FrameTask b{hi, hi + 1, hi + 1, k1, k2, f, false};
      rounds.push_back({a, b});
      continue;
    }
    if (lo == hi) {
      // Middle frame: initialized from the blend of both flanking frames,
      // R_prev taken from the lower side.
      FrameTask m{lo, lo - 1, lo - 1, k1, k2, f, true};
      rounds.push_back({m});
    }
    break;
  }
  return rounds;
}

RegTargets regularizer_targets(int frame, int k1, int k2,
                               const std::vector<motion::Pose>& working_poses) {
  if (frame <= k1 || frame >= k2)
    throw ContractViolation("regularizer_targets: frame must lie strictly inside (k1, k2)");
  RegTargets reg;
  const double alpha = static_cast<double>(frame - k1) / static_cast<double>(k2 - k1);
  reg.p_intp = (1.0 - alpha) * working_poses[static_cast<size_t>(k1)].root_position +
               alpha * working_poses[static_cast<size_t>(k2)].root_position;
  // Side selection: nearer keyframe wins; the middle frame uses the lower
  // neighbor by convention.
  const int prev = (frame - k1 <= k2 - frame) ? frame - 1 : frame + 1;
  reg.r_prev = working_poses[static_cast<size_t>(prev)].rotations;
  return reg;
}

namespace {

struct LossNodes {
  ad::Graph::Id loss, joint, image, pos, rot;
};

ad::Tensor rotations_tensor(const motion::Pose& pose) {
  ad::Tensor r({static_cast<int>(pose.rotations.size()), 4});
  for (size_t j = 0; j < pose.rotations.size(); ++j) {
    r.v[j * 4 + 0] = pose.rotations[j].w();
    r.v[j * 4 + 1] = pose.rotations[j].x();
    r.v[j * 4 + 2] = pose.rotations[j].y();
    r.v[j * 4 + 3] = pose.rotations[j].z();
  }
  return r;
}

// P, R -> normalized quaternions -> FK -> affine screen map -> loss terms.
LossNodes build_loss(ad::Graph& g, ad::Graph::Id p_id, ad::Graph::Id r_id,
                     const ad::Tensor& target_screen, const ad::Tensor& target_luma,
                     const MimicContext& ctx, const RegTargets& reg) {
  const motion::Skeleton& skeleton = ctx.skeleton;
  const int joints = skeleton.joint_count();

  const ad::Graph::Id r_hat = g.quat_normalize_rows(r_id);

  std::vector<ad::Graph::Id> global_rot(static_cast<size_t>(joints));
  std::vector<ad::Graph::Id> global_pos(static_cast<size_t>(joints));
  global_rot[0] = g.slice_row(r_hat, 0);
  global_pos[0] = p_id;
  for (int j = 1; j < joints; ++j) {
    const auto& joint = skeleton.joint(j);
    const auto parent = static_cast<size_t>(joint.parent);
    ad::Tensor offset({3});
    offset.v = {joint.offset.x(), joint.offset.y(), joint.offset.z()};
    const ad::Graph::Id rotated = g.quat_rotate(global_rot[parent], g.constant(offset));
    global_pos[static_cast<size_t>(j)] = g.add(rotated, global_pos[parent]);
    global_rot[static_cast<size_t>(j)] = g.quat_mul(global_rot[parent], g.slice_row(r_hat, j));
  }
  const ad::Graph::Id positions = g.stack_rows(global_pos);
  const ad::Graph::Id screen =
      g.affine_rows(positions, camera::projection_matrix(ctx.cam),
                    camera::projection_offset(ctx.cam));

  LossNodes nodes;
  nodes.joint = g.sq_diff_sum(screen, target_screen);

  const ad::Graph::Id xy = g.slice_cols(screen, 0, 2);
  const ad::Graph::Id rgb =
      g.render_rgb(xy, &skeleton, &ctx.style, ctx.cam.image_width, ctx.cam.image_height);
  nodes.image = g.sq_diff_sum(g.luminance(rgb), target_luma);

  ad::Tensor p_intp({3});
  p_intp.v = {reg.p_intp.x(), reg.p_intp.y(), reg.p_intp.z()};
  nodes.pos = g.sq_diff_sum(p_id, p_intp);

  ad::Tensor r_prev({joints, 4});
  for (int j = 0; j < joints; ++j) {
    const auto& q = reg.r_prev[static_cast<size_t>(j)];
    r_prev.v[static_cast<size_t>(j) * 4 + 0] = q.w();
    r_prev.v[static_cast<size_t>(j) * 4 + 1] = q.x();
    r_prev.v[static_cast<size_t>(j) * 4 + 2] = q.y();
    r_prev.v[static_cast<size_t>(j) * 4 + 3] = q.z();
  }
  nodes.rot = g.sq_diff_sum(r_hat, r_prev);

  ad::Graph::Id loss = nodes.joint;
  loss = g.add(loss, g.scale(nodes.image, ctx.config.lambda_img));
  loss = g.add(loss, g.scale(nodes.pos, ctx.config.lambda_pos));
  loss = g.add(loss, g.scale(nodes.rot, ctx.config.lambda_rot));
  nodes.loss = loss;
  return nodes;
}

ad::Tensor luma_tensor(const img::Image& frame) {
  const img::Image lum = frame.to_luminance();
  ad::Tensor t({lum.height, lum.width});
  t.v = lum.data;
  return t;
}

std::string check_finite(ad::Graph& g, const LossNodes& nodes) {
  const auto bad = [&](ad::Graph::Id id) { return !std::isfinite(g.val(id).v[0]); };
  if (bad(nodes.joint)) return "joint term";
  if (bad(nodes.image)) return "image term";
  if (bad(nodes.pos)) return "position regularizer";
  if (bad(nodes.rot)) return "rotation regularizer";
  if (bad(nodes.loss)) return "total loss";
  return {};
}

motion::Pose pose_from_tensors(const ad::Tensor& p, const ad::Tensor& r) {
  motion::Pose pose;
  pose.root_position = {p.v[0], p.v[1], p.v[2]};
  const int joints = r.dim(0);
  pose.rotations.resize(static_cast<size_t>(joints));
  for (int j = 0; j < joints; ++j) {
    Eigen::Quaterniond q(r.v[static_cast<size_t>(j) * 4 + 0], r.v[static_cast<size_t>(j) * 4 + 1],
                         r.v[static_cast<size_t>(j) * 4 + 2], r.v[static_cast<size_t>(j) * 4 + 3]);
    q.normalize();
    pose.rotations[static_cast<size_t>(j)] = motion::canonicalized(q);
  }
  return pose;
}

}  // namespace

LossBreakdown mimic_loss(const motion::Pose& pose, const ad::Tensor& target_screen,
                         const img::Image& target_frame, const MimicContext& ctx,
                         const RegTargets& reg, Eigen::Vector3d* grad_p,
                         std::vector<Eigen::Vector4d>* grad_r) {
  ctx.config.validate();
  motion::validate_pose(ctx.skeleton, pose);
  ad::Graph g;
  ad::Tensor p = {};
  p = ad::Tensor({3});
  p.v = {pose.root_position.x(), pose.root_position.y(), pose.root_position.z()};
  ad::Tensor r = rotations_tensor(pose);
  const ad::Graph::Id p_id = g.param(&p);
  const ad::Graph::Id r_id = g.param(&r);
  const LossNodes nodes =
      build_loss(g, p_id, r_id, target_screen, luma_tensor(target_frame), ctx, reg);

  LossBreakdown out;
  out.total = g.val(nodes.loss).v[0];
  out.joint = g.val(nodes.joint).v[0];
  out.image = g.val(nodes.image).v[0];
  out.pos_reg = g.val(nodes.pos).v[0];
  out.rot_reg = g.val(nodes.rot).v[0];

  if (grad_p || grad_r) {
    g.backward(nodes.loss);
    if (grad_p) {
      const ad::Tensor& gp = g.grad(p_id);
      *grad_p = {gp.v[0], gp.v[1], gp.v[2]};
    }
    if (grad_r) {
      const ad::Tensor& gr = g.grad(r_id);
      grad_r->resize(static_cast<size_t>(gr.dim(0)));
      for (int j = 0; j < gr.dim(0); ++j)
        (*grad_r)[static_cast<size_t>(j)] = {gr.v[static_cast<size_t>(j) * 4 + 0],
                                             gr.v[static_cast<size_t>(j) * 4 + 1],
                                             gr.v[static_cast<size_t>(j) * 4 + 2],
                                             gr.v[static_cast<size_t>(j) * 4 + 3]};
    }
  }
  return out;
}

FrameResult mimic_frame(const FrameTask& task, const motion::Pose& init,
                        const ad::Tensor& target_screen, const img::Image& target_frame,
                        const MimicContext& ctx, const RegTargets& reg) {
  ctx.config.validate();
  motion::validate_pose(ctx.skeleton, init);
  const ad::Tensor target_luma = luma_tensor(target_frame);

  ad::Tensor p({3});
  p.v = {init.root_position.x(), init.root_position.y(), init.root_position.z()};
  ad::Tensor r = rotations_tensor(init);

  nn::Adam opt({ctx.config.step_size, 0.9, 0.999, 1e-8});
  FrameResult result;
  result.pose = init;

  double best = std::numeric_limits<double>::infinity();
  double initial = 0.0;
  ad::Tensor best_p = p, best_r = r;

  for (int step = 0; step <= ctx.config.steps_per_sequence; ++step) {
    ad::Graph g;
    const ad::Graph::Id p_id = g.param(&p);
    const ad::Graph::Id r_id = g.param(&r);
    const LossNodes nodes = build_loss(g, p_id, r_id, target_screen, target_luma, ctx, reg);
    const double loss = g.val(nodes.loss).v[0];

    if (const std::string term = check_finite(g, nodes); !term.empty()) {
      result.failed = true;
      result.diagnostic = "non-finite " + term + " at frame " + std::to_string(task.frame);
      result.pose = init;
      return result;
    }
    if (step == 0) initial = loss;
    result.losses.push_back(loss);
    if (loss < best) {
      best = loss;
      best_p = p;
      best_r = r;
    }
    if (loss < 1e-10) break;  // numerically converged; Adam would only jitter
    // Absolute floor keeps numerically-perfect fits (loss ~ 0) from
    // tripping the relative divergence test.
    if (loss > 10.0 * initial + 1e-9) {
      result.failed = true;
      result.diagnostic = "diverged at frame " + std::to_string(task.frame);
      result.pose = init;
      return result;
    }
    if (step == ctx.config.steps_per_sequence) break;  // final evaluation only

    g.backward(nodes.loss);
    std::vector<ad::Tensor*> params = {&p, &r};
    std::vector<const ad::Tensor*> grads = {&g.grad(p_id), &g.grad(r_id)};
    // Decay to a tenth of the initial step over the schedule; settles the
    // endgame without giving up early exploration.
    opt.set_learning_rate(ctx.config.step_size *
                          std::pow(0.1, static_cast<double>(step) /
                                            ctx.config.steps_per_sequence));
    opt.step(params, grads);
    // Projection back to the unit-quaternion manifold after each update.
    for (int jj = 0; jj < r.dim(0); ++jj) {
      double n = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double x = r.v[static_cast<size_t>(jj) * 4 + k];
        n += x * x;
      }
      n = std::sqrt(n);
      if (n < 1e-12) throw ContractViolation("mimic_frame: quaternion collapsed to zero");
      for (int k = 0; k < 4; ++k) r.v[static_cast<size_t>(jj) * 4 + k] /= n;
    }
  }
  result.pose = pose_from_tensors(best_p, best_r);
  return result;
}

std::vector<FrameData> make_frame_data(const std::vector<img::Image>& video,
                                       estimator::EstimatorModel& model,
                                       const estimator::FeatureProvider& provider) {
  std::vector<FrameData> out;
  out.reserve(video.size());
  for (const auto& frame : video) {
    FrameData fd;
    fd.image = frame;
    const auto est = model.estimate(frame, provider);
    fd.target_screen = ad::Tensor({static_cast<int>(est.joints.size()), 3});
    for (size_t j = 0; j < est.joints.size(); ++j) {
      fd.target_screen.v[j * 3 + 0] = est.joints[j].x;
      fd.target_screen.v[j * 3 + 1] = est.joints[j].y;
      fd.target_screen.v[j * 3 + 2] = est.joints[j].depth;
    }
    out.push_back(std::move(fd));
  }
  return out;
}

MimicResult mimic_sequence(const motion::MotionSequence& keyed_motion,
                           const std::vector<FrameData>& frames, const MimicContext& ctx) {
  ctx.config.validate();
  keyed_motion.validate();
  const auto& keys = keyed_motion.keyframe_indices;
  if (keys.size() < 2) throw ContractViolation("mimic_sequence: need at least two keyframes");
  if (keys.front() != 0 || keys.back() != static_cast<int>(keyed_motion.poses.size()) - 1)
    throw ContractViolation("mimic_sequence: motion window must span the keyframe range");
  for (size_t f = 0; f < keyed_motion.poses.size(); ++f) {
    if (f >= frames.size() || frames[f].image.width == 0)
      throw ContractViolation("mimic_sequence: missing video frame " + std::to_string(f));
  }

  MimicResult result;
  result.motion = keyed_motion;
  auto& poses = result.motion.poses;

  // Schedules per interval, walked round-by-round across all intervals so
  // a round's tasks only ever read results from earlier rounds.
  std::vector<std::vector<std::vector<FrameTask>>> interval_rounds;
  size_t max_rounds = 0;
  for (size_t i = 0; i + 1 < keys.size(); ++i) {
    interval_rounds.push_back(inward_schedule(keys[i], keys[i + 1]));
    max_rounds = std::max(max_rounds, interval_rounds.back().size());
  }

  for (size_t round = 0; round < max_rounds; ++round) {
    std::vector<FrameTask> tasks;
    for (const auto& rounds : interval_rounds)
      if (round < rounds.size())
        for (const auto& t : rounds[round]) tasks.push_back(t);
    if (tasks.empty()) break;
    ++result.rounds;

    std::vector<std::pair<int, motion::Pose>> staged;
    for (size_t i = 0; i < tasks.size(); ++i) {
      if (i % static_cast<size_t>(ctx.config.batch_size) == 0) ++result.batches;
      const FrameTask& task = tasks[i];
      ++result.tasks;

      motion::Pose init = poses[static_cast<size_t>(task.init_from)];
      if (task.is_middle) {
        // Blend of the two flanking optimized frames.
        const motion::Pose& lo = poses[static_cast<size_t>(task.frame - 1)];
        const motion::Pose& hi = poses[static_cast<size_t>(task.frame + 1)];
        init.root_position = 0.5 * (lo.root_position + hi.root_position);
        for (size_t j = 0; j < init.rotations.size(); ++j)
          init.rotations[j] =
              motion::canonicalized(motion::slerp(lo.rotations[j], hi.rotations[j], 0.5));
      }
      const RegTargets reg = regularizer_targets(task.frame, task.k1, task.k2, poses);
      FrameResult fr = mimic_frame(task, init, frames[static_cast<size_t>(task.frame)].target_screen,
                                   frames[static_cast<size_t>(task.frame)].image, ctx, reg);
      staged.emplace_back(task.frame, fr.pose);
      result.frame_results.emplace_back(task.frame, std::move(fr));
    }
    // Publish after the round completes; tasks inside a round are
    // independent of one another.
    for (auto& [frame, pose] : staged) poses[static_cast<size_t>(frame)] = std::move(pose);
  }
  return result;
}

long plan_repetitions(const std::vector<int>& keyframe_indices, int batch_size) {
  if (batch_size <= 0) throw ContractViolation("plan_repetitions: batch size must be positive");
  std::vector<std::vector<std::vector<FrameTask>>> interval_rounds;
  size_t max_rounds = 0;
  for (size_t i = 0; i + 1 < keyframe_indices.size(); ++i) {
    interval_rounds.push_back(inward_schedule(keyframe_indices[i], keyframe_indices[i + 1]));
    max_rounds = std::max(max_rounds, interval_rounds.back().size());
  }
  long batches = 0;
  for (size_t round = 0; round < max_rounds; ++round) {
    long tasks = 0;
    for (const auto& rounds : interval_rounds)
      if (round < rounds.size()) tasks += static_cast<long>(rounds[round].size());
    batches += (tasks + batch_size - 1) / batch_size;
  }
  return batches;
}

void write_loss_trace_csv(const MimicResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss trace: " + path.string());
  out << "frame,step,loss\n";
  for (const auto& [frame, fr] : result.frame_results)
    for (size_t s = 0; s < fr.losses.size(); ++s)
      out << frame << "," << s << "," << fr.losses[s] << "\n";
}

}  // namespace anymole::mimic
