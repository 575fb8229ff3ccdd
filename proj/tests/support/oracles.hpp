// Independent reference implementations used as test oracles. These stay
// deliberately separate from the library code paths they check: FK via
// homogeneous matrix composition, NPSS via a direct DFT + cumulative-EMD
// translation, slerp via the axis-angle exponential map.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "anymole/motion.hpp"
#include "anymole/rng.hpp"

namespace oracles {

// FK through explicit 4x4 homogeneous transforms composed down the chain.
inline std::vector<Eigen::Vector3d> fk_homogeneous(const anymole::motion::Skeleton& skeleton,
                                                   const anymole::motion::Pose& pose) {
  const int n = skeleton.joint_count();
  std::vector<Eigen::Matrix4d> world(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    Eigen::Matrix4d local = Eigen::Matrix4d::Identity();
    local.block<3, 3>(0, 0) = pose.rotations[static_cast<size_t>(j)].toRotationMatrix();
    local.block<3, 1>(0, 3) =
        j == 0 ? pose.root_position : skeleton.joint(j).offset;
    world[static_cast<size_t>(j)] =
        j == 0 ? local : world[static_cast<size_t>(skeleton.joint(j).parent)] * local;
  }
  std::vector<Eigen::Vector3d> out(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) out[static_cast<size_t>(j)] = world[static_cast<size_t>(j)].block<3, 1>(0, 3);
  return out;
}

// Slerp via the exponential map: q(t) = q0 * exp(t * log(q0^-1 q1)).
inline Eigen::Quaterniond slerp_axis_angle(const Eigen::Quaterniond& q0,
                                           const Eigen::Quaterniond& q1, double t) {
  Eigen::Quaterniond target = q1;
  if (q0.coeffs().dot(q1.coeffs()) < 0.0) target.coeffs() = -target.coeffs();
  const Eigen::Quaterniond rel = q0.conjugate() * target;
  const Eigen::AngleAxisd aa(rel);
  return q0 * Eigen::Quaterniond(Eigen::AngleAxisd(t * aa.angle(), aa.axis()));
}

// NPSS reference: power spectra normalized per channel, L1 distance of
// cumulative distributions, weighted by ground-truth channel power.
inline double npss_reference(const std::vector<std::vector<double>>& pred,
                             const std::vector<std::vector<double>>& gt) {
  auto spectrum = [](const std::vector<double>& x) {
    const size_t n = x.size();
    std::vector<double> p(n, 0.0);
    for (size_t k = 0; k < n; ++k) {
      std::complex<double> c{0.0, 0.0};
      for (size_t i = 0; i < n; ++i)
        c += x[i] * std::exp(std::complex<double>(
                 0.0, -2.0 * std::numbers::pi * double(k) * double(i) / double(n)));
      p[k] = std::abs(c) * std::abs(c);
    }
    return p;
  };
  double acc = 0.0, weight = 0.0;
  for (size_t c = 0; c < gt.size(); ++c) {
    const auto ps = spectrum(pred[c]);
    const auto gs = spectrum(gt[c]);
    double pt = 0.0, gtot = 0.0;
    for (double v : ps) pt += v;
    for (double v : gs) gtot += v;
    if (pt <= 0.0 || gtot <= 0.0) continue;
    double emd = 0.0, pc = 0.0, gc = 0.0;
    for (size_t k = 0; k < ps.size(); ++k) {
      pc += ps[k] / pt;
      gc += gs[k] / gtot;
      emd += std::abs(pc - gc);
    }
    acc += emd * gtot;
    weight += gtot;
  }
  return weight > 0.0 ? acc / weight : 0.0;
}

// L2P reference: homogeneous-matrix FK, explicit per-frame/per-joint mean,
// rest-height normalization recomputed from scratch.
inline double l2p_reference(const anymole::motion::MotionSequence& pred,
                            const anymole::motion::MotionSequence& gt) {
  const auto skeleton = pred.skeleton();
  anymole::motion::Pose rest;
  rest.rotations.assign(static_cast<size_t>(skeleton.joint_count()),
                        Eigen::Quaterniond::Identity());
  const auto rest_pos = fk_homogeneous(skeleton, rest);
  Eigen::Vector3d lo = rest_pos[0], hi = rest_pos[0];
  for (const auto& p : rest_pos) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double height = (hi - lo).maxCoeff();
  double acc = 0.0;
  long count = 0;
  for (size_t f = 0; f < pred.poses.size(); ++f) {
    const auto a = fk_homogeneous(skeleton, pred.poses[f]);
    const auto b = fk_homogeneous(skeleton, gt.poses[f]);
    for (size_t j = 0; j < a.size(); ++j) {
      acc += (a[j] - b[j]).squaredNorm() / (height * height);
      ++count;
    }
  }
  return count ? acc / double(count) : 0.0;
}

// ------------------------------------------------------- random fixtures

inline Eigen::Quaterniond random_unit_quaternion(anymole::Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return anymole::motion::canonicalized(q);
}

inline anymole::motion::Skeleton random_skeleton(anymole::Rng& rng, int max_joints = 10) {
  const int n = static_cast<int>(rng.uniform_int(1, max_joints));
  std::vector<anymole::motion::Joint> joints;
  joints.push_back({"j0", -1, Eigen::Vector3d::Zero()});
  for (int j = 1; j < n; ++j) {
    const int parent = static_cast<int>(rng.uniform_int(0, j - 1));
    joints.push_back({"j" + std::to_string(j), parent,
                      {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)}});
  }
  return anymole::motion::Skeleton(std::move(joints));
}

inline anymole::motion::Pose random_pose(anymole::Rng& rng, int joints) {
  anymole::motion::Pose pose;
  pose.root_position = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
  for (int j = 0; j < joints; ++j) pose.rotations.push_back(random_unit_quaternion(rng));
  return pose;
}

inline anymole::motion::MotionSequence random_motion(anymole::Rng& rng, int joints, int frames,
                                                     int fps = 30) {
  anymole::motion::MotionSequence m;
  // A fixed chain topology keeps motions pairwise comparable.
  std::vector<anymole::motion::Joint> list;
  list.push_back({"root", -1, Eigen::Vector3d::Zero()});
  for (int j = 1; j < joints; ++j)
    list.push_back({"j" + std::to_string(j), j - 1, {0.4, 0.1 * j, 0.0}});
  m.skeleton_joints = std::move(list);
  m.fps = fps;
  for (int f = 0; f < frames; ++f) m.poses.push_back(random_pose(rng, joints));
  return m;
}

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-10});
  return std::abs(a - b) / denom;
}

}  // namespace oracles
