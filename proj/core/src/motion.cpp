#include "anymole/motion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "anymole/errors.hpp"
#include "anymole/log.hpp"

namespace anymole::motion {

using nlohmann::json;

Skeleton::Skeleton(std::vector<Joint> joints) : joints_(std::move(joints)) {
  if (joints_.empty()) throw ContractViolation("skeleton must contain at least one joint");
  if (joints_[0].parent != -1) throw ContractViolation("root joint must sit at index 0");
  int roots = 0;
  for (size_t i = 0; i < joints_.size(); ++i) {
    const int parent = joints_[i].parent;
    if (parent == -1) {
      ++roots;
      continue;
    }
    if (parent < 0 || static_cast<size_t>(parent) >= joints_.size())
      throw ContractViolation("joint '" + joints_[i].name + "' has out-of-range parent");
    if (static_cast<size_t>(parent) >= i)
      throw ContractViolation("joints must be topologically ordered (parent index < child index)");
  }
  if (roots != 1) throw ContractViolation("skeleton must have exactly one root");
  // Topological order already rules out cycles; walk the parent chain anyway
  // so the invariant is asserted independently of the ordering check.
  for (size_t i = 0; i < joints_.size(); ++i) {
    size_t hops = 0;
    for (int j = static_cast<int>(i); j != -1; j = joints_[static_cast<size_t>(j)].parent) {
      if (++hops > joints_.size()) throw ContractViolation("cycle in joint hierarchy");
    }
  }
}

bool Skeleton::same_structure(const Skeleton& other, double tol) const {
  if (joint_count() != other.joint_count()) return false;
  for (int i = 0; i < joint_count(); ++i) {
    if (joints_[static_cast<size_t>(i)].parent != other.joints_[static_cast<size_t>(i)].parent) return false;
    const Eigen::Vector3d d =
        joints_[static_cast<size_t>(i)].offset - other.joints_[static_cast<size_t>(i)].offset;
    if (d.lpNorm<Eigen::Infinity>() > tol) return false;
  }
  return true;
}

double Skeleton::rest_height() const {
  Pose rest;
  rest.rotations.assign(static_cast<size_t>(joint_count()), Eigen::Quaterniond::Identity());
  const auto positions = fk(*this, rest);
  Eigen::Vector3d lo = positions[0], hi = positions[0];
  for (const auto& p : positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).maxCoeff();
}

Eigen::Quaterniond canonicalized(const Eigen::Quaterniond& q) {
  if (q.w() < 0.0) return Eigen::Quaterniond(-q.w(), -q.x(), -q.y(), -q.z());
  return q;
}

void validate_pose(const Skeleton& skeleton, const Pose& pose) {
  if (static_cast<int>(pose.rotations.size()) != skeleton.joint_count())
    throw ContractViolation("pose has " + std::to_string(pose.rotations.size()) +
                            " rotations for a " + std::to_string(skeleton.joint_count()) +
                            "-joint skeleton");
  for (const auto& q : pose.rotations) {
    if (std::abs(q.norm() - 1.0) > 1e-6)
      throw ContractViolation("pose rotation is not unit-norm");
  }
}

void MotionSequence::validate() const {
  const Skeleton s = skeleton();
  for (const auto& p : poses) validate_pose(s, p);
  int prev = -1;
  for (int k : keyframe_indices) {
    if (k < 0 || static_cast<size_t>(k) >= poses.size())
      throw ContractViolation("keyframe index " + std::to_string(k) + " out of range");
    if (k <= prev) throw ContractViolation("keyframe indices must be sorted and unique");
    prev = k;
  }
  if (context_length < 0 || static_cast<size_t>(context_length) > poses.size())
    throw ContractViolation("context_length out of range");
  if (fps <= 0) throw ContractViolation("fps must be positive");
}

std::vector<Eigen::Vector3d> fk(const Skeleton& skeleton, const Pose& pose) {
  validate_pose(skeleton, pose);
  const int n = skeleton.joint_count();
  std::vector<Eigen::Quaterniond> global_rot(static_cast<size_t>(n));
  std::vector<Eigen::Vector3d> global_pos(static_cast<size_t>(n));
  global_rot[0] = pose.rotations[0];
  global_pos[0] = pose.root_position;
  for (int i = 1; i < n; ++i) {
    const Joint& j = skeleton.joint(i);
    const auto p = static_cast<size_t>(j.parent);
    global_pos[static_cast<size_t>(i)] = global_rot[p] * j.offset + global_pos[p];
    global_rot[static_cast<size_t>(i)] = global_rot[p] * pose.rotations[static_cast<size_t>(i)];
  }
  return global_pos;
}

std::vector<Eigen::Quaterniond> fk_rotations(const Skeleton& skeleton, const Pose& pose) {
  validate_pose(skeleton, pose);
  const int n = skeleton.joint_count();
  std::vector<Eigen::Quaterniond> global_rot(static_cast<size_t>(n));
  global_rot[0] = pose.rotations[0];
  for (int i = 1; i < n; ++i) {
    const Joint& j = skeleton.joint(i);
    global_rot[static_cast<size_t>(i)] =
        global_rot[static_cast<size_t>(j.parent)] * pose.rotations[static_cast<size_t>(i)];
  }
  return global_rot;
}

Eigen::Quaterniond slerp(const Eigen::Quaterniond& q0, const Eigen::Quaterniond& q1, double t) {
  if (q0.norm() < 1e-12 || q1.norm() < 1e-12)
    throw ContractViolation("slerp requires non-zero quaternions");
  Eigen::Vector4d a = q0.coeffs();  // (x, y, z, w)
  Eigen::Vector4d b = q1.coeffs();
  double dot = a.dot(b);
  if (dot < 0.0) {  // shorter arc
    b = -b;
    dot = -dot;
  }
  dot = std::min(dot, 1.0);
  const double omega = std::acos(dot);
  Eigen::Vector4d out;
  if (omega < 1e-8) {
    out = (1.0 - t) * a + t * b;  // nlerp limit
  } else {
    const double s = std::sin(omega);
    out = (std::sin((1.0 - t) * omega) / s) * a + (std::sin(t * omega) / s) * b;
  }
  out.normalize();
  return Eigen::Quaterniond(out);
}

std::vector<int> joint_hierarchy_depths(const Skeleton& skeleton) {
  std::vector<int> depths(static_cast<size_t>(skeleton.joint_count()), 0);
  for (int i = 1; i < skeleton.joint_count(); ++i)
    depths[static_cast<size_t>(i)] = depths[static_cast<size_t>(skeleton.joint(i).parent)] + 1;
  return depths;
}

namespace {

// Mirrored (reflect-without-repeat) index into [0, n-1].
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

}  // namespace

MotionSequence upsample_motion(const MotionSequence& motionIn, int target_fps) {
  motionIn.validate();
  if (target_fps <= 0 || target_fps % motionIn.fps != 0)
    throw UnsupportedRate("target fps " + std::to_string(target_fps) +
                          " is not an integer multiple of " + std::to_string(motionIn.fps));
  const int ratio = target_fps / motionIn.fps;
  if (ratio == 1) return motionIn;

  const int src_len = static_cast<int>(motionIn.poses.size());
  if (src_len == 0) {
    MotionSequence empty = motionIn;
    empty.fps = target_fps;
    return empty;
  }
  const int dst_len = (src_len - 1) * ratio + 1;
  const size_t joints = motionIn.skeleton_joints.size();

  MotionSequence out;
  out.skeleton_joints = motionIn.skeleton_joints;
  out.fps = target_fps;
  out.context_length =
      motionIn.context_length > 0 ? (motionIn.context_length - 1) * ratio + 1 : 0;
  out.keyframe_indices.reserve(motionIn.keyframe_indices.size());
  for (int k : motionIn.keyframe_indices) out.keyframe_indices.push_back(k * ratio);

  std::vector<char> is_keyframe(static_cast<size_t>(dst_len), 0);
  for (int k : out.keyframe_indices) is_keyframe[static_cast<size_t>(k)] = 1;

  // Linear interpolation of roots, slerp of rotations.
  std::vector<Eigen::Vector3d> roots(static_cast<size_t>(dst_len));
  out.poses.resize(static_cast<size_t>(dst_len));
  for (int i = 0; i < dst_len; ++i) {
    const int lo = std::min(i / ratio, src_len - 1);
    const int hi = std::min(lo + 1, src_len - 1);
    const double t = (lo == hi) ? 0.0 : double(i - lo * ratio) / double(ratio);
    const Pose& a = motionIn.poses[static_cast<size_t>(lo)];
    const Pose& b = motionIn.poses[static_cast<size_t>(hi)];
    roots[static_cast<size_t>(i)] = (1.0 - t) * a.root_position + t * b.root_position;
    Pose& p = out.poses[static_cast<size_t>(i)];
    p.rotations.resize(joints);
    for (size_t j = 0; j < joints; ++j)
      p.rotations[j] = canonicalized(slerp(a.rotations[j], b.rotations[j], t));
  }

  // Gaussian smoothing of roots: sigma = 1 target frame, truncated at 3
  // sigma, reflection padding. Keyframe frames keep their exact values —
  // they are the only ground truth.
  constexpr int kRadius = 3;
  double weights[2 * kRadius + 1];
  double wsum = 0.0;
  for (int d = -kRadius; d <= kRadius; ++d) {
    weights[d + kRadius] = std::exp(-0.5 * double(d) * double(d));
    wsum += weights[d + kRadius];
  }
  for (double& w : weights) w /= wsum;

  for (int i = 0; i < dst_len; ++i) {
    if (is_keyframe[static_cast<size_t>(i)]) {
      out.poses[static_cast<size_t>(i)].root_position = roots[static_cast<size_t>(i)];
      continue;
    }
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    for (int d = -kRadius; d <= kRadius; ++d)
      acc += weights[d + kRadius] * roots[static_cast<size_t>(reflect_index(i + d, dst_len))];
    out.poses[static_cast<size_t>(i)].root_position = acc;
  }
  return out;
}

namespace {

const json& require_key(const json& j, const char* key, const char* where) {
  auto it = j.find(key);
  if (it == j.end())
    throw ParseError(std::string("motion file: missing \"") + key + "\" in " + where);
  return *it;
}

Eigen::Vector3d parse_vec3(const json& j, const char* where) {
  if (!j.is_array() || j.size() != 3)
    throw ParseError(std::string("motion file: ") + where + " must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

MotionSequence load_motion(const std::filesystem::path& path, LoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open motion file: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("motion file " + path.string() + ": " + e.what());
  }

  MotionSequence m;
  m.fps = require_key(j, "fps", "document").get<int>();
  for (const auto& js : require_key(j, "skeleton", "document")) {
    Joint joint;
    joint.name = require_key(js, "name", "skeleton entry").get<std::string>();
    const json& parent = require_key(js, "parent", "skeleton entry");
    joint.parent = parent.is_null() ? -1 : parent.get<int>();
    joint.offset = parse_vec3(require_key(js, "offset", "skeleton entry"), "offset");
    m.skeleton_joints.push_back(std::move(joint));
  }

  int renormalized = 0;
  for (const auto& jf : require_key(j, "frames", "document")) {
    Pose p;
    p.root_position = parse_vec3(require_key(jf, "root", "frame"), "root");
    for (const auto& jq : require_key(jf, "rotations", "frame")) {
      if (!jq.is_array() || jq.size() != 4)
        throw ParseError("motion file: rotation must be a 4-element [w,x,y,z] array");
      Eigen::Quaterniond q(jq[0].get<double>(), jq[1].get<double>(), jq[2].get<double>(),
                           jq[3].get<double>());
      const double norm = q.norm();
      if (norm <= 0.0) throw ParseError("motion file: zero-norm rotation");
      if (std::abs(norm * norm - 1.0) > 1e-4) ++renormalized;
      q.coeffs() /= norm;
      p.rotations.push_back(canonicalized(q));
    }
    m.poses.push_back(std::move(p));
  }

  if (auto it = j.find("keyframes"); it != j.end())
    m.keyframe_indices = it->get<std::vector<int>>();
  if (auto it = j.find("context_length"); it != j.end()) m.context_length = it->get<int>();

  if (renormalized > 0)
    log::warn(path.string() + ": renormalized " + std::to_string(renormalized) +
              " drifted quaternions");
  if (stats) stats->renormalized_rotations = renormalized;

  m.validate();
  return m;
}

void save_motion(const MotionSequence& motionIn, const std::filesystem::path& path) {
  motionIn.validate();
  json j;
  j["fps"] = motionIn.fps;
  j["skeleton"] = json::array();
  for (const auto& joint : motionIn.skeleton_joints) {
    json js;
    js["name"] = joint.name;
    if (joint.parent < 0)
      js["parent"] = nullptr;
    else
      js["parent"] = joint.parent;
    js["offset"] = {joint.offset.x(), joint.offset.y(), joint.offset.z()};
    j["skeleton"].push_back(std::move(js));
  }
  j["frames"] = json::array();
  for (const auto& p : motionIn.poses) {
    json jf;
    jf["root"] = {p.root_position.x(), p.root_position.y(), p.root_position.z()};
    jf["rotations"] = json::array();
    for (const auto& q : p.rotations) jf["rotations"].push_back({q.w(), q.x(), q.y(), q.z()});
    j["frames"].push_back(std::move(jf));
  }
  j["keyframes"] = motionIn.keyframe_indices;
  j["context_length"] = motionIn.context_length;

  std::ofstream out(path);
  if (!out) throw IoError("cannot write motion file: " + path.string());
  out << j.dump(1) << "\n";
  if (!out) throw IoError("failed writing motion file: " + path.string());
}

}  // namespace anymole::motion
