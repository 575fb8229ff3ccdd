#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <filesystem>
#include <string>
#include <vector>

namespace anymole::motion {

struct Joint {
  std::string name;
  int parent = -1;                      // -1 for the root
  Eigen::Vector3d offset{0.0, 0.0, 0.0};  // rest-pose offset from the parent
};

/// Joint hierarchy in topological order: the root sits at index 0 and every
/// other joint's parent index is strictly smaller than its own.
class Skeleton {
 public:
  explicit Skeleton(std::vector<Joint> joints);

  int joint_count() const { return static_cast<int>(joints_.size()); }
  const Joint& joint(int i) const { return joints_.at(static_cast<size_t>(i)); }
  const std::vector<Joint>& joints() const { return joints_; }

  /// Structural equality ignoring joint names.
  bool same_structure(const Skeleton& other, double tol = 0.0) const;

  /// Largest axis-aligned extent of the rest pose (identity rotations);
  /// used as the character height for normalized position metrics.
  double rest_height() const;

 private:
  std::vector<Joint> joints_;
};

/// Root position plus one local unit quaternion per joint, ordered as
/// Skeleton::joints(). Quaternions are canonicalized to w >= 0.
struct Pose {
  Eigen::Vector3d root_position{0.0, 0.0, 0.0};
  std::vector<Eigen::Quaterniond> rotations;
};

/// Flip sign so w >= 0; removes the double-cover ambiguity.
Eigen::Quaterniond canonicalized(const Eigen::Quaterniond& q);

/// Throws ContractViolation on joint-count mismatch or non-unit rotations
/// (tolerance 1e-6 on the norm).
void validate_pose(const Skeleton& skeleton, const Pose& pose);

struct MotionSequence {
  std::vector<Joint> skeleton_joints;  // kept flat so the type stays aggregate
  int fps = 30;
  std::vector<Pose> poses;
  std::vector<int> keyframe_indices;  // sorted, unique, in [0, poses.size())
  int context_length = 0;

  Skeleton skeleton() const { return Skeleton(skeleton_joints); }
  void validate() const;
};

/// Global joint positions for one pose: root at P, child position =
/// parent_global_rotation * offset + parent_global_position.
std::vector<Eigen::Vector3d> fk(const Skeleton& skeleton, const Pose& pose);

/// Global joint rotations, composed down the hierarchy (FK companion).
std::vector<Eigen::Quaterniond> fk_rotations(const Skeleton& skeleton, const Pose& pose);

/// Spherical linear interpolation along the shorter arc. Inputs must be
/// unit quaternions; t in [0, 1].
Eigen::Quaterniond slerp(const Eigen::Quaterniond& q0, const Eigen::Quaterniond& q1, double t);

/// Depth of every joint (root = 0, child = parent + 1).
std::vector<int> joint_hierarchy_depths(const Skeleton& skeleton);

/// Resample to an integer multiple of the source fps. Root positions are
/// linearly interpolated then Gaussian-smoothed along time (sigma = 1 frame
/// at the target rate, truncated at 3 sigma, reflection padding); rotations
/// are slerped between bracketing source frames. Frames mapped from source
/// keyframes are exempt from smoothing and therefore preserved exactly.
MotionSequence upsample_motion(const MotionSequence& motionIn, int target_fps);

struct LoadStats {
  int renormalized_rotations = 0;  // quaternions whose stored norm drifted
};

MotionSequence load_motion(const std::filesystem::path& path, LoadStats* stats = nullptr);
void save_motion(const MotionSequence& motionIn, const std::filesystem::path& path);

}  // namespace anymole::motion
