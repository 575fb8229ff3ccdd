#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <string>
#include <vector>

namespace anymole::camera {

/// Affine (weak-perspective) camera. World points map to camera space by
/// q = rotation * p + translation, with the proper right-handed frame
/// x right, y up, z backward — so the viewing depth is -q_z. Screen map:
///   x = scale * q_x + width/2
///   y = -scale * q_y + height/2   (screen y grows downward)
///   depth = ndc * height/2, ndc linear in -q_z over [depth_near, depth_far].
struct CameraParams {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();  // world -> camera
  Eigen::Vector3d translation{0.0, 0.0, 0.0};
  int image_width = 256;
  int image_height = 256;
  double scale = 100.0;  // pixels per scene unit
  double depth_near = 0.0;
  double depth_far = 1.0;

  void validate() const;
};

struct ScreenJoint {
  double x = 0.0;
  double y = 0.0;
  double depth = 0.0;  // NDC depth denormalized by image_height / 2
};

struct ProjectionStats {
  long depth_clamped = 0;  // points whose q_z fell outside [near, far]
};

std::vector<ScreenJoint> project(const std::vector<Eigen::Vector3d>& points,
                                 const CameraParams& cam, ProjectionStats* stats = nullptr);
ScreenJoint project_point(const Eigen::Vector3d& point, const CameraParams& cam,
                          ProjectionStats* stats = nullptr);

/// Constant Jacobian of the screen map (rows: x, y, depth; columns: world
/// x, y, z) and its offset: screen = A * p + b componentwise.
Eigen::Matrix3d projection_matrix(const CameraParams& cam);
Eigen::Vector3d projection_offset(const CameraParams& cam);

/// Axis-aligned view placed `distance` away from `subject_center`, looking
/// at it. Views: front (+z), back (-z), left (-x), right (+x). The NDC
/// depth range defaults to distance +- depth_radius (depth_radius <= 0
/// selects distance/2).
CameraParams named_view(const std::string& name, const Eigen::Vector3d& subject_center,
                        double distance, int image_width, int image_height, double scale,
                        double depth_radius = -1.0);

const std::vector<std::string>& view_names();  // front, left, right, back

}  // namespace anymole::camera
