#include "anymole/camera.hpp"

#include <algorithm>
#include <cmath>

#include "anymole/errors.hpp"

namespace anymole::camera {

void CameraParams::validate() const {
  if (image_width <= 0 || image_height <= 0)
    throw ContractViolation("camera image dimensions must be positive");
  if (scale <= 0.0) throw ContractViolation("camera scale must be positive");
  if (!(depth_far > depth_near)) throw ContractViolation("camera depth range must be non-empty");
  if (std::abs(rotation.norm() - 1.0) > 1e-6)
    throw ContractViolation("camera rotation must be a unit quaternion");
}

ScreenJoint project_point(const Eigen::Vector3d& point, const CameraParams& cam,
                          ProjectionStats* stats) {
  cam.validate();
  const Eigen::Vector3d q = cam.rotation * point + cam.translation;
  ScreenJoint s;
  s.x = cam.scale * q.x() + 0.5 * cam.image_width;
  s.y = -cam.scale * q.y() + 0.5 * cam.image_height;
  const double viewing_depth = -q.z();  // camera z points backward
  double ndc =
      2.0 * (viewing_depth - cam.depth_near) / (cam.depth_far - cam.depth_near) - 1.0;
  if (ndc < -1.0 || ndc > 1.0) {
    ndc = std::clamp(ndc, -1.0, 1.0);
    if (stats) ++stats->depth_clamped;  // the caller-visible warning counter
  }
  s.depth = ndc * 0.5 * cam.image_height;  // denormalize by half the height
  return s;
}

std::vector<ScreenJoint> project(const std::vector<Eigen::Vector3d>& points,
                                 const CameraParams& cam, ProjectionStats* stats) {
  cam.validate();
  std::vector<ScreenJoint> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(project_point(p, cam, stats));
  return out;
}

Eigen::Matrix3d projection_matrix(const CameraParams& cam) {
  cam.validate();
  const Eigen::Matrix3d r = cam.rotation.toRotationMatrix();
  Eigen::Matrix3d a;
  a.row(0) = cam.scale * r.row(0);
  a.row(1) = -cam.scale * r.row(1);
  a.row(2) = -(cam.image_height / (cam.depth_far - cam.depth_near)) * r.row(2);
  return a;
}

Eigen::Vector3d projection_offset(const CameraParams& cam) {
  cam.validate();
  Eigen::Vector3d b;
  b.x() = cam.scale * cam.translation.x() + 0.5 * cam.image_width;
  b.y() = -cam.scale * cam.translation.y() + 0.5 * cam.image_height;
  b.z() = (cam.image_height / (cam.depth_far - cam.depth_near)) *
              (-cam.translation.z() - cam.depth_near) -
          0.5 * cam.image_height;
  return b;
}

const std::vector<std::string>& view_names() {
  static const std::vector<std::string> names = {"front", "left", "right", "back"};
  return names;
}

CameraParams named_view(const std::string& name, const Eigen::Vector3d& subject_center,
                        double distance, int image_width, int image_height, double scale,
                        double depth_radius) {
  Eigen::Vector3d eye;
  if (name == "front")
    eye = subject_center + Eigen::Vector3d(0.0, 0.0, distance);
  else if (name == "back")
    eye = subject_center + Eigen::Vector3d(0.0, 0.0, -distance);
  else if (name == "left")
    eye = subject_center + Eigen::Vector3d(-distance, 0.0, 0.0);
  else if (name == "right")
    eye = subject_center + Eigen::Vector3d(distance, 0.0, 0.0);
  else
    throw ConfigError("unknown view name: \"" + name + "\"");

  const Eigen::Vector3d forward = (subject_center - eye).normalized();
  const Eigen::Vector3d world_up(0.0, 1.0, 0.0);
  const Eigen::Vector3d right = forward.cross(world_up).normalized();
  const Eigen::Vector3d up = right.cross(forward);

  Eigen::Matrix3d r;  // rows: right, up, backward — a proper rotation
  r.row(0) = right;
  r.row(1) = up;
  r.row(2) = -forward;

  CameraParams cam;
  cam.rotation = Eigen::Quaterniond(r).normalized();
  cam.translation = -(cam.rotation * eye);
  cam.image_width = image_width;
  cam.image_height = image_height;
  cam.scale = scale;
  const double radius = depth_radius > 0.0 ? depth_radius : 0.5 * distance;
  cam.depth_near = distance - radius;
  cam.depth_far = distance + radius;
  cam.validate();
  return cam;
}

}  // namespace anymole::camera
