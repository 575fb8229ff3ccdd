#include "anymole/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "anymole/errors.hpp"

namespace anymole::render {

void RenderStyle::validate() const {
  if (softness <= 0.0) throw ContractViolation("render softness must be positive");
  if (joint_radius <= 0.0 || bone_thickness <= 0.0)
    throw ContractViolation("render primitive sizes must be positive");
  if (background < 0.0 || background > 1.0)
    throw ContractViolation("render background must lie in [0, 1]");
}

std::vector<std::array<double, 3>> default_palette(int joint_count) {
  // Golden-ratio hue walk, full saturation, keeps neighbors distinct.
  std::vector<std::array<double, 3>> palette;
  palette.reserve(static_cast<size_t>(joint_count));
  for (int i = 0; i < joint_count; ++i) {
    const double hue = std::fmod(0.11 + i * 0.61803398875, 1.0) * 6.0;
    const int sector = static_cast<int>(hue);
    const double f = hue - sector;
    const double v = 1.0, p = 0.15, q = v - (v - p) * f, t = p + (v - p) * f;
    switch (sector % 6) {
      case 0: palette.push_back({v, t, p}); break;
      case 1: palette.push_back({q, v, p}); break;
      case 2: palette.push_back({p, v, t}); break;
      case 3: palette.push_back({p, q, v}); break;
      case 4: palette.push_back({t, p, v}); break;
      default: palette.push_back({v, p, q}); break;
    }
  }
  return palette;
}

namespace {

struct Primitive {
  bool is_bone = false;
  int a = 0;  // joint index (blob center, or capsule start)
  int b = 0;  // capsule end joint for bones
  double sigma = 1.0;
  std::array<double, 3> color{1.0, 1.0, 1.0};
};

std::vector<Primitive> build_primitives(const motion::Skeleton& skeleton,
                                        const RenderStyle& style) {
  style.validate();
  const int joints = skeleton.joint_count();
  auto colors = style.colors.empty() ? default_palette(joints) : style.colors;
  if (static_cast<int>(colors.size()) != joints)
    throw ContractViolation("render style must carry one color per joint");

  std::vector<Primitive> prims;
  prims.reserve(static_cast<size_t>(2 * joints));
  for (int j = 0; j < joints; ++j)
    prims.push_back({false, j, j, style.joint_radius * style.softness, colors[static_cast<size_t>(j)]});
  for (int j = 1; j < joints; ++j) {
    const int parent = skeleton.joint(j).parent;
    std::array<double, 3> c;
    for (int k = 0; k < 3; ++k)
      c[static_cast<size_t>(k)] = 0.5 * (colors[static_cast<size_t>(parent)][static_cast<size_t>(k)] +
                                         colors[static_cast<size_t>(j)][static_cast<size_t>(k)]);
    prims.push_back({true, parent, j, style.bone_thickness * style.softness, c});
  }
  return prims;
}

// Squared distance from pixel p to the primitive, plus the capsule
// parameter t (0 for blobs). Gradients use the envelope form, so t can be
// treated as constant.
double primitive_dist2(const Primitive& prim, const std::vector<Eigen::Vector2d>& xy,
                       const Eigen::Vector2d& p, double& t_out) {
  const Eigen::Vector2d& a = xy[static_cast<size_t>(prim.a)];
  if (!prim.is_bone) {
    t_out = 0.0;
    return (p - a).squaredNorm();
  }
  const Eigen::Vector2d& b = xy[static_cast<size_t>(prim.b)];
  const Eigen::Vector2d u = b - a;
  const double len2 = u.squaredNorm();
  double t = len2 > 1e-16 ? (p - a).dot(u) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  t_out = t;
  return (p - (a + t * u)).squaredNorm();
}

struct Rect {
  int x0, y0, x1, y1;  // half-open
  bool empty() const { return x0 >= x1 || y0 >= y1; }
};

Rect primitive_bounds(const Primitive& prim, const std::vector<Eigen::Vector2d>& xy,
                      int width, int height) {
  const Eigen::Vector2d& a = xy[static_cast<size_t>(prim.a)];
  Eigen::Vector2d lo = a, hi = a;
  if (prim.is_bone) {
    const Eigen::Vector2d& b = xy[static_cast<size_t>(prim.b)];
    lo = lo.cwiseMin(b);
    hi = hi.cwiseMax(b);
  }
  const double reach = 5.0 * prim.sigma;  // exp(-12.5) ~ 4e-6, below 8-bit noise
  Rect r;
  r.x0 = std::max(0, static_cast<int>(std::floor(lo.x() - reach)));
  r.y0 = std::max(0, static_cast<int>(std::floor(lo.y() - reach)));
  r.x1 = std::min(width, static_cast<int>(std::ceil(hi.x() + reach)) + 1);
  r.y1 = std::min(height, static_cast<int>(std::ceil(hi.y() + reach)) + 1);
  return r;
}

}  // namespace

ScreenRender render_screen(const std::vector<Eigen::Vector2d>& joint_xy,
                           const motion::Skeleton& skeleton, const RenderStyle& style,
                           int width, int height, bool record_winners) {
  if (static_cast<int>(joint_xy.size()) != skeleton.joint_count())
    throw ContractViolation("render_screen: one screen position per joint required");
  const auto prims = build_primitives(skeleton, style);

  ScreenRender out;
  out.image = img::Image::zeros(width, height, 3);
  std::fill(out.image.data.begin(), out.image.data.end(), style.background);
  if (record_winners) out.winners.assign(static_cast<size_t>(3) * width * height, -1);

  for (size_t k = 0; k < prims.size(); ++k) {
    const Primitive& prim = prims[k];
    const Rect r = primitive_bounds(prim, joint_xy, width, height);
    if (r.empty()) continue;
    const double inv2s2 = 1.0 / (2.0 * prim.sigma * prim.sigma);
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) {
        double t;
        const double d2 = primitive_dist2(prim, joint_xy, Eigen::Vector2d(x, y), t);
        const double g = std::exp(-d2 * inv2s2);
        for (int c = 0; c < 3; ++c) {
          const double v = prim.color[static_cast<size_t>(c)] * g;
          double& dst = out.image.at(c, y, x);
          if (v > dst) {
            dst = v;
            if (record_winners)
              out.winners[static_cast<size_t>((c * height + y) * width + x)] =
                  static_cast<int>(k);
          }
        }
      }
  }
  return out;
}

void render_screen_backward(const std::vector<Eigen::Vector2d>& joint_xy,
                            const motion::Skeleton& skeleton, const RenderStyle& style,
                            const ScreenRender& rendered, const std::vector<double>& grad_rgb,
                            std::vector<Eigen::Vector2d>& grad_xy) {
  const auto prims = build_primitives(skeleton, style);
  const int width = rendered.image.width;
  const int height = rendered.image.height;
  if (grad_rgb.size() != rendered.image.data.size() ||
      rendered.winners.size() != rendered.image.data.size())
    throw ContractViolation("render_screen_backward: gradient/winner size mismatch");
  grad_xy.assign(joint_xy.size(), Eigen::Vector2d::Zero());

  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const size_t idx = static_cast<size_t>((c * height + y) * width + x);
        const int k = rendered.winners[idx];
        const double g_out = grad_rgb[idx];
        if (k < 0 || g_out == 0.0) continue;
        const Primitive& prim = prims[static_cast<size_t>(k)];
        const Eigen::Vector2d p(x, y);
        double t;
        primitive_dist2(prim, joint_xy, p, t);
        const double value = rendered.image.data[idx];
        const double inv_s2 = 1.0 / (prim.sigma * prim.sigma);
        const Eigen::Vector2d a = joint_xy[static_cast<size_t>(prim.a)];
        if (!prim.is_bone) {
          grad_xy[static_cast<size_t>(prim.a)] += g_out * value * inv_s2 * (p - a);
        } else {
          const Eigen::Vector2d b = joint_xy[static_cast<size_t>(prim.b)];
          const Eigen::Vector2d m = a + t * (b - a);
          const Eigen::Vector2d pm = p - m;
          grad_xy[static_cast<size_t>(prim.a)] += g_out * value * inv_s2 * (1.0 - t) * pm;
          grad_xy[static_cast<size_t>(prim.b)] += g_out * value * inv_s2 * t * pm;
        }
      }
}

img::Image render(const motion::Skeleton& skeleton, const motion::Pose& pose,
                  const camera::CameraParams& cam, const RenderStyle& style) {
  const auto positions = motion::fk(skeleton, pose);
  const auto screen = camera::project(positions, cam);
  std::vector<Eigen::Vector2d> xy;
  xy.reserve(screen.size());
  for (const auto& s : screen) xy.emplace_back(s.x, s.y);
  return render_screen(xy, skeleton, style, cam.image_width, cam.image_height).image;
}

std::vector<img::Image> render_frames(const motion::MotionSequence& motionIn,
                                      const camera::CameraParams& cam,
                                      const RenderStyle& style) {
  const motion::Skeleton skeleton = motionIn.skeleton();
  std::vector<img::Image> frames;
  frames.reserve(motionIn.poses.size());
  for (const auto& pose : motionIn.poses) frames.push_back(render(skeleton, pose, cam, style));
  return frames;
}

std::string frame_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05d.png", index);
  return buf;
}

std::vector<std::filesystem::path> render_views(const motion::MotionSequence& motionIn,
                                                const std::vector<ViewSetup>& views,
                                                const RenderStyle& style,
                                                const std::filesystem::path& out_dir) {
  const motion::Skeleton skeleton = motionIn.skeleton();
  std::vector<std::filesystem::path> written;
  for (const auto& view : views) {
    const auto dir = out_dir / view.name;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create view directory: " + dir.string());
    for (size_t i = 0; i < motionIn.poses.size(); ++i) {
      const auto path = dir / frame_filename(static_cast<int>(i));
      img::write_png(render(skeleton, motionIn.poses[i], view.cam, style), path);
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace anymole::render
