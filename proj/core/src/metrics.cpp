#include "anymole/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>

#include "anymole/errors.hpp"

namespace anymole::metrics {

namespace {

void check_comparable(const motion::MotionSequence& pred, const motion::MotionSequence& gt) {
  if (!pred.skeleton().same_structure(gt.skeleton(), 1e-12))
    throw ContractViolation("metric inputs use different skeletons");
  if (pred.poses.size() != gt.poses.size())
    throw ContractViolation("metric inputs have different frame counts");
}

double quat_sq_dist(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  const Eigen::Quaterniond ca = motion::canonicalized(a);
  const Eigen::Quaterniond cb = motion::canonicalized(b);
  return (ca.coeffs() - cb.coeffs()).squaredNorm();
}

}  // namespace

std::vector<int> HierarchyFilter::selected_joints(const motion::Skeleton& skeleton) const {
  if (threshold <= 0.0 || threshold > 1.0)
    throw ContractViolation("hierarchy filter threshold must lie in (0, 1]");
  const auto depths = motion::joint_hierarchy_depths(skeleton);
  const int max_depth = *std::max_element(depths.begin(), depths.end());
  const int cutoff = static_cast<int>(std::floor(threshold * max_depth));
  std::vector<int> joints;
  for (int j = 0; j < skeleton.joint_count(); ++j)
    if (depths[static_cast<size_t>(j)] <= cutoff) joints.push_back(j);
  return joints;
}

namespace {

double l2q_subset(const motion::MotionSequence& pred, const motion::MotionSequence& gt,
                  const std::vector<int>& joints) {
  check_comparable(pred, gt);
  if (pred.poses.empty() || joints.empty()) return 0.0;
  double acc = 0.0;
  for (size_t f = 0; f < pred.poses.size(); ++f)
    for (int j : joints)
      acc += quat_sq_dist(pred.poses[f].rotations[static_cast<size_t>(j)],
                          gt.poses[f].rotations[static_cast<size_t>(j)]);
  return acc / (static_cast<double>(pred.poses.size()) * static_cast<double>(joints.size()));
}

}  // namespace

double l2q(const motion::MotionSequence& pred, const motion::MotionSequence& gt) {
  std::vector<int> all(static_cast<size_t>(pred.skeleton_joints.size()));
  for (size_t j = 0; j < all.size(); ++j) all[j] = static_cast<int>(j);
  return l2q_subset(pred, gt, all);
}

double hl2q(const motion::MotionSequence& pred, const motion::MotionSequence& gt,
            const HierarchyFilter& filter) {
  return l2q_subset(pred, gt, filter.selected_joints(pred.skeleton()));
}

double l2p(const motion::MotionSequence& pred, const motion::MotionSequence& gt) {
  check_comparable(pred, gt);
  if (pred.poses.empty()) return 0.0;
  const motion::Skeleton skeleton = pred.skeleton();
  const double height = skeleton.rest_height();
  if (height <= 0.0) throw ContractViolation("degenerate skeleton: zero rest height");
  const double inv_h2 = 1.0 / (height * height);
  double acc = 0.0;
  for (size_t f = 0; f < pred.poses.size(); ++f) {
    const auto pp = motion::fk(skeleton, pred.poses[f]);
    const auto pg = motion::fk(skeleton, gt.poses[f]);
    for (size_t j = 0; j < pp.size(); ++j) acc += (pp[j] - pg[j]).squaredNorm() * inv_h2;
  }
  return acc /
         (static_cast<double>(pred.poses.size()) * static_cast<double>(skeleton.joint_count()));
}

namespace {

// Dense DFT power spectrum, |X_k|^2 for k = 0..n-1. Sequences here are a
// few hundred samples, so O(n^2) is fine.
std::vector<double> power_spectrum(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<double> power(n, 0.0);
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (size_t t = 0; t < n; ++t) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) *
                           static_cast<double>(t) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    power[k] = std::norm(acc);
  }
  return power;
}

}  // namespace

double npss_channels(const std::vector<std::vector<double>>& pred,
                     const std::vector<std::vector<double>>& gt) {
  if (pred.size() != gt.size()) throw ContractViolation("npss: channel count mismatch");
  if (pred.empty()) return 0.0;

  double weighted_emd = 0.0;
  double total_weight = 0.0;
  for (size_t c = 0; c < pred.size(); ++c) {
    if (pred[c].size() != gt[c].size() || pred[c].size() < 2)
      throw ContractViolation("npss: channels need equal length >= 2");
    const auto p_pow = power_spectrum(pred[c]);
    const auto g_pow = power_spectrum(gt[c]);
    const double p_total = std::accumulate(p_pow.begin(), p_pow.end(), 0.0);
    const double g_total = std::accumulate(g_pow.begin(), g_pow.end(), 0.0);
    if (g_total <= 0.0 || p_total <= 0.0) continue;  // zero-power convention: weight 0
    double emd = 0.0, p_cdf = 0.0, g_cdf = 0.0;
    for (size_t k = 0; k < p_pow.size(); ++k) {
      p_cdf += p_pow[k] / p_total;
      g_cdf += g_pow[k] / g_total;
      emd += std::abs(p_cdf - g_cdf);
    }
    weighted_emd += emd * g_total;
    total_weight += g_total;
  }
  return total_weight > 0.0 ? weighted_emd / total_weight : 0.0;
}

double npss(const motion::MotionSequence& pred, const motion::MotionSequence& gt) {
  check_comparable(pred, gt);
  if (pred.poses.size() < 2) throw ContractViolation("npss needs at least two frames");
  const size_t joints = pred.skeleton_joints.size();
  const size_t frames = pred.poses.size();
  std::vector<std::vector<double>> pc(joints * 4, std::vector<double>(frames));
  std::vector<std::vector<double>> gc(joints * 4, std::vector<double>(frames));
  for (size_t f = 0; f < frames; ++f)
    for (size_t j = 0; j < joints; ++j) {
      const auto qp = motion::canonicalized(pred.poses[f].rotations[j]);
      const auto qg = motion::canonicalized(gt.poses[f].rotations[j]);
      const double vp[4] = {qp.w(), qp.x(), qp.y(), qp.z()};
      const double vg[4] = {qg.w(), qg.x(), qg.y(), qg.z()};
      for (size_t k = 0; k < 4; ++k) {
        pc[j * 4 + k][f] = vp[k];
        gc[j * 4 + k][f] = vg[k];
      }
    }
  return npss_channels(pc, gc);
}

double ssim(const img::Image& a_in, const img::Image& b_in) {
  if (a_in.width != b_in.width || a_in.height != b_in.height)
    throw ContractViolation("ssim: image dimension mismatch");
  const img::Image a = a_in.to_luminance();
  const img::Image b = b_in.to_luminance();

  constexpr int kHalf = 5;  // 11x11 window
  constexpr double kSigma = 1.5;
  double w[11][11];
  double wsum = 0.0;
  for (int dy = -kHalf; dy <= kHalf; ++dy)
    for (int dx = -kHalf; dx <= kHalf; ++dx) {
      w[dy + kHalf][dx + kHalf] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
      wsum += w[dy + kHalf][dx + kHalf];
    }
  for (auto& row : w)
    for (double& v : row) v /= wsum;

  constexpr double kL = 1.0;
  constexpr double kC1 = (0.01 * kL) * (0.01 * kL);
  constexpr double kC2 = (0.03 * kL) * (0.03 * kL);

  // Windows are evaluated where the full 11x11 support fits; tiny images
  // fall back to a single global window.
  const int w_lo_x = std::min(kHalf, std::max(0, a.width - kHalf - 1));
  const int w_lo_y = std::min(kHalf, std::max(0, a.height - kHalf - 1));
  double acc = 0.0;
  long count = 0;
  for (int cy = w_lo_y; cy < std::max(a.height - kHalf, w_lo_y + 1); ++cy)
    for (int cx = w_lo_x; cx < std::max(a.width - kHalf, w_lo_x + 1); ++cx) {
      double mu_a = 0.0, mu_b = 0.0;
      for (int dy = -kHalf; dy <= kHalf; ++dy)
        for (int dx = -kHalf; dx <= kHalf; ++dx) {
          const int y = std::clamp(cy + dy, 0, a.height - 1);
          const int x = std::clamp(cx + dx, 0, a.width - 1);
          mu_a += w[dy + kHalf][dx + kHalf] * a.at(0, y, x);
          mu_b += w[dy + kHalf][dx + kHalf] * b.at(0, y, x);
        }
      double var_a = 0.0, var_b = 0.0, cov = 0.0;
      for (int dy = -kHalf; dy <= kHalf; ++dy)
        for (int dx = -kHalf; dx <= kHalf; ++dx) {
          const int y = std::clamp(cy + dy, 0, a.height - 1);
          const int x = std::clamp(cx + dx, 0, a.width - 1);
          const double da = a.at(0, y, x) - mu_a;
          const double db = b.at(0, y, x) - mu_b;
          var_a += w[dy + kHalf][dx + kHalf] * da * da;
          var_b += w[dy + kHalf][dx + kHalf] * db * db;
          cov += w[dy + kHalf][dx + kHalf] * da * db;
        }
      acc += ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
             ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
      ++count;
    }
  return acc / static_cast<double>(count);
}

void MetricRegistry::register_perceptual_metric(const std::string& name,
                                                PerceptualMetric metric) {
  static const std::vector<std::string> reserved = {"l2q", "hl2q", "l2p", "npss", "ssim"};
  if (std::find(reserved.begin(), reserved.end(), name) != reserved.end())
    throw ConfigError("metric name \"" + name + "\" is reserved for a built-in");
  if (metrics_.count(name)) throw ConfigError("duplicate metric registration: \"" + name + "\"");
  if (!metric) throw ConfigError("metric \"" + name + "\" has no callable");
  metrics_[name] = std::move(metric);
}

bool MetricRegistry::has(const std::string& name) const { return metrics_.count(name) > 0; }

MetricReport evaluate_all(const motion::MotionSequence& pred, const motion::MotionSequence& gt,
                          const camera::CameraParams& cam, const render::RenderStyle& style,
                          const MetricRegistry& registry, const HierarchyFilter& filter) {
  check_comparable(pred, gt);
  MetricReport report;
  report.frame_begin = 0;
  report.frame_end = static_cast<int>(pred.poses.size());
  report.joints_used = filter.selected_joints(pred.skeleton());

  report.values["l2q"] = l2q(pred, gt);
  report.values["hl2q"] = hl2q(pred, gt, filter);
  report.values["l2p"] = l2p(pred, gt);
  report.values["npss"] = npss(pred, gt);

  const auto pred_frames = render::render_frames(pred, cam, style);
  const auto gt_frames = render::render_frames(gt, cam, style);
  double ssim_acc = 0.0;
  for (size_t f = 0; f < pred_frames.size(); ++f) ssim_acc += ssim(pred_frames[f], gt_frames[f]);
  report.values["ssim"] = pred_frames.empty() ? 1.0 : ssim_acc / double(pred_frames.size());

  for (const auto& [name, fn] : registry.entries()) {
    try {
      double acc = 0.0;
      for (size_t f = 0; f < pred_frames.size(); ++f) acc += fn(pred_frames[f], gt_frames[f]);
      report.values[name] = pred_frames.empty() ? 0.0 : acc / double(pred_frames.size());
    } catch (const std::exception& e) {
      report.failures[name] = e.what();
    }
  }
  for (auto& [name, value] : report.values)
    if (!std::isfinite(value)) report.invalid.push_back(name);

  // Known perceptual plug-ins that are interface-only here: reported as
  // absent rather than defaulting to a numeric value.
  for (const char* name : {"clip", "lpips"})
    if (!registry.has(name)) report.absent.push_back(name);
  return report;
}

void write_report_json(const MetricReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["metrics"] = report.values;
  j["failures"] = report.failures;
  j["invalid"] = report.invalid;
  j["absent"] = report.absent;
  j["frames"] = {report.frame_begin, report.frame_end};
  j["joints_used"] = report.joints_used;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metric report: " + path.string());
  out << j.dump(1) << "\n";
}

void write_report_csv(const MetricReport& report, const std::string& motion_name,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metric CSV: " + path.string());
  out << "motion,metric,value\n";
  for (const auto& [name, value] : report.values)
    out << motion_name << "," << name << "," << std::setprecision(17) << value << "\n";
}

}  // namespace anymole::metrics
