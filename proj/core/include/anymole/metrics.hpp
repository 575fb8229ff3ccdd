#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "anymole/camera.hpp"
#include "anymole/image.hpp"
#include "anymole/motion.hpp"
#include "anymole/render.hpp"

namespace anymole::metrics {

/// Joint subset selector for HL2Q: keeps joints whose hierarchy depth is
/// <= floor(threshold * max_depth). threshold = 1 selects every joint.
struct HierarchyFilter {
  double threshold = 0.5;
  std::vector<int> selected_joints(const motion::Skeleton& skeleton) const;
};

/// Mean over frames and joints of the squared L2 distance between local
/// quaternions as 4-vectors, both sides canonicalized to w >= 0.
double l2q(const motion::MotionSequence& pred, const motion::MotionSequence& gt);

double hl2q(const motion::MotionSequence& pred, const motion::MotionSequence& gt,
            const HierarchyFilter& filter);

/// Mean over frames and joints of the squared L2 distance between global
/// joint positions, normalized by the squared rest-pose character height.
double l2p(const motion::MotionSequence& pred, const motion::MotionSequence& gt);

/// Normalized power spectrum similarity over scalar channels: per channel,
/// DFT power spectra are normalized to distributions and compared by the
/// earth-mover's distance of their cumulative sums; channels are averaged
/// weighted by ground-truth total power. Channels laid out time-major:
/// series[c][t]. Zero-power channels carry zero weight.
double npss_channels(const std::vector<std::vector<double>>& pred,
                     const std::vector<std::vector<double>>& gt);

/// NPSS over flattened per-joint quaternion components (4 channels/joint).
double npss(const motion::MotionSequence& pred, const motion::MotionSequence& gt);

/// Standard SSIM, 11x11 Gaussian window (sigma 1.5), C1=(0.01 L)^2,
/// C2=(0.03 L)^2 with dynamic range L = 1. Color inputs are converted to
/// luminance first.
double ssim(const img::Image& a, const img::Image& b);

struct MetricReport {
  std::map<std::string, double> values;
  std::map<std::string, std::string> failures;  // plug-in name -> error text
  std::vector<std::string> invalid;             // metrics that produced non-finite values
  std::vector<std::string> absent;              // known plug-in names not registered
  int frame_begin = 0;
  int frame_end = 0;  // exclusive
  std::vector<int> joints_used;
};

using PerceptualMetric = std::function<double(const img::Image&, const img::Image&)>;

/// Plug-in registry for external perceptual metrics (e.g. LPIPS, CLIP
/// similarity). Names must be unique; registration is setup-time only.
class MetricRegistry {
 public:
  void register_perceptual_metric(const std::string& name, PerceptualMetric metric);
  bool has(const std::string& name) const;
  const std::map<std::string, PerceptualMetric>& entries() const { return metrics_; }

 private:
  std::map<std::string, PerceptualMetric> metrics_;
};

/// Built-in metrics (l2q, hl2q, l2p, npss, ssim) plus registered plug-ins,
/// the image metrics computed on frames rendered under `cam`. A throwing
/// plug-in is recorded as a failure; non-finite values are flagged invalid.
MetricReport evaluate_all(const motion::MotionSequence& pred, const motion::MotionSequence& gt,
                          const camera::CameraParams& cam, const render::RenderStyle& style,
                          const MetricRegistry& registry = {},
                          const HierarchyFilter& filter = {});

void write_report_json(const MetricReport& report, const std::filesystem::path& path);
void write_report_csv(const MetricReport& report, const std::string& motion_name,
                      const std::filesystem::path& path);

}  // namespace anymole::metrics
