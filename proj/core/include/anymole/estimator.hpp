#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "anymole/autodiff.hpp"
#include "anymole/camera.hpp"
#include "anymole/clip_sampler.hpp"
#include "anymole/image.hpp"
#include "anymole/nn.hpp"
#include "anymole/tensor.hpp"

namespace anymole::estimator {

enum class FeatureSource { k2D, k3DAware, kMerged };

struct FeatureMap {
  ad::Tensor values;  // (C, h, w)
  FeatureSource source = FeatureSource::k2D;
};

/// Aligned 2-D / 3-D-aware feature pair for one image. Providers must be
/// deterministic and stateless per call.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual std::pair<FeatureMap, FeatureMap> provide(const img::Image& image) const = 0;
  virtual std::string id() const = 0;
  virtual int channels() const = 0;
  virtual int patch() const = 0;
};

/// Default synthetic provider: seeded orthonormal projections of 4x4 image
/// patches. Stands in for pretrained 2-D / 3-D-aware backbones so the
/// estimator trains without any external weights; a real extractor can be
/// wrapped behind the same interface.
class SyntheticPatchProvider : public FeatureProvider {
 public:
  SyntheticPatchProvider(int patch, int channels, std::uint64_t seed);
  std::pair<FeatureMap, FeatureMap> provide(const img::Image& image) const override;
  std::string id() const override;
  int channels() const override { return channels_; }
  int patch() const override { return patch_; }

 private:
  int patch_, channels_;
  std::uint64_t seed_;
  ad::Tensor proj2d_, proj3d_;  // (channels, patch*patch*3), orthonormal rows
};

struct EstimatorConfig {
  int image_width = 64;
  int image_height = 64;
  int joints = 5;
  int provider_patch = 4;
  int provider_channels = 8;
  int merged_channels = 8;   // C of the fused feature F
  int depth_hidden = 32;
  std::uint64_t init_seed = 77;
  // Heatmap grid = feature grid upsampled once (2x).
  int feature_width() const { return image_width / provider_patch; }
  int feature_height() const { return image_height / provider_patch; }
  int heatmap_width() const { return 2 * feature_width(); }
  int heatmap_height() const { return 2 * feature_height(); }
};

struct JointEstimate {
  std::vector<camera::ScreenJoint> joints;  // x, y in pixels; depth denormalized
};

/// Scene-specific joint estimator: feature merger -> heatmap decoder (with
/// a zero-initialized residual block) -> spatial soft-argmax -> per-joint
/// feature sampling -> depth MLP. Depth leaves the MLP in NDC and is
/// denormalized by image_height / 2.
class EstimatorModel {
 public:
  explicit EstimatorModel(const EstimatorConfig& cfg);

  const EstimatorConfig& config() const { return cfg_; }
  std::vector<nn::NamedTensor>& params() { return params_; }
  const std::vector<nn::NamedTensor>& params() const { return params_; }
  ad::Tensor& tensor(const std::string& name);

  struct Bindings {
    std::vector<ad::Graph::Id> ids;  // aligned with params()
    std::vector<std::pair<ad::Tensor*, ad::Graph::Id>> trainable;
    ad::Graph::Id id(const EstimatorModel& m, const std::string& name) const;
  };
  Bindings bind(ad::Graph& g, bool train);

  struct Forward {
    ad::Graph::Id merged;     // (C, h_f, w_f)
    ad::Graph::Id heatmaps;   // (1, N_j, h_h, w_h)
    ad::Graph::Id joints_2d;  // (N_j, 2) pixels
    ad::Graph::Id depth_px;   // (N_j, 1)
    ad::Graph::Id screen;     // (N_j, 3) = (x, y, depth_px)
  };
  Forward forward(ad::Graph& g, const Bindings& binds, ad::Graph::Id f2d, ad::Graph::Id f3d);

  // --- spec-level operations on plain tensors (convenience wrappers) ---
  FeatureMap merge_features(const FeatureMap& f2d, const FeatureMap& f3d);
  ad::Tensor decode_heatmaps(const FeatureMap& merged);              // (1, N_j, h_h, w_h)
  ad::Tensor heatmaps_to_joints(const ad::Tensor& heatmaps) const;   // (B*N_j, 2) pixels
  ad::Tensor sample_feature(const FeatureMap& f, const ad::Tensor& xy_px,
                            long* clamped = nullptr) const;          // (J, C)
  ad::Tensor estimate_depth(const ad::Tensor& f_processed,
                            const ad::Tensor& j_processed2d);        // (rows,) NDC

  JointEstimate estimate(const img::Image& image, const FeatureProvider& provider);

 private:
  EstimatorConfig cfg_;
  std::vector<nn::NamedTensor> params_;
};

/// Spatial soft-argmax of a one-hot-or-soft heatmap stack (B, N_j, h, w):
/// softmax over each channel's pixels, then the expectation of pixel
/// coordinates, scaled from the heatmap grid to image pixels.
ad::Tensor soft_argmax(const ad::Tensor& heatmaps, int image_width, int image_height);

struct TrainConfig {
  int steps = 3500;
  int batch_size = 32;
  double learning_rate = 2e-3;
  int views = 3;          // echoed in the manifest
  int keyframe_weight = 3;
  std::uint64_t seed = 99;
};

struct TrainTrace {
  std::vector<double> losses;
  long excluded_samples = 0;  // projected joints outside the image
  long steps_run = 0;
};

using ImageLookup = std::function<const img::Image&(const clips::EstimatorSample&)>;

/// Minimize the screen-space MSE (x, y and denormalized depth jointly)
/// between estimates and projected ground truth over the weighted dataset.
TrainTrace train_estimator(EstimatorModel& model, const FeatureProvider& provider,
                           const std::vector<clips::EstimatorSample>& dataset,
                           const ImageLookup& image_lookup, const TrainConfig& cfg);

void save_estimator(const EstimatorModel& model, const std::string& provider_id,
                    const TrainConfig& cfg, const std::filesystem::path& binary_path,
                    const std::filesystem::path& sidecar_path);
EstimatorModel load_estimator(const std::filesystem::path& binary_path,
                              const std::filesystem::path& sidecar_path);

}  // namespace anymole::estimator
