#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "anymole/autodiff.hpp"
#include "anymole/clip_sampler.hpp"
#include "anymole/image.hpp"
#include "anymole/nn.hpp"
#include "anymole/rng.hpp"
#include "anymole/tensor.hpp"

namespace anymole::diffusion {

/// Conditioning bundle for one 16-frame segment: endpoint images, the fixed
/// scene text, the segment frame rate and the current denoising timestep.
struct Conditioning {
  img::Image first_frame;
  img::Image last_frame;
  std::string text;
  int fps = 15;
  int timestep = 0;
};

struct VideoClip {
  std::vector<img::Image> frames;
  int fps = 30;
};

/// Latent representation of a 16-frame segment, shape (16, C, h, w).
struct LatentVideo {
  ad::Tensor values;
  int noise_level = 0;

  int frames() const { return values.ndim() == 4 ? values.dim(0) : 0; }
  void validate() const;
};

struct AdaptConfig {
  int steps = 500;
  double learning_rate = 1e-5;
  int batch_size = 16;
  int views = 4;
  std::vector<int> intervals = {1, 2, 3};
  std::string text = "a rigged character animating in a fixed scene";
  std::uint64_t seed = 2024;
};

/// Linear alpha-bar schedule: alpha_bar(0) = 1 exactly, strictly decreasing,
/// and still positive at t_max so the clean-latent/noise conversion stays
/// finite everywhere.
struct NoiseSchedule {
  int t_max = 50;
  double alpha_bar(int t) const;
};

/// Exact, zero-bias latent codec: each 4x4 pixel block of each color
/// channel maps through an orthonormal 2-D Haar transform into 16 of the
/// 48 latent channels. decode(encode(x)) == x up to roundoff for any RGB
/// frame whose sides are multiples of 4.
class LatentCodec {
 public:
  LatentCodec(int width, int height);

  int latent_channels() const { return 48; }
  int latent_width() const { return width_ / 4; }
  int latent_height() const { return height_ / 4; }

  ad::Tensor encode(const img::Image& frame) const;   // (48, h/4, w/4)
  img::Image decode(const ad::Tensor& latent) const;  // RGB (w, h)

 private:
  int width_, height_;
  double basis_[16][16];  // orthonormal rows
};

/// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps, eps ~ N(0, I).
/// Returns (z_t, eps); t = 0 returns z0 exactly with eps all zero.
std::pair<ad::Tensor, ad::Tensor> forward_noise(const ad::Tensor& z0, int t,
                                                const NoiseSchedule& schedule, Rng& rng);

struct ToyModelConfig {
  int width = 64;
  int height = 64;
  int frames = 16;
  int t_max = 50;
  std::vector<int> fps_table = {5, 10, 15, 30};
  std::uint64_t init_seed = 1234;
};

/// Generative video-model surface the two-stage scheduler drives. A real
/// latent-diffusion interpolation model wraps behind this out-of-tree:
/// expose its VAE through encode/decode, its reverse process through
/// denoise_step (t = cond.timestep, returning the t-1 latents), and its
/// supported fps conditioning set. Latents are (frames_per_segment, C, h, w).
class VideoBackend {
 public:
  virtual ~VideoBackend() = default;
  virtual int frames_per_segment() const = 0;
  virtual const NoiseSchedule& schedule() const = 0;
  virtual bool supports_fps(int fps) const = 0;
  virtual int latent_channels() const = 0;
  virtual int latent_height() const = 0;
  virtual int latent_width() const = 0;
  virtual ad::Tensor encode(const img::Image& frame) const = 0;
  virtual img::Image decode(const ad::Tensor& latent) const = 0;
  virtual LatentVideo denoise_step(const LatentVideo& z_t, const Conditioning& cond) = 0;
};

/// Parameter partition named by the fine-tuning contract: only `spatial`
/// and `image_projector` train during adaptation; `temporal` and
/// `fps_embedding` stay frozen.
enum class ParamGroup { kSpatial, kTemporal, kImageProjector, kFpsEmbedding };
const char* param_group_name(ParamGroup g);

/// Deterministic toy backend. The trunk predicts clean latents from
/// (z_t, t, text, fps, endpoint images); the reverse step converts the
/// prediction to predicted noise through the schedule. Per-frame mixing
/// layers form the spatial group, the cross-frame mixing matrix the
/// temporal group.
class ToyVideoModel : public VideoBackend {
 public:
  explicit ToyVideoModel(const ToyModelConfig& cfg);

  const ToyModelConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const override { return schedule_; }
  const LatentCodec& codec() const { return codec_; }
  int frames_per_segment() const override { return cfg_.frames; }
  int latent_channels() const override { return codec_.latent_channels(); }
  int latent_height() const override { return codec_.latent_height(); }
  int latent_width() const override { return codec_.latent_width(); }

  std::vector<nn::NamedTensor>& group(ParamGroup g);
  const std::vector<nn::NamedTensor>& group(ParamGroup g) const;
  std::vector<std::string> all_parameter_names() const;

  bool supports_fps(int fps) const override;

  /// Graph leaves for one evaluation. With `train` set, the spatial and
  /// image-projector tensors bind as trainable leaves (listed in
  /// `trainable`); frozen groups always enter as constants, so no gradient
  /// state ever exists for them.
  struct Bindings {
    ad::Graph::Id w1, b1, w2, b2, frame_bias, frame_mix, proj_w, proj_b;
    std::vector<std::pair<ad::Tensor*, ad::Graph::Id>> trainable;
  };
  Bindings bind(ad::Graph& g, bool train);

  /// Clean-latent prediction for a whole segment; reuse one Bindings for
  /// every clip in a batch so gradients accumulate on shared leaves.
  ad::Graph::Id predict_clean(ad::Graph& g, const Bindings& binds, ad::Graph::Id z_t,
                              const Conditioning& cond);

  /// One deterministic reverse step t -> t-1 (cond.timestep = t >= 1).
  LatentVideo denoise_step(const LatentVideo& z_t, const Conditioning& cond) override;

  ad::Tensor encode(const img::Image& frame) const override;
  img::Image decode(const ad::Tensor& latent) const override;

 private:
  ToyModelConfig cfg_;
  NoiseSchedule schedule_;
  LatentCodec codec_;
  std::vector<nn::NamedTensor> spatial_, temporal_, projector_, fps_;
};

struct AdaptTrace {
  std::vector<double> losses;  // one entry per step
  long spatial_updates = 0;
  long image_projector_updates = 0;
  long temporal_updates = 0;       // stays 0: frozen
  long fps_embedding_updates = 0;  // stays 0: frozen
};

/// Inference-stage adaptation: samples clips, timesteps and noise,
/// minimizes the predicted-noise MSE and updates only the spatial and
/// image-projector groups.
AdaptTrace icadapt(ToyVideoModel& model, const std::vector<VideoClip>& clip_list,
                   const AdaptConfig& cfg);

/// Same trainer over clips referencing shared per-view frame storage, so
/// large strided clip sets (which overlap heavily) are encoded once per
/// frame instead of once per clip.
AdaptTrace icadapt_indexed(ToyVideoModel& model,
                           const std::vector<std::vector<img::Image>>& view_frames,
                           const std::vector<clips::ClipIndex>& clip_list,
                           const AdaptConfig& cfg);

void save_checkpoint(const ToyVideoModel& model, const AdaptConfig& cfg,
                     const std::filesystem::path& binary_path,
                     const std::filesystem::path& sidecar_path);
ToyVideoModel load_checkpoint(const std::filesystem::path& binary_path,
                              const std::filesystem::path& sidecar_path);

}  // namespace anymole::diffusion
