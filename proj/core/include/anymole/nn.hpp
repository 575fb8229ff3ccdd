#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "anymole/tensor.hpp"

namespace anymole::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over an ordered parameter list; moment state is keyed by position,
/// so callers must pass the same ordering every step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(const std::vector<ad::Tensor*>& params,
            const std::vector<const ad::Tensor*>& grads);
  long update_count() const { return t_; }
  void set_learning_rate(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<ad::Tensor> m_, v_;
};

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

/// Little-endian binary blob of named double tensors; the format is shared
/// by the video-backend and estimator checkpoints.
void save_tensors(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

const ad::Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace anymole::nn
