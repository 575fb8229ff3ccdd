#pragma once

#include <string>
#include <vector>

#include "anymole/rng.hpp"

namespace anymole::ad {

/// Dense row-major double tensor. Small and value-semantic; every shape the
/// project needs (vectors, matrices, CHW images, FCHW latent videos) is a
/// plain shape vector.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape_in, double fill = 0.0);

  static Tensor scalar(double x);
  static Tensor randn(std::vector<int> shape_in, Rng& rng, double stddev = 1.0);

  int numel() const { return static_cast<int>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  double& operator[](size_t i) { return v[i]; }
  double operator[](size_t i) const { return v[i]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;
};

}  // namespace anymole::ad
