#include "anymole/tensor.hpp"

#include <numeric>
#include <sstream>

#include "anymole/errors.hpp"

namespace anymole::ad {

Tensor::Tensor(std::vector<int> shape_in, double fill) : shape(std::move(shape_in)) {
  long n = 1;
  for (int d : shape) {
    if (d <= 0) throw ContractViolation("tensor dimensions must be positive");
    n *= d;
  }
  v.assign(static_cast<size_t>(n), fill);
}

Tensor Tensor::scalar(double x) {
  Tensor t({1});
  t.v[0] = x;
  return t;
}

Tensor Tensor::randn(std::vector<int> shape_in, Rng& rng, double stddev) {
  Tensor t(std::move(shape_in));
  for (double& x : t.v) x = stddev * rng.normal();
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

}  // namespace anymole::ad
