#include "anymole/nn.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "anymole/errors.hpp"

namespace anymole::nn {

void Adam::step(const std::vector<ad::Tensor*>& params,
                const std::vector<const ad::Tensor*>& grads) {
  if (params.size() != grads.size()) throw ContractViolation("adam: param/grad count mismatch");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->shape, 0.0);
      v_.emplace_back(p->shape, 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractViolation("adam: parameter list changed size");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    ad::Tensor& p = *params[i];
    const ad::Tensor& g = *grads[i];
    if (!p.same_shape(g)) throw ContractViolation("adam: grad shape mismatch");
    ad::Tensor& m = m_[i];
    ad::Tensor& v = v_[i];
    for (int k = 0; k < p.numel(); ++k) {
      const size_t kk = static_cast<size_t>(k);
      m.v[kk] = cfg_.beta1 * m.v[kk] + (1.0 - cfg_.beta1) * g.v[kk];
      v.v[kk] = cfg_.beta2 * v.v[kk] + (1.0 - cfg_.beta2) * g.v[kk] * g.v[kk];
      const double mhat = m.v[kk] / bc1;
      const double vhat = v.v[kk] / bc2;
      p.v[kk] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

namespace {

constexpr char kMagic[8] = {'A', 'M', 'T', 'B', '1', '\n', 0, 0};

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T read_pod(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  return value;
}

}  // namespace

void save_tensors(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(nt.name.size()));
    out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(nt.tensor.shape.size()));
    for (int d : nt.tensor.shape) write_pod<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(nt.tensor.v.data()),
              static_cast<std::streamsize>(nt.tensor.v.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw ParseError("not a tensor checkpoint: " + path.string());
  const auto count = read_pod<std::uint32_t>(in);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto ndim = read_pod<std::uint32_t>(in);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = read_pod<std::int32_t>(in);
    ad::Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    if (!in) throw ParseError("truncated tensor checkpoint: " + path.string());
    tensors.push_back({std::move(name), std::move(t)});
  }
  return tensors;
}

const ad::Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& nt : tensors)
    if (nt.name == name) return nt.tensor;
  throw ParseError("checkpoint is missing tensor \"" + name + "\"");
}

}  // namespace anymole::nn
