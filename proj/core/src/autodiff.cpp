#include "anymole/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "anymole/errors.hpp"

namespace anymole::ad {

Graph::Id Graph::make_node(Tensor value, bool requires_grad,
                           std::function<void(Graph&)> backward_fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size()) - 1;
}

Graph::Id Graph::constant(Tensor t) { return make_node(std::move(t), false, nullptr); }

Graph::Id Graph::param(Tensor* external) {
  Node n;
  n.requires_grad = true;
  n.external = external;
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size()) - 1;
}

const Tensor& Graph::val(Id id) const {
  const Node& n = nodes_.at(static_cast<size_t>(id));
  return n.external ? *n.external : n.value;
}

const Tensor& Graph::grad(Id id) const {
  const Node& n = nodes_.at(static_cast<size_t>(id));
  if (!n.grad_live) throw ContractViolation("gradient not computed for this node");
  return n.grad;
}

Tensor& Graph::grad_buffer(Id id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.grad_live) {
    n.grad = Tensor(val(id).shape, 0.0);
    n.grad_live = true;
  }
  return n.grad;
}

void Graph::backward(Id loss) {
  if (val(loss).numel() != 1) throw ContractViolation("backward expects a scalar loss");
  for (auto& n : nodes_) n.grad_live = false;
  grad_buffer(loss).v[0] = 1.0;
  for (Id id = static_cast<Id>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_live || !n.requires_grad || !n.backward_fn) continue;
    n.backward_fn(*this);
  }
}

// ---------------------------------------------------------------- helpers

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ContractViolation(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                            b.shape_str());
}

}  // namespace

// ---------------------------------------------------------------- ops

Graph::Id Graph::add(Id a, Id b) {
  check_same_shape(val(a), val(b), "add");
  Tensor out = val(a);
  const Tensor& vb = val(b);
  for (int i = 0; i < out.numel(); ++i) out.v[static_cast<size_t>(i)] += vb.v[static_cast<size_t>(i)];
  const bool req = needs(a) || needs(b);
  Id id = make_node(std::move(out), req, nullptr);
  nodes_.back().backward_fn = [id, a, b](Graph& g) {
    const Tensor& go = g.grad(id);
    if (g.needs(a)) {
      Tensor& ga = g.grad_buffer(a);
      for (int i = 0; i < go.numel(); ++i) ga.v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)];
    }
    if (g.needs(b)) {
      Tensor& gb = g.grad_buffer(b);
      for (int i = 0; i < go.numel(); ++i) gb.v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)];
    }
  };
  return id;
}

Graph::Id Graph::sub(Id a, Id b) {
  check_same_shape(val(a), val(b), "sub");
  Tensor out = val(a);
  const Tensor& vb = val(b);
  for (int i = 0; i < out.numel(); ++i) out.v[static_cast<size_t>(i)] -= vb.v[static_cast<size_t>(i)];
  Id id = make_node(std::move(out), needs(a) || needs(b), nullptr);
  nodes_.back().backward_fn = [id, a, b](Graph& g) {
    const Tensor& go = g.grad(id);
    if (g.needs(a)) {
      Tensor& ga = g.grad_buffer(a);
      for (int i = 0; i < go.numel(); ++i) ga.v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)];
    }
    if (g.needs(b)) {
      Tensor& gb = g.grad_buffer(b);
      for (int i = 0; i < go.numel(); ++i) gb.v[static_cast<size_t>(i)] -= go.v[static_cast<size_t>(i)];
    }
  };
  return id;
}

Graph::Id Graph::mul(Id a, Id b) {
  check_same_shape(val(a), val(b), "mul");
  Tensor out = val(a);
  const Tensor& vb = val(b);
  for (int i = 0; i < out.numel(); ++i) out.v[static_cast<size_t>(i)] *= vb.v[static_cast<size_t>(i)];
  Id id = make_node(std::move(out), needs(a) || needs(b), nullptr);
  nodes_.back().backward_fn = [id, a, b](Graph& g) {
    const Tensor& go = g.grad(id);
    const Tensor& va = g.val(a);
    const Tensor& vb2 = g.val(b);
    if (g.needs(a)) {
      Tensor& ga = g.grad_buffer(a);
      for (int i = 0; i < go.numel(); ++i)
        ga.v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)] * vb2.v[static_cast<size_t>(i)];
    }
    if (g.needs(b)) {
      Tensor& gb = g.grad_buffer(b);
      for (int i = 0; i < go.numel(); ++i)
        gb.v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)] * va.v[static_cast<size_t>(i)];
    }
  };
  return id;
}

Graph::Id Graph::scale(Id a, double s) { return affine_scalar(a, s, 0.0); }

Graph::Id Graph::affine_scalar(Id a, double mul_c, double shift_c) {
  Tensor out = val(a);
  for (double& x : out.v) x = mul_c * x + shift_c;
  Id id = make_node(std::move(out), needs(a), nullptr);
  nodes_.back().backward_fn = [id, a, mul_c](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(id);
    Tensor& ga = g.grad_buffer(a);
    for (int i = 0; i < go.numel(); ++i)
      ga.v[static_cast<size_t>(i)] += mul_c * go.v[static_cast<size_t>(i)];
  };
  return id;
}

Graph::Id Graph::tanh_act(Id a) {
  Tensor out = val(a);
  for (double& x : out.v) x = std::tanh(x);
  Id id = make_node(std::move(out), needs(a), nullptr);
  nodes_.back().backward_fn = [id, a](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(id);
    const Tensor& vo = g.val(id);
    Tensor& ga = g.grad_buffer(a);
    for (int i = 0; i < go.numel(); ++i) {
      const double y = vo.v[static_cast<size_t>(i)];
      ga.v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)] * (1.0 - y * y);
    }
  };
  return id;
}

Graph::Id Graph::matmul(Id a, Id b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(1) != vb.dim(0))
    throw ContractViolation("matmul: incompatible shapes " + va.shape_str() + " x " +
                            vb.shape_str());
  const int m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) {
      const double ai = va.v[static_cast<size_t>(i * k + kk)];
      if (ai == 0.0) continue;
      for (int j = 0; j < n; ++j)
        out.v[static_cast<size_t>(i * n + j)] += ai * vb.v[static_cast<size_t>(kk * n + j)];
    }
  Id id = make_node(std::move(out), needs(a) || needs(b), nullptr);
  nodes_.back().backward_fn = [id, a, b, m, k, n](Graph& g) {
    const Tensor& go = g.grad(id);
    const Tensor& va2 = g.val(a);
    const Tensor& vb2 = g.val(b);
    if (g.needs(a)) {
      Tensor& ga = g.grad_buffer(a);  // go (m,n) x b^T (n,k)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const double gij = go.v[static_cast<size_t>(i * n + j)];
          if (gij == 0.0) continue;
          for (int kk = 0; kk < k; ++kk)
            ga.v[static_cast<size_t>(i * k + kk)] += gij * vb2.v[static_cast<size_t>(kk * n + j)];
        }
    }
    if (g.needs(b)) {
      Tensor& gb = g.grad_buffer(b);  // a^T (k,m) x go (m,n)
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          const double ai = va2.v[static_cast<size_t>(i * k + kk)];
          if (ai == 0.0) continue;
          for (int j = 0; j < n; ++j)
            gb.v[static_cast<size_t>(kk * n + j)] += ai * go.v[static_cast<size_t>(i * n + j)];
        }
    }
  };
  return id;
}

Graph::Id Graph::linear(Id x, Id w, Id b) {
  const Tensor& vx = val(x);
  const Tensor& vw = val(w);
  const Tensor& vb = val(b);
  if (vx.ndim() != 2 || vw.ndim() != 2 || vb.ndim() != 1 || vx.dim(1) != vw.dim(1) ||
      vw.dim(0) != vb.dim(0))
    throw ContractViolation("linear: incompatible shapes");
  const int n = vx.dim(0), in = vx.dim(1), out_dim = vw.dim(0);
  Tensor out({n, out_dim});
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out_dim; ++o) {
      double acc = vb.v[static_cast<size_t>(o)];
      for (int j = 0; j < in; ++j)
        acc += vx.v[static_cast<size_t>(i * in + j)] * vw.v[static_cast<size_t>(o * in + j)];
      out.v[static_cast<size_t>(i * out_dim + o)] = acc;
    }
  Id id = make_node(std::move(out), needs(x) || needs(w) || needs(b), nullptr);
  nodes_.back().backward_fn = [id, x, w, b, n, in, out_dim](Graph& g) {
    const Tensor& go = g.grad(id);
    const Tensor& vx2 = g.val(x);
    const Tensor& vw2 = g.val(w);
    if (g.needs(x)) {
      Tensor& gx = g.grad_buffer(x);
      for (int i = 0; i < n; ++i)
        for (int o = 0; o < out_dim; ++o) {
          const double gio = go.v[static_cast<size_t>(i * out_dim + o)];
          if (gio == 0.0) continue;
          for (int j = 0; j < in; ++j)
            gx.v[static_cast<size_t>(i * in + j)] += gio * vw2.v[static_cast<size_t>(o * in + j)];
        }
    }
    if (g.needs(w)) {
      Tensor& gw = g.grad_buffer(w);
      for (int i = 0; i < n; ++i)
        for (int o = 0; o < out_dim; ++o) {
          const double gio = go.v[static_cast<size_t>(i * out_dim + o)];
          if (gio == 0.0) continue;
          for (int j = 0; j < in; ++j)
            gw.v[static_cast<size_t>(o * in + j)] += gio * vx2.v[static_cast<size_t>(i * in + j)];
        }
    }
    if (g.needs(b)) {
      Tensor& gb = g.grad_buffer(b);
      for (int i = 0; i < n; ++i)
        for (int o = 0; o < out_dim; ++o)
          gb.v[static_cast<size_t>(o)] += go.v[static_cast<size_t>(i * out_dim + o)];
    }
  };
  return id;
}

Graph::Id Graph::conv2d(Id x, Id w, Id b, int pad) {
  const Tensor& vx = val(x);
  const Tensor& vw = val(w);
  if (vx.ndim() != 4 || vw.ndim() != 4 || vx.dim(1) != vw.dim(1))
    throw ContractViolation("conv2d: expects x (B,C,H,W) and w (Co,Ci,kh,kw) with C==Ci");
  const int batch = vx.dim(0), ci = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
  const int co = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
  const bool has_bias = b >= 0;
  if (has_bias && (val(b).ndim() != 1 || val(b).dim(0) != co))
    throw ContractViolation("conv2d: bias must be (Co,)");

  Tensor out({batch, co, h, wd});
  const size_t plane = static_cast<size_t>(h) * wd;
  for (int bi = 0; bi < batch; ++bi)
    for (int o = 0; o < co; ++o) {
      double* op = &out.v[(static_cast<size_t>(bi) * co + o) * plane];
      if (has_bias) {
        const double bias = val(b).v[static_cast<size_t>(o)];
        for (size_t i = 0; i < plane; ++i) op[i] = bias;
      }
      for (int c = 0; c < ci; ++c) {
        const double* xp = &vx.v[(static_cast<size_t>(bi) * ci + c) * plane];
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const double wv =
                vw.v[static_cast<size_t>(((o * ci + c) * kh + ky) * kw + kx)];
            if (wv == 0.0) continue;
            const int dy = ky - pad, dx = kx - pad;
            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
            for (int y = y0; y < y1; ++y) {
              double* orow = op + static_cast<size_t>(y) * wd;
              const double* xrow = xp + static_cast<size_t>(y + dy) * wd + dx;
              for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * xrow[xx];
            }
          }
      }
    }

  Id id = make_node(std::move(out), needs(x) || needs(w) || (has_bias && needs(b)), nullptr);
  nodes_.back().backward_fn = [id, x, w, b, pad, batch, ci, h, wd, co, kh, kw,
                               has_bias](Graph& g) {
    const Tensor& go = g.grad(id);
    const Tensor& vx2 = g.val(x);
    const Tensor& vw2 = g.val(w);
    const size_t plane = static_cast<size_t>(h) * wd;
    if (g.needs(x)) {
      Tensor& gx = g.grad_buffer(x);
      for (int bi = 0; bi < batch; ++bi)
        for (int o = 0; o < co; ++o) {
          const double* gop = &go.v[(static_cast<size_t>(bi) * co + o) * plane];
          for (int c = 0; c < ci; ++c) {
            double* gxp = &gx.v[(static_cast<size_t>(bi) * ci + c) * plane];
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const double wv =
                    vw2.v[static_cast<size_t>(((o * ci + c) * kh + ky) * kw + kx)];
                if (wv == 0.0) continue;
                const int dy = ky - pad, dx = kx - pad;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                for (int y = y0; y < y1; ++y) {
                  const double* grow = gop + static_cast<size_t>(y) * wd;
                  double* gxrow = gxp + static_cast<size_t>(y + dy) * wd + dx;
                  for (int xx = x0; xx < x1; ++xx) gxrow[xx] += wv * grow[xx];
                }
              }
          }
        }
    }
    if (g.needs(w)) {
      Tensor& gw = g.grad_buffer(w);
      for (int bi = 0; bi < batch; ++bi)
        for (int o = 0; o < co; ++o) {
          const double* gop = &go.v[(static_cast<size_t>(bi) * co + o) * plane];
          for (int c = 0; c < ci; ++c) {
            const double* xp = &vx2.v[(static_cast<size_t>(bi) * ci + c) * plane];
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int dy = ky - pad, dx = kx - pad;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                double acc = 0.0;
                for (int y = y0; y < y1; ++y) {
                  const double* grow = gop + static_cast<size_t>(y) * wd;
                  const double* xrow = xp + static_cast<size_t>(y + dy) * wd + dx;
                  for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * xrow[xx];
                }
                gw.v[static_cast<size_t>(((o * ci + c) * kh + ky) * kw + kx)] += acc;
              }
          }
        }
    }
    if (has_bias && g.needs(b)) {
      Tensor& gb = g.grad_buffer(b);
      for (int bi = 0; bi < batch; ++bi)
        for (int o = 0; o < co; ++o) {
          const double* gop = &go.v[(static_cast<size_t>(bi) * co + o) * plane];
          double acc = 0.0;
          for (size_t i = 0; i < plane; ++i) acc += gop[i];
          gb.v[static_cast<size_t>(o)] += acc;
        }
    }
  };
  return id;
}

Graph::Id Graph::softmax_rows(Id a) {
  const Tensor& va = val(a);
  if (va.ndim() != 2) throw ContractViolation("softmax_rows expects a 2-D tensor");
  const int r = va.dim(0), c = va.dim(1);
  Tensor out({r, c});
  for (int i = 0; i < r; ++i) {
    const double* row = &va.v[static_cast<size_t>(i) * c];
    double m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    double* orow = &out.v[static_cast<size_t>(i) * c];
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - m);
      z += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= z;
  }
  Id id = make_node(std::move(out), needs(a), nullptr);
  nodes_.back().backward_fn = [id, a, r, c](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(id);
    const Tensor& vo = g.val(id);
    Tensor& ga = g.grad_buffer(a);
    for (int i = 0; i < r; ++i) {
      const double* grow = &go.v[static_cast<size_t>(i) * c];
      const double* yrow = &vo.v[static_cast<size_t>(i) * c];
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += grow[j] * yrow[j];
      double* garow = &ga.v[static_cast<size_t>(i) * c];
      for (int j = 0; j < c; ++j) garow[j] += yrow[j] * (grow[j] - dot);
    }
  };
  return id;
}

Graph::Id Graph::reshape(Id a, std::vector<int> shape) {
  Tensor out = val(a);
  long n = 1;
  for (int d : shape) n *= d;
  if (n != out.numel()) throw ContractViolation("reshape: element count mismatch");
  out.shape = std::move(shape);
  Id id = make_node(std::move(out), needs(a), nullptr);
  nodes_.back().backward_fn = [id, a](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(id);
    Tensor& ga = g.grad_buffer(a);
    for (int i = 0; i < go.numel(); ++i) ga.v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)];
  };
  return id;
}

Graph::Id Graph::concat(const std::vector<Id>& parts, int axis) {
  if (parts.empty()) throw ContractViolation("concat: no inputs");
  const Tensor& first = val(parts[0]);
  const int nd = first.ndim();
  if (axis < 0 || axis >= nd) throw ContractViolation("concat: bad axis");
  std::vector<int> shape = first.shape;
  int axis_total = 0;
  for (Id p : parts) {
    const Tensor& t = val(p);
    if (t.ndim() != nd) throw ContractViolation("concat: rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != axis && t.dim(d) != shape[static_cast<size_t>(d)])
        throw ContractViolation("concat: non-axis dimension mismatch");
    axis_total += t.dim(axis);
  }
  shape[static_cast<size_t>(axis)] = axis_total;

  int outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first.dim(d);
  for (int d = axis + 1; d < nd; ++d) inner *= first.dim(d);

  Tensor out(shape);
  bool req = false;
  {
    int offset = 0;
    for (Id p : parts) {
      const Tensor& t = val(p);
      req = req || needs(p);
      const int ax = t.dim(axis);
      for (int o = 0; o < outer; ++o)
        std::copy_n(&t.v[static_cast<size_t>(o) * ax * inner], static_cast<size_t>(ax) * inner,
                    &out.v[(static_cast<size_t>(o) * axis_total + offset) * inner]);
      offset += ax;
    }
  }
  std::vector<Id> parts_copy = parts;
  Id id = make_node(std::move(out), req, nullptr);
  nodes_.back().backward_fn = [id, parts_copy, axis, outer, inner, axis_total](Graph& g) {
    const Tensor& go = g.grad(id);
    int offset = 0;
    for (Id p : parts_copy) {
      const int ax = g.val(p).dim(axis);
      if (g.needs(p)) {
        Tensor& gp = g.grad_buffer(p);
        for (int o = 0; o < outer; ++o) {
          const double* src = &go.v[(static_cast<size_t>(o) * axis_total + offset) * inner];
          double* dst = &gp.v[static_cast<size_t>(o) * ax * inner];
          for (size_t i = 0; i < static_cast<size_t>(ax) * inner; ++i) dst[i] += src[i];
        }
      }
      offset += ax;
    }
  };
  return id;
}

Graph::Id Graph::slice_row(Id a, int row) {
  const Tensor& va = val(a);
  if (va.ndim() != 2 || row < 0 || row >= va.dim(0))
    throw ContractViolation("slice_row: bad row or rank");
  const int c = va.dim(1);
  Tensor out({c});
  std::copy_n(&va.v[static_cast<size_t>(row) * c], c, out.v.data());
  Id id = make_node(std::move(out), needs(a), nullptr);
  nodes_.back().backward_fn = [id, a, row, c](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(id);
    Tensor& ga = g.grad_buffer(a);
    for (int j = 0; j < c; ++j) ga.v[static_cast<size_t>(row) * c + j] += go.v[static_cast<size_t>(j)];
  };
  return id;
}

Graph::Id Graph::slice_cols(Id a, int c0, int c1) {
  const Tensor& va = val(a);
  if (va.ndim() != 2 || c0 < 0 || c1 > va.dim(1) || c0 >= c1)
    throw ContractViolation("slice_cols: bad range");
  const int r = va.dim(0), c = va.dim(1), n = c1 - c0;
  Tensor out({r, n});
  for (int i = 0; i < r; ++i)
    std::copy_n(&va.v[static_cast<size_t>(i) * c + c0], n, &out.v[static_cast<size_t>(i) * n]);
  Id id = make_node(std::move(out), needs(a), nullptr);
  nodes_.back().backward_fn = [id, a, c0, r, c, n](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(id);
    Tensor& ga = g.grad_buffer(a);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < n; ++j)
        ga.v[static_cast<size_t>(i) * c + c0 + j] += go.v[static_cast<size_t>(i) * n + j];
  };
  return id;
}

Graph::Id Graph::stack_rows(const std::vector<Id>& rows) {
  if (rows.empty()) throw ContractViolation("stack_rows: no inputs");
  const int c = val(rows[0]).numel();
  bool req = false;
  Tensor out({static_cast<int>(rows.size()), c});
  for (size_t i = 0; i < rows.size(); ++i) {
    const Tensor& t = val(rows[i]);
    if (t.ndim() != 1 || t.numel() != c) throw ContractViolation("stack_rows: ragged inputs");
    req = req || needs(rows[i]);
    std::copy_n(t.v.data(), c, &out.v[i * static_cast<size_t>(c)]);
  }
  std::vector<Id> rows_copy = rows;
  Id id = make_node(std::move(out), req, nullptr);
  nodes_.back().backward_fn = [id, rows_copy, c](Graph& g) {
    const Tensor& go = g.grad(id);
    for (size_t i = 0; i < rows_copy.size(); ++i) {
      if (!g.needs(rows_copy[i])) continue;
      Tensor& gr = g.grad_buffer(rows_copy[i]);
      for (int j = 0; j < c; ++j)
        gr.v[static_cast<size_t>(j)] += go.v[i * static_cast<size_t>(c) + j];
    }
  };
  return id;
}

Graph::Id Graph::upsample2x(Id a) {
  const Tensor& va = val(a);
  if (va.ndim() != 4) throw ContractViolation("upsample2x expects (B,C,H,W)");
  const int b = va.dim(0), c = va.dim(1), h = va.dim(2), w = va.dim(3);
  Tensor out({b, c, 2 * h, 2 * w});
  for (int bc = 0; bc < b * c; ++bc) {
    const double* src = &va.v[static_cast<size_t>(bc) * h * w];
    double* dst = &out.v[static_cast<size_t>(bc) * 4 * h * w];
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x)
        dst[static_cast<size_t>(y) * 2 * w + x] = src[static_cast<size_t>(y / 2) * w + x / 2];
  }
  Id id = make_node(std::move(out), needs(a), nullptr);
  nodes_.back().backward_fn = [id, a, b, c, h, w](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(id);
    Tensor& ga = g.grad_buffer(a);
    for (int bc = 0; bc < b * c; ++bc) {
      const double* src = &go.v[static_cast<size_t>(bc) * 4 * h * w];
      double* dst = &ga.v[static_cast<size_t>(bc) * h * w];
      for (int y = 0; y < 2 * h; ++y)
        for (int x = 0; x < 2 * w; ++x)
          dst[static_cast<size_t>(y / 2) * w + x / 2] += src[static_cast<size_t>(y) * 2 * w + x];
    }
  };
  return id;
}

Graph::Id Graph::sum_all(Id a) {
  double acc = 0.0;
  for (double x : val(a).v) acc += x;
  Id id = make_node(Tensor::scalar(acc), needs(a), nullptr);
  nodes_.back().backward_fn = [id, a](Graph& g) {
    if (!g.needs(a)) return;
    const double go = g.grad(id).v[0];
    Tensor& ga = g.grad_buffer(a);
    for (double& x : ga.v) x += go;
  };
  return id;
}

Graph::Id Graph::sq_diff_sum(Id a, Tensor target) {
  const Tensor& va = val(a);
  check_same_shape(va, target, "sq_diff_sum");
  double acc = 0.0;
  for (int i = 0; i < va.numel(); ++i) {
    const double d = va.v[static_cast<size_t>(i)] - target.v[static_cast<size_t>(i)];
    acc += d * d;
  }
  Id id = make_node(Tensor::scalar(acc), needs(a), nullptr);
  Tensor target_copy = std::move(target);
  nodes_.back().backward_fn = [id, a, target_copy](Graph& g) {
    if (!g.needs(a)) return;
    const double go = g.grad(id).v[0];
    const Tensor& va2 = g.val(a);
    Tensor& ga = g.grad_buffer(a);
    for (int i = 0; i < va2.numel(); ++i)
      ga.v[static_cast<size_t>(i)] +=
          2.0 * go * (va2.v[static_cast<size_t>(i)] - target_copy.v[static_cast<size_t>(i)]);
  };
  return id;
}

Graph::Id Graph::add_channel_bias(Id x, Id v) {
  const Tensor& vx = val(x);
  const Tensor& vv = val(v);
  if (vv.ndim() != 1 || vx.ndim() < 3) throw ContractViolation("add_channel_bias: bad shapes");
  const int c = vv.dim(0);
  if (vx.dim(vx.ndim() - 3) != c)
    throw ContractViolation("add_channel_bias: channel dimension mismatch");
  const int plane = vx.dim(vx.ndim() - 2) * vx.dim(vx.ndim() - 1);
  const int lead = vx.numel() / (c * plane);
  Tensor out = vx;
  for (int l = 0; l < lead; ++l)
    for (int ch = 0; ch < c; ++ch) {
      double* p = &out.v[(static_cast<size_t>(l) * c + ch) * plane];
      const double bias = vv.v[static_cast<size_t>(ch)];
      for (int i = 0; i < plane; ++i) p[i] += bias;
    }
  Id id = make_node(std::move(out), needs(x) || needs(v), nullptr);
  nodes_.back().backward_fn = [id, x, v, c, plane, lead](Graph& g) {
    const Tensor& go = g.grad(id);
    if (g.needs(x)) {
      Tensor& gx = g.grad_buffer(x);
      for (int i = 0; i < go.numel(); ++i) gx.v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)];
    }
    if (g.needs(v)) {
      Tensor& gv = g.grad_buffer(v);
      for (int l = 0; l < lead; ++l)
        for (int ch = 0; ch < c; ++ch) {
          const double* p = &go.v[(static_cast<size_t>(l) * c + ch) * plane];
          double acc = 0.0;
          for (int i = 0; i < plane; ++i) acc += p[i];
          gv.v[static_cast<size_t>(ch)] += acc;
        }
    }
  };
  return id;
}

Graph::Id Graph::add_spatial_broadcast(Id z, Id m) {
  const Tensor& vz = val(z);
  const Tensor& vm = val(m);
  if (vz.ndim() != 4 || vm.ndim() != 3 || vz.dim(1) != vm.dim(0) || vz.dim(2) != vm.dim(1) ||
      vz.dim(3) != vm.dim(2))
    throw ContractViolation("add_spatial_broadcast: expects (F,C,H,W) and (C,H,W)");
  const int frames = vz.dim(0);
  const int chw = vm.numel();
  Tensor out = vz;
  for (int f = 0; f < frames; ++f) {
    double* p = &out.v[static_cast<size_t>(f) * chw];
    for (int i = 0; i < chw; ++i) p[i] += vm.v[static_cast<size_t>(i)];
  }
  Id id = make_node(std::move(out), needs(z) || needs(m), nullptr);
  nodes_.back().backward_fn = [id, z, m, frames, chw](Graph& g) {
    const Tensor& go = g.grad(id);
    if (g.needs(z)) {
      Tensor& gz = g.grad_buffer(z);
      for (int i = 0; i < go.numel(); ++i) gz.v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)];
    }
    if (g.needs(m)) {
      Tensor& gm = g.grad_buffer(m);
      for (int f = 0; f < frames; ++f) {
        const double* p = &go.v[static_cast<size_t>(f) * chw];
        for (int i = 0; i < chw; ++i) gm.v[static_cast<size_t>(i)] += p[i];
      }
    }
  };
  return id;
}

Graph::Id Graph::frame_dense(Id z, Id w) {
  const Tensor& vz = val(z);
  const Tensor& vw = val(w);
  if (vz.ndim() != 4 || vw.ndim() != 2 || vw.dim(1) != vz.dim(0))
    throw ContractViolation("frame_dense: expects (F,C,H,W) and (Fo,F)");
  const int f_in = vz.dim(0), f_out = vw.dim(0);
  const int chw = vz.numel() / f_in;
  Tensor out({f_out, vz.dim(1), vz.dim(2), vz.dim(3)});
  for (int fo = 0; fo < f_out; ++fo) {
    double* op = &out.v[static_cast<size_t>(fo) * chw];
    for (int fi = 0; fi < f_in; ++fi) {
      const double wv = vw.v[static_cast<size_t>(fo) * f_in + fi];
      if (wv == 0.0) continue;
      const double* zp = &vz.v[static_cast<size_t>(fi) * chw];
      for (int i = 0; i < chw; ++i) op[i] += wv * zp[i];
    }
  }
  Id id = make_node(std::move(out), needs(z) || needs(w), nullptr);
  nodes_.back().backward_fn = [id, z, w, f_in, f_out, chw](Graph& g) {
    const Tensor& go = g.grad(id);
    const Tensor& vz2 = g.val(z);
    const Tensor& vw2 = g.val(w);
    if (g.needs(z)) {
      Tensor& gz = g.grad_buffer(z);
      for (int fo = 0; fo < f_out; ++fo) {
        const double* gop = &go.v[static_cast<size_t>(fo) * chw];
        for (int fi = 0; fi < f_in; ++fi) {
          const double wv = vw2.v[static_cast<size_t>(fo) * f_in + fi];
          if (wv == 0.0) continue;
          double* gzp = &gz.v[static_cast<size_t>(fi) * chw];
          for (int i = 0; i < chw; ++i) gzp[i] += wv * gop[i];
        }
      }
    }
    if (g.needs(w)) {
      Tensor& gw = g.grad_buffer(w);
      for (int fo = 0; fo < f_out; ++fo) {
        const double* gop = &go.v[static_cast<size_t>(fo) * chw];
        for (int fi = 0; fi < f_in; ++fi) {
          const double* zp = &vz2.v[static_cast<size_t>(fi) * chw];
          double acc = 0.0;
          for (int i = 0; i < chw; ++i) acc += gop[i] * zp[i];
          gw.v[static_cast<size_t>(fo) * f_in + fi] += acc;
        }
      }
    }
  };
  return id;
}

Graph::Id Graph::bilinear_sample(Id f, Id xy) {
  const Tensor& vf = val(f);
  const Tensor& vxy = val(xy);
  if (vf.ndim() != 3 || vxy.ndim() != 2 || vxy.dim(1) != 2)
    throw ContractViolation("bilinear_sample: expects F (C,H,W) and xy (J,2)");
  const int c = vf.dim(0), h = vf.dim(1), w = vf.dim(2), j = vxy.dim(0);
  Tensor out({j, c});
  for (int i = 0; i < j; ++i) {
    double gx = vxy.v[static_cast<size_t>(i) * 2 + 0];
    double gy = vxy.v[static_cast<size_t>(i) * 2 + 1];
    if (gx < 0.0 || gx > w - 1 || gy < 0.0 || gy > h - 1) ++border_clamps_;
    gx = std::clamp(gx, 0.0, static_cast<double>(w - 1));
    gy = std::clamp(gy, 0.0, static_cast<double>(h - 1));
    const int x0 = std::min(static_cast<int>(gx), w - 1);
    const int y0 = std::min(static_cast<int>(gy), h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = gx - x0, fy = gy - y0;
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = &vf.v[static_cast<size_t>(ch) * h * w];
      const double v00 = plane[static_cast<size_t>(y0) * w + x0];
      const double v10 = plane[static_cast<size_t>(y0) * w + x1];
      const double v01 = plane[static_cast<size_t>(y1) * w + x0];
      const double v11 = plane[static_cast<size_t>(y1) * w + x1];
      out.v[static_cast<size_t>(i) * c + ch] = (1 - fy) * ((1 - fx) * v00 + fx * v10) +
                                               fy * ((1 - fx) * v01 + fx * v11);
    }
  }
  Id id = make_node(std::move(out), needs(f) || needs(xy), nullptr);
  nodes_.back().backward_fn = [id, f, xy, c, h, w, j](Graph& g) {
    const Tensor& go = g.grad(id);
    const Tensor& vf2 = g.val(f);
    const Tensor& vxy2 = g.val(xy);
    for (int i = 0; i < j; ++i) {
      const double rx = vxy2.v[static_cast<size_t>(i) * 2 + 0];
      const double ry = vxy2.v[static_cast<size_t>(i) * 2 + 1];
      const bool clamped_x = rx < 0.0 || rx > w - 1;
      const bool clamped_y = ry < 0.0 || ry > h - 1;
      const double gx = std::clamp(rx, 0.0, static_cast<double>(w - 1));
      const double gy = std::clamp(ry, 0.0, static_cast<double>(h - 1));
      const int x0 = std::min(static_cast<int>(gx), w - 1);
      const int y0 = std::min(static_cast<int>(gy), h - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double fx = gx - x0, fy = gy - y0;
      double dgx = 0.0, dgy = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double gout = go.v[static_cast<size_t>(i) * c + ch];
        if (gout == 0.0) continue;
        const double* plane = &vf2.v[static_cast<size_t>(ch) * h * w];
        const double v00 = plane[static_cast<size_t>(y0) * w + x0];
        const double v10 = plane[static_cast<size_t>(y0) * w + x1];
        const double v01 = plane[static_cast<size_t>(y1) * w + x0];
        const double v11 = plane[static_cast<size_t>(y1) * w + x1];
        if (g.needs(f)) {
          Tensor& gf = g.grad_buffer(f);
          double* gplane = &gf.v[static_cast<size_t>(ch) * h * w];
          gplane[static_cast<size_t>(y0) * w + x0] += gout * (1 - fy) * (1 - fx);
          gplane[static_cast<size_t>(y0) * w + x1] += gout * (1 - fy) * fx;
          gplane[static_cast<size_t>(y1) * w + x0] += gout * fy * (1 - fx);
          gplane[static_cast<size_t>(y1) * w + x1] += gout * fy * fx;
        }
        dgx += gout * ((1 - fy) * (v10 - v00) + fy * (v11 - v01));
        dgy += gout * ((1 - fx) * (v01 - v00) + fx * (v11 - v10));
      }
      if (g.needs(xy)) {
        Tensor& gxy = g.grad_buffer(xy);
        gxy.v[static_cast<size_t>(i) * 2 + 0] += clamped_x ? 0.0 : dgx;
        gxy.v[static_cast<size_t>(i) * 2 + 1] += clamped_y ? 0.0 : dgy;
      }
    }
  };
  return id;
}

Graph::Id Graph::affine_rows(Id x, const Eigen::Matrix3d& a, const Eigen::Vector3d& b) {
  const Tensor& vx = val(x);
  if (vx.ndim() != 2 || vx.dim(1) != 3) throw ContractViolation("affine_rows expects (J,3)");
  const int j = vx.dim(0);
  Tensor out({j, 3});
  for (int i = 0; i < j; ++i) {
    const Eigen::Vector3d p(vx.v[static_cast<size_t>(i) * 3 + 0], vx.v[static_cast<size_t>(i) * 3 + 1],
                            vx.v[static_cast<size_t>(i) * 3 + 2]);
    const Eigen::Vector3d q = a * p + b;
    for (int k = 0; k < 3; ++k) out.v[static_cast<size_t>(i) * 3 + k] = q[k];
  }
  Id id = make_node(std::move(out), needs(x), nullptr);
  const Eigen::Matrix3d at = a.transpose();
  nodes_.back().backward_fn = [id, x, at, j](Graph& g) {
    if (!g.needs(x)) return;
    const Tensor& go = g.grad(id);
    Tensor& gx = g.grad_buffer(x);
    for (int i = 0; i < j; ++i) {
      const Eigen::Vector3d gp(go.v[static_cast<size_t>(i) * 3 + 0],
                               go.v[static_cast<size_t>(i) * 3 + 1],
                               go.v[static_cast<size_t>(i) * 3 + 2]);
      const Eigen::Vector3d gi = at * gp;
      for (int k = 0; k < 3; ++k) gx.v[static_cast<size_t>(i) * 3 + k] += gi[k];
    }
  };
  return id;
}

Graph::Id Graph::quat_normalize_rows(Id q) {
  const Tensor& vq = val(q);
  if (vq.ndim() != 2 || vq.dim(1) != 4)
    throw ContractViolation("quat_normalize_rows expects (J,4)");
  const int j = vq.dim(0);
  Tensor out({j, 4});
  for (int i = 0; i < j; ++i) {
    const double* row = &vq.v[static_cast<size_t>(i) * 4];
    const double norm = std::sqrt(row[0] * row[0] + row[1] * row[1] + row[2] * row[2] +
                                  row[3] * row[3]);
    if (norm < 1e-12) throw ContractViolation("quat_normalize_rows: zero-norm quaternion");
    for (int k = 0; k < 4; ++k) out.v[static_cast<size_t>(i) * 4 + k] = row[k] / norm;
  }
  Id id = make_node(std::move(out), needs(q), nullptr);
  nodes_.back().backward_fn = [id, q, j](Graph& g) {
    if (!g.needs(q)) return;
    const Tensor& go = g.grad(id);
    const Tensor& vq2 = g.val(q);
    Tensor& gq = g.grad_buffer(q);
    for (int i = 0; i < j; ++i) {
      const double* row = &vq2.v[static_cast<size_t>(i) * 4];
      const double n2 = row[0] * row[0] + row[1] * row[1] + row[2] * row[2] + row[3] * row[3];
      const double n = std::sqrt(n2);
      const double* grow = &go.v[static_cast<size_t>(i) * 4];
      double dot = 0.0;
      for (int k = 0; k < 4; ++k) dot += grow[k] * row[k];
      // d(q/|q|)/dq = (I - qq^T / |q|^2) / |q|
      for (int k = 0; k < 4; ++k)
        gq.v[static_cast<size_t>(i) * 4 + k] += grow[k] / n - row[k] * dot / (n2 * n);
    }
  };
  return id;
}

namespace {

// Hamilton product matrices in (w,x,y,z) layout: a*b = L(a) b = R(b) a.
Eigen::Matrix4d left_mul_matrix(const double* a) {
  Eigen::Matrix4d l;
  l << a[0], -a[1], -a[2], -a[3],
       a[1],  a[0], -a[3],  a[2],
       a[2],  a[3],  a[0], -a[1],
       a[3], -a[2],  a[1],  a[0];
  return l;
}

Eigen::Matrix4d right_mul_matrix(const double* b) {
  Eigen::Matrix4d r;
  r << b[0], -b[1], -b[2], -b[3],
       b[1],  b[0],  b[3], -b[2],
       b[2], -b[3],  b[0],  b[1],
       b[3],  b[2], -b[1],  b[0];
  return r;
}

}  // namespace

Graph::Id Graph::quat_mul(Id a, Id b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  if (va.numel() != 4 || vb.numel() != 4) throw ContractViolation("quat_mul expects (4,) inputs");
  const Eigen::Vector4d bv(vb.v[0], vb.v[1], vb.v[2], vb.v[3]);
  const Eigen::Vector4d prod = left_mul_matrix(va.v.data()) * bv;
  Tensor out({4});
  for (int k = 0; k < 4; ++k) out.v[static_cast<size_t>(k)] = prod[k];
  Id id = make_node(std::move(out), needs(a) || needs(b), nullptr);
  nodes_.back().backward_fn = [id, a, b](Graph& g) {
    const Tensor& go = g.grad(id);
    const Eigen::Vector4d gv(go.v[0], go.v[1], go.v[2], go.v[3]);
    if (g.needs(a)) {
      const Eigen::Vector4d ga = right_mul_matrix(g.val(b).v.data()).transpose() * gv;
      Tensor& t = g.grad_buffer(a);
      for (int k = 0; k < 4; ++k) t.v[static_cast<size_t>(k)] += ga[k];
    }
    if (g.needs(b)) {
      const Eigen::Vector4d gb = left_mul_matrix(g.val(a).v.data()).transpose() * gv;
      Tensor& t = g.grad_buffer(b);
      for (int k = 0; k < 4; ++k) t.v[static_cast<size_t>(k)] += gb[k];
    }
  };
  return id;
}

Graph::Id Graph::quat_rotate(Id q, Id v) {
  const Tensor& vq = val(q);
  const Tensor& vv = val(v);
  if (vq.numel() != 4 || vv.numel() != 3)
    throw ContractViolation("quat_rotate expects q (4,) and v (3,)");
  const double w = vq.v[0];
  const Eigen::Vector3d qv(vq.v[1], vq.v[2], vq.v[3]);
  const Eigen::Vector3d p(vv.v[0], vv.v[1], vv.v[2]);
  // f = (1 - 2|qv|^2) p + 2 (qv . p) qv + 2 w (qv x p); equals R(q) p when
  // |q| = 1 but stays a smooth function for any q.
  const Eigen::Vector3d f =
      (1.0 - 2.0 * qv.squaredNorm()) * p + 2.0 * qv.dot(p) * qv + 2.0 * w * qv.cross(p);
  Tensor out({3});
  for (int k = 0; k < 3; ++k) out.v[static_cast<size_t>(k)] = f[k];
  Id id = make_node(std::move(out), needs(q) || needs(v), nullptr);
  nodes_.back().backward_fn = [id, q, v](Graph& g) {
    const Tensor& go = g.grad(id);
    const Tensor& vq2 = g.val(q);
    const Tensor& vv2 = g.val(v);
    const double w2 = vq2.v[0];
    const Eigen::Vector3d qv(vq2.v[1], vq2.v[2], vq2.v[3]);
    const Eigen::Vector3d p(vv2.v[0], vv2.v[1], vv2.v[2]);
    const Eigen::Vector3d gf(go.v[0], go.v[1], go.v[2]);
    if (g.needs(v)) {
      Eigen::Matrix3d dfdp = (1.0 - 2.0 * qv.squaredNorm()) * Eigen::Matrix3d::Identity() +
                             2.0 * qv * qv.transpose();
      Eigen::Matrix3d cross;
      cross << 0, -qv.z(), qv.y(), qv.z(), 0, -qv.x(), -qv.y(), qv.x(), 0;
      dfdp += 2.0 * w2 * cross;
      const Eigen::Vector3d gv3 = dfdp.transpose() * gf;
      Tensor& t = g.grad_buffer(v);
      for (int k = 0; k < 3; ++k) t.v[static_cast<size_t>(k)] += gv3[k];
    }
    if (g.needs(q)) {
      const double dw = 2.0 * qv.cross(p).dot(gf);
      Eigen::Matrix3d dfdqv = -4.0 * p * qv.transpose() + 2.0 * qv * p.transpose() +
                              2.0 * qv.dot(p) * Eigen::Matrix3d::Identity();
      Eigen::Matrix3d pcross;
      pcross << 0, -p.z(), p.y(), p.z(), 0, -p.x(), -p.y(), p.x(), 0;
      dfdqv += -2.0 * w2 * pcross;
      const Eigen::Vector3d dqv = dfdqv.transpose() * gf;
      Tensor& t = g.grad_buffer(q);
      t.v[0] += dw;
      for (int k = 0; k < 3; ++k) t.v[static_cast<size_t>(k) + 1] += dqv[k];
    }
  };
  return id;
}

Graph::Id Graph::render_rgb(Id xy, const motion::Skeleton* skeleton,
                            const render::RenderStyle* style, int width, int height) {
  const Tensor& vxy = val(xy);
  if (vxy.ndim() != 2 || vxy.dim(1) != 2 || vxy.dim(0) != skeleton->joint_count())
    throw ContractViolation("render_rgb expects xy (J,2) matching the skeleton");
  const int j = vxy.dim(0);
  std::vector<Eigen::Vector2d> points(static_cast<size_t>(j));
  for (int i = 0; i < j; ++i)
    points[static_cast<size_t>(i)] = {vxy.v[static_cast<size_t>(i) * 2 + 0],
                                      vxy.v[static_cast<size_t>(i) * 2 + 1]};
  auto rendered = std::make_shared<render::ScreenRender>(
      render::render_screen(points, *skeleton, *style, width, height, true));
  Tensor out({3, height, width});
  out.v = rendered->image.data;
  Id id = make_node(std::move(out), needs(xy), nullptr);
  nodes_.back().backward_fn = [id, xy, skeleton, style, rendered, j](Graph& g) {
    if (!g.needs(xy)) return;
    const Tensor& go = g.grad(id);
    const Tensor& vxy2 = g.val(xy);
    std::vector<Eigen::Vector2d> points2(static_cast<size_t>(j));
    for (int i = 0; i < j; ++i)
      points2[static_cast<size_t>(i)] = {vxy2.v[static_cast<size_t>(i) * 2 + 0],
                                         vxy2.v[static_cast<size_t>(i) * 2 + 1]};
    std::vector<Eigen::Vector2d> grad_xy;
    render::render_screen_backward(points2, *skeleton, *style, *rendered, go.v, grad_xy);
    Tensor& gxy = g.grad_buffer(xy);
    for (int i = 0; i < j; ++i) {
      gxy.v[static_cast<size_t>(i) * 2 + 0] += grad_xy[static_cast<size_t>(i)].x();
      gxy.v[static_cast<size_t>(i) * 2 + 1] += grad_xy[static_cast<size_t>(i)].y();
    }
  };
  return id;
}

Graph::Id Graph::luminance(Id rgb) {
  const Tensor& v = val(rgb);
  if (v.ndim() != 3 || v.dim(0) != 3) throw ContractViolation("luminance expects (3,H,W)");
  const int h = v.dim(1), w = v.dim(2);
  const int plane = h * w;
  constexpr double kW[3] = {0.299, 0.587, 0.114};
  Tensor out({h, w});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < plane; ++i)
      out.v[static_cast<size_t>(i)] += kW[c] * v.v[static_cast<size_t>(c) * plane + i];
  Id id = make_node(std::move(out), needs(rgb), nullptr);
  nodes_.back().backward_fn = [id, rgb, plane](Graph& g) {
    if (!g.needs(rgb)) return;
    constexpr double kW2[3] = {0.299, 0.587, 0.114};
    const Tensor& go = g.grad(id);
    Tensor& grgb = g.grad_buffer(rgb);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < plane; ++i)
        grgb.v[static_cast<size_t>(c) * plane + i] += kW2[c] * go.v[static_cast<size_t>(i)];
  };
  return id;
}

double finite_difference(const std::function<double()>& eval, std::vector<double*> x,
                         const std::vector<double>& dir, double h) {
  if (x.size() != dir.size()) throw ContractViolation("finite_difference: size mismatch");
  std::vector<double> original(x.size());
  for (size_t i = 0; i < x.size(); ++i) original[i] = *x[i];
  for (size_t i = 0; i < x.size(); ++i) *x[i] = original[i] + h * dir[i];
  const double plus = eval();
  for (size_t i = 0; i < x.size(); ++i) *x[i] = original[i] - h * dir[i];
  const double minus = eval();
  for (size_t i = 0; i < x.size(); ++i) *x[i] = original[i];
  return (plus - minus) / (2.0 * h);
}

}  // namespace anymole::ad
