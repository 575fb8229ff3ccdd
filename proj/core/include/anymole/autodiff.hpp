#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "anymole/render.hpp"
#include "anymole/tensor.hpp"

namespace anymole::ad {

/// Reverse-mode autodiff tape. Ops evaluate eagerly; backward() replays the
/// tape in reverse, accumulating gradients into every node on the path to a
/// scalar loss. A Graph is built per evaluation (training step, loss call)
/// and discarded; parameters live outside the graph and are bound with
/// param().
///
/// The op set is exactly what the models here need: dense/conv layers and
/// activations for the estimator and video backend, quaternion kinematics
/// and the screen-space renderer for the mimicking objective.
class Graph {
 public:
  using Id = int;

  Id constant(Tensor t);
  Id param(Tensor* external);  // trainable leaf; storage owned by the caller

  const Tensor& val(Id id) const;
  const Tensor& grad(Id id) const;  // valid after backward()

  // ---- elementwise and linear algebra ----
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id scale(Id a, double s);
  Id affine_scalar(Id a, double mul, double shift);  // mul * a + shift
  Id tanh_act(Id a);
  Id matmul(Id a, Id b);              // (m,k) x (k,n)
  Id linear(Id x, Id w, Id b);        // x:(n,in), w:(out,in), b:(out) -> (n,out)
  Id conv2d(Id x, Id w, Id b, int pad);  // x:(B,C,H,W), w:(Co,Ci,kh,kw), b:(Co) or -1
  Id softmax_rows(Id a);              // (r,c), rows sum to 1
  Id reshape(Id a, std::vector<int> shape);
  Id concat(const std::vector<Id>& parts, int axis);
  Id slice_row(Id a, int row);        // (r,c) -> (c,)
  Id slice_cols(Id a, int c0, int c1);  // (r,c) -> (r, c1-c0)
  Id stack_rows(const std::vector<Id>& rows);  // n x (c,) -> (n,c)
  Id upsample2x(Id a);                // (B,C,H,W) nearest-neighbor
  Id sum_all(Id a);                   // -> scalar
  Id sq_diff_sum(Id a, Tensor target);  // sum((a - target)^2) -> scalar

  // ---- broadcasting helpers ----
  Id add_channel_bias(Id x, Id v);    // x:(...,C,H,W), v:(C,)
  Id add_spatial_broadcast(Id z, Id m);  // z:(F,C,H,W), m:(C,H,W)
  Id frame_dense(Id z, Id w);         // z:(F,C,H,W), w:(Fo,F) -> (Fo,C,H,W)

  // ---- sampling and geometry ----
  /// Bilinear sample of F:(C,H,W) at xy:(J,2) grid coordinates with border
  /// clamp; differentiable in both F and xy. Out-of-bounds samples bump
  /// border_clamp_count().
  Id bilinear_sample(Id f, Id xy);
  Id affine_rows(Id x, const Eigen::Matrix3d& a, const Eigen::Vector3d& b);  // (J,3)->(J,3)
  Id quat_normalize_rows(Id q);       // (J,4)
  Id quat_mul(Id a, Id b);            // (4,),(4,) -> (4,), layout (w,x,y,z)
  Id quat_rotate(Id q, Id v);         // (4,),(3,) -> (3,)

  // ---- rendering ----
  /// Differentiable wrapper around render::render_screen; skeleton/style
  /// must outlive the graph.
  Id render_rgb(Id xy, const motion::Skeleton* skeleton, const render::RenderStyle* style,
                int width, int height);
  Id luminance(Id rgb);  // (3,H,W) -> (H,W), Rec.601 weights

  void backward(Id loss);
  long border_clamp_count() const { return border_clamps_; }
  int node_count() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_live = false;
    Tensor* external = nullptr;
    std::function<void(Graph&)> backward_fn;
  };

  Id make_node(Tensor value, bool requires_grad, std::function<void(Graph&)> backward_fn);
  Tensor& grad_buffer(Id id);
  bool needs(Id id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  std::vector<Node> nodes_;
  long border_clamps_ = 0;
};

/// Central finite-difference directional derivative used by the gradient
/// tests: perturbs `x` in place along `dir` with step h.
double finite_difference(const std::function<double()>& eval, std::vector<double*> x,
                         const std::vector<double>& dir, double h);

}  // namespace anymole::ad
