#include "anymole/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "anymole/errors.hpp"
#include "anymole/log.hpp"

namespace anymole::estimator {

using nlohmann::json;

// ------------------------------------------------------------- provider

namespace {

// Orthonormal rows via Gram-Schmidt on seeded Gaussian draws.
ad::Tensor orthonormal_rows(int rows, int cols, Rng& rng) {
  if (rows > cols) throw ContractViolation("orthonormal_rows: rows must not exceed cols");
  ad::Tensor m({rows, cols});
  for (int r = 0; r < rows; ++r) {
    std::vector<double> v(static_cast<size_t>(cols));
    for (auto& x : v) x = rng.normal();
    for (int p = 0; p < r; ++p) {
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += v[static_cast<size_t>(c)] * m.v[static_cast<size_t>(p * cols + c)];
      for (int c = 0; c < cols; ++c) v[static_cast<size_t>(c)] -= dot * m.v[static_cast<size_t>(p * cols + c)];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-9) throw ContractViolation("orthonormal_rows: degenerate draw");
    for (int c = 0; c < cols; ++c) m.v[static_cast<size_t>(r * cols + c)] = v[static_cast<size_t>(c)] / norm;
  }
  return m;
}

}  // namespace

SyntheticPatchProvider::SyntheticPatchProvider(int patch, int channels, std::uint64_t seed)
    : patch_(patch), channels_(channels), seed_(seed) {
  Rng rng(seed);
  Rng rng2d = rng.fork(1), rng3d = rng.fork(2);
  proj2d_ = orthonormal_rows(channels, patch * patch * 3, rng2d);
  proj3d_ = orthonormal_rows(channels, patch * patch * 3, rng3d);
}

std::pair<FeatureMap, FeatureMap> SyntheticPatchProvider::provide(const img::Image& image) const {
  if (image.channels != 3) throw ContractViolation("synthetic provider expects RGB images");
  if (image.width % patch_ != 0 || image.height % patch_ != 0)
    throw ContractViolation("synthetic provider: image sides must be multiples of the patch");
  const int gw = image.width / patch_, gh = image.height / patch_;
  const int dim = patch_ * patch_ * 3;
  FeatureMap f2d{ad::Tensor({channels_, gh, gw}), FeatureSource::k2D};
  FeatureMap f3d{ad::Tensor({channels_, gh, gw}), FeatureSource::k3DAware};
  std::vector<double> v(static_cast<size_t>(dim));
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      int k = 0;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < patch_; ++y)
          for (int x = 0; x < patch_; ++x)
            v[static_cast<size_t>(k++)] = image.at(c, gy * patch_ + y, gx * patch_ + x);
      for (int ch = 0; ch < channels_; ++ch) {
        double a2 = 0.0, a3 = 0.0;
        for (int i = 0; i < dim; ++i) {
          a2 += proj2d_.v[static_cast<size_t>(ch * dim + i)] * v[static_cast<size_t>(i)];
          a3 += proj3d_.v[static_cast<size_t>(ch * dim + i)] * v[static_cast<size_t>(i)];
        }
        f2d.values.v[static_cast<size_t>((ch * gh + gy) * gw + gx)] = a2;
        f3d.values.v[static_cast<size_t>((ch * gh + gy) * gw + gx)] = a3;
      }
    }
  return {std::move(f2d), std::move(f3d)};
}

std::string SyntheticPatchProvider::id() const {
  return "synthetic-patch-p" + std::to_string(patch_) + "-c" + std::to_string(channels_) + "-s" +
         std::to_string(seed_);
}

// ----------------------------------------------------------------- model

EstimatorModel::EstimatorModel(const EstimatorConfig& cfg) : cfg_(cfg) {
  if (cfg.image_width % cfg.provider_patch != 0 || cfg.image_height % cfg.provider_patch != 0)
    throw ContractViolation("estimator: image sides must be multiples of the provider patch");
  Rng rng(cfg.init_seed);
  const int cp = cfg.provider_channels, c = cfg.merged_channels, nj = cfg.joints;
  const int hidden = cfg.depth_hidden;
  auto conv_init = [&rng](int co, int ci, int k) {
    return ad::Tensor::randn({co, ci, k, k}, rng, 1.0 / std::sqrt(static_cast<double>(ci * k * k)));
  };
  params_.push_back({"merger.f2d_w", conv_init(cp, cp, 3)});
  params_.push_back({"merger.f2d_b", ad::Tensor({cp}, 0.0)});
  params_.push_back({"merger.f3d_w", conv_init(cp, cp, 3)});
  params_.push_back({"merger.f3d_b", ad::Tensor({cp}, 0.0)});
  params_.push_back({"merger.fuse_w", conv_init(c, 2 * cp, 3)});
  params_.push_back({"merger.fuse_b", ad::Tensor({c}, 0.0)});
  params_.push_back({"decoder.base_w", conv_init(c, c, 3)});
  params_.push_back({"decoder.base_b", ad::Tensor({c}, 0.0)});
  params_.push_back({"decoder.res1_w", conv_init(c, c, 3)});
  params_.push_back({"decoder.res1_b", ad::Tensor({c}, 0.0)});
  // Residual output block starts at exactly zero so the fresh decoder is
  // bitwise the plain path.
  params_.push_back({"decoder.res2_w", ad::Tensor({c, c, 3, 3}, 0.0)});
  params_.push_back({"decoder.res2_b", ad::Tensor({c}, 0.0)});
  params_.push_back({"decoder.head_w", conv_init(nj, c, 3)});
  params_.push_back({"decoder.head_b", ad::Tensor({nj}, 0.0)});
  ad::Tensor embed({nj, 1});
  for (int j = 0; j < nj; ++j)
    embed.v[static_cast<size_t>(j)] = static_cast<double>(j) / static_cast<double>(nj);
  params_.push_back({"embed.joint", std::move(embed)});
  params_.push_back({"depth.l1_w", ad::Tensor::randn({hidden, c + 3}, rng,
                                                     1.0 / std::sqrt(static_cast<double>(c + 3)))});
  params_.push_back({"depth.l1_b", ad::Tensor({hidden}, 0.0)});
  params_.push_back({"depth.l2_w", ad::Tensor::randn({hidden, hidden}, rng,
                                                     1.0 / std::sqrt(static_cast<double>(hidden)))});
  params_.push_back({"depth.l2_b", ad::Tensor({hidden}, 0.0)});
  // Zero-initialized head: depth predictions start at mid-range (NDC 0).
  params_.push_back({"depth.l3_w", ad::Tensor({1, hidden}, 0.0)});
  params_.push_back({"depth.l3_b", ad::Tensor({1}, 0.0)});
}

ad::Tensor& EstimatorModel::tensor(const std::string& name) {
  for (auto& nt : params_)
    if (nt.name == name) return nt.tensor;
  throw ContractViolation("estimator has no tensor \"" + name + "\"");
}

ad::Graph::Id EstimatorModel::Bindings::id(const EstimatorModel& m, const std::string& name) const {
  for (size_t i = 0; i < m.params().size(); ++i)
    if (m.params()[i].name == name) return ids[i];
  throw ContractViolation("estimator binding missing \"" + name + "\"");
}

EstimatorModel::Bindings EstimatorModel::bind(ad::Graph& g, bool train) {
  Bindings binds;
  binds.ids.reserve(params_.size());
  for (auto& nt : params_) {
    if (train) {
      ad::Graph::Id id = g.param(&nt.tensor);
      binds.ids.push_back(id);
      binds.trainable.push_back({&nt.tensor, id});
    } else {
      binds.ids.push_back(g.constant(nt.tensor));
    }
  }
  return binds;
}

namespace {

// Pixel coordinate of heatmap cell g: centers aligned, so equal grid and
// image sizes give px == g exactly.
double grid_to_pixel(int g, int grid, int pixels) {
  const double s = static_cast<double>(pixels) / grid;
  return (g + 0.5) * s - 0.5;
}

ad::Tensor coord_table(int grid_w, int grid_h, int image_w, int image_h) {
  ad::Tensor coords({grid_w * grid_h, 2});
  for (int gy = 0; gy < grid_h; ++gy)
    for (int gx = 0; gx < grid_w; ++gx) {
      coords.v[static_cast<size_t>((gy * grid_w + gx) * 2 + 0)] =
          grid_to_pixel(gx, grid_w, image_w);
      coords.v[static_cast<size_t>((gy * grid_w + gx) * 2 + 1)] =
          grid_to_pixel(gy, grid_h, image_h);
    }
  return coords;
}

}  // namespace

EstimatorModel::Forward EstimatorModel::forward(ad::Graph& g, const Bindings& binds,
                                                ad::Graph::Id f2d, ad::Graph::Id f3d) {
  const int cp = cfg_.provider_channels, c = cfg_.merged_channels, nj = cfg_.joints;
  const int fw = cfg_.feature_width(), fh = cfg_.feature_height();
  const int hw = cfg_.heatmap_width(), hh = cfg_.heatmap_height();
  const ad::Tensor& v2 = g.val(f2d);
  const ad::Tensor& v3 = g.val(f3d);
  if (v2.ndim() != 3 || v3.ndim() != 3 || v2.dim(1) != v3.dim(1) || v2.dim(2) != v3.dim(2))
    throw ContractViolation("estimator forward: feature maps must share spatial dims");
  if (v2.dim(0) != cp || v2.dim(1) != fh || v2.dim(2) != fw)
    throw ContractViolation("estimator forward: feature shape mismatch with config");

  auto p = [&](const char* name) { return binds.id(*this, name); };

  // Feature merger: light convolution on each source, concat, fuse.
  ad::Graph::Id a2 = g.reshape(f2d, {1, cp, fh, fw});
  ad::Graph::Id a3 = g.reshape(f3d, {1, cp, fh, fw});
  a2 = g.tanh_act(g.conv2d(a2, p("merger.f2d_w"), p("merger.f2d_b"), 1));
  a3 = g.tanh_act(g.conv2d(a3, p("merger.f3d_w"), p("merger.f3d_b"), 1));
  ad::Graph::Id fused = g.concat({a2, a3}, 1);
  fused = g.tanh_act(g.conv2d(fused, p("merger.fuse_w"), p("merger.fuse_b"), 1));

  // Heatmap decoder: base conv plus zero-initialized residual block.
  ad::Graph::Id base = g.tanh_act(g.conv2d(fused, p("decoder.base_w"), p("decoder.base_b"), 1));
  ad::Graph::Id res =
      g.conv2d(g.tanh_act(g.conv2d(base, p("decoder.res1_w"), p("decoder.res1_b"), 1)),
               p("decoder.res2_w"), p("decoder.res2_b"), 1);
  ad::Graph::Id up = g.upsample2x(g.add(base, res));
  ad::Graph::Id heat = g.conv2d(up, p("decoder.head_w"), p("decoder.head_b"), 1);  // (1,Nj,hh,hw)

  // Spatial soft-argmax in pixel units.
  ad::Graph::Id flat = g.reshape(heat, {nj, hh * hw});
  ad::Graph::Id soft = g.softmax_rows(flat);
  ad::Graph::Id joints_px =
      g.matmul(soft, g.constant(coord_table(hw, hh, cfg_.image_width, cfg_.image_height)));

  // Per-joint feature sampling at the estimated 2-D joints.
  const double to_grid = 1.0 / cfg_.provider_patch;
  ad::Graph::Id xy_grid = g.affine_scalar(joints_px, to_grid, 0.5 * to_grid - 0.5);
  ad::Graph::Id merged3 = g.reshape(fused, {c, fh, fw});
  ad::Graph::Id sampled = g.bilinear_sample(merged3, xy_grid);  // (Nj, C)

  // Depth MLP over [feature | x | y | joint-index embedding].
  ad::Graph::Id xn = g.affine_scalar(g.slice_cols(joints_px, 0, 1), 2.0 / cfg_.image_width,
                                     1.0 / cfg_.image_width - 1.0);
  ad::Graph::Id yn = g.affine_scalar(g.slice_cols(joints_px, 1, 2), 2.0 / cfg_.image_height,
                                     1.0 / cfg_.image_height - 1.0);
  ad::Graph::Id depth_in = g.concat({sampled, xn, yn, p("embed.joint")}, 1);
  ad::Graph::Id d1 = g.tanh_act(g.linear(depth_in, p("depth.l1_w"), p("depth.l1_b")));
  ad::Graph::Id d2 = g.tanh_act(g.linear(d1, p("depth.l2_w"), p("depth.l2_b")));
  ad::Graph::Id ndc = g.linear(d2, p("depth.l3_w"), p("depth.l3_b"));  // (Nj,1)
  ad::Graph::Id depth_px = g.scale(ndc, 0.5 * cfg_.image_height);

  Forward fwd;
  fwd.merged = merged3;
  fwd.heatmaps = heat;
  fwd.joints_2d = joints_px;
  fwd.depth_px = depth_px;
  fwd.screen = g.concat({joints_px, depth_px}, 1);
  return fwd;
}

FeatureMap EstimatorModel::merge_features(const FeatureMap& f2d, const FeatureMap& f3d) {
  if (f2d.values.ndim() != 3 || !f2d.values.same_shape(f3d.values))
    throw ContractViolation("merge_features: feature maps must share dimensions");
  ad::Graph g;
  Bindings binds = bind(g, false);
  const int cp = cfg_.provider_channels;
  const int fh = f2d.values.dim(1), fw = f2d.values.dim(2);
  ad::Graph::Id a2 = g.reshape(g.constant(f2d.values), {1, cp, fh, fw});
  ad::Graph::Id a3 = g.reshape(g.constant(f3d.values), {1, cp, fh, fw});
  a2 = g.tanh_act(g.conv2d(a2, binds.id(*this, "merger.f2d_w"), binds.id(*this, "merger.f2d_b"), 1));
  a3 = g.tanh_act(g.conv2d(a3, binds.id(*this, "merger.f3d_w"), binds.id(*this, "merger.f3d_b"), 1));
  ad::Graph::Id fused = g.concat({a2, a3}, 1);
  fused = g.tanh_act(
      g.conv2d(fused, binds.id(*this, "merger.fuse_w"), binds.id(*this, "merger.fuse_b"), 1));
  FeatureMap out{g.val(fused), FeatureSource::kMerged};
  out.values.shape = {cfg_.merged_channels, fh, fw};
  return out;
}

ad::Tensor EstimatorModel::decode_heatmaps(const FeatureMap& merged) {
  if (merged.values.ndim() != 3) throw ContractViolation("decode_heatmaps: expects (C,h,w)");
  ad::Graph g;
  Bindings binds = bind(g, false);
  const int c = cfg_.merged_channels;
  const int fh = merged.values.dim(1), fw = merged.values.dim(2);
  ad::Graph::Id fused = g.reshape(g.constant(merged.values), {1, c, fh, fw});
  ad::Graph::Id base = g.tanh_act(
      g.conv2d(fused, binds.id(*this, "decoder.base_w"), binds.id(*this, "decoder.base_b"), 1));
  ad::Graph::Id res = g.conv2d(
      g.tanh_act(g.conv2d(base, binds.id(*this, "decoder.res1_w"),
                          binds.id(*this, "decoder.res1_b"), 1)),
      binds.id(*this, "decoder.res2_w"), binds.id(*this, "decoder.res2_b"), 1);
  ad::Graph::Id up = g.upsample2x(g.add(base, res));
  ad::Graph::Id heat =
      g.conv2d(up, binds.id(*this, "decoder.head_w"), binds.id(*this, "decoder.head_b"), 1);
  return g.val(heat);
}

ad::Tensor soft_argmax(const ad::Tensor& heatmaps, int image_width, int image_height) {
  if (heatmaps.ndim() != 4) throw ContractViolation("soft_argmax expects (B,N_j,h,w)");
  for (double x : heatmaps.v)
    if (!std::isfinite(x)) throw ContractViolation("soft_argmax: non-finite heatmap");
  const int b = heatmaps.dim(0), nj = heatmaps.dim(1), h = heatmaps.dim(2), w = heatmaps.dim(3);
  ad::Graph g;
  ad::Graph::Id flat = g.reshape(g.constant(heatmaps), {b * nj, h * w});
  ad::Graph::Id soft = g.softmax_rows(flat);
  ad::Graph::Id px = g.matmul(soft, g.constant(coord_table(w, h, image_width, image_height)));
  return g.val(px);
}

ad::Tensor EstimatorModel::heatmaps_to_joints(const ad::Tensor& heatmaps) const {
  return soft_argmax(heatmaps, cfg_.image_width, cfg_.image_height);
}

ad::Tensor EstimatorModel::sample_feature(const FeatureMap& f, const ad::Tensor& xy_px,
                                          long* clamped) const {
  if (xy_px.ndim() != 2 || xy_px.dim(1) != 2)
    throw ContractViolation("sample_feature: xy must be (J,2)");
  ad::Graph g;
  const double to_grid = 1.0 / cfg_.provider_patch;
  ad::Graph::Id xy = g.affine_scalar(g.constant(xy_px), to_grid, 0.5 * to_grid - 0.5);
  ad::Graph::Id sampled = g.bilinear_sample(g.constant(f.values), xy);
  if (clamped) *clamped = g.border_clamp_count();
  return g.val(sampled);
}

ad::Tensor EstimatorModel::estimate_depth(const ad::Tensor& f_processed,
                                          const ad::Tensor& j_processed2d) {
  if (f_processed.ndim() != 2 || j_processed2d.ndim() != 2 || j_processed2d.dim(1) != 3)
    throw ContractViolation("estimate_depth: expects (rows,C) features and (rows,3) joints");
  if (f_processed.dim(0) != j_processed2d.dim(0))
    throw ContractViolation("estimate_depth: row count mismatch between features and joints");
  ad::Graph g;
  Bindings binds = bind(g, false);
  ad::Graph::Id depth_in = g.concat({g.constant(f_processed), g.constant(j_processed2d)}, 1);
  ad::Graph::Id d1 = g.tanh_act(
      g.linear(depth_in, binds.id(*this, "depth.l1_w"), binds.id(*this, "depth.l1_b")));
  ad::Graph::Id d2 =
      g.tanh_act(g.linear(d1, binds.id(*this, "depth.l2_w"), binds.id(*this, "depth.l2_b")));
  ad::Graph::Id ndc = g.linear(d2, binds.id(*this, "depth.l3_w"), binds.id(*this, "depth.l3_b"));
  ad::Tensor out({f_processed.dim(0)});
  const ad::Tensor& v = g.val(ndc);
  for (int i = 0; i < out.numel(); ++i) out.v[static_cast<size_t>(i)] = v.v[static_cast<size_t>(i)];
  return out;
}

JointEstimate EstimatorModel::estimate(const img::Image& image, const FeatureProvider& provider) {
  if (image.width != cfg_.image_width || image.height != cfg_.image_height)
    throw ContractViolation("estimate: image resolution mismatch");
  auto [f2d, f3d] = provider.provide(image);
  ad::Graph g;
  Bindings binds = bind(g, false);
  Forward fwd = forward(g, binds, g.constant(f2d.values), g.constant(f3d.values));
  const ad::Tensor& screen = g.val(fwd.screen);
  JointEstimate est;
  est.joints.resize(static_cast<size_t>(cfg_.joints));
  for (int j = 0; j < cfg_.joints; ++j) {
    est.joints[static_cast<size_t>(j)].x = screen.v[static_cast<size_t>(j * 3 + 0)];
    est.joints[static_cast<size_t>(j)].y = screen.v[static_cast<size_t>(j * 3 + 1)];
    est.joints[static_cast<size_t>(j)].depth = screen.v[static_cast<size_t>(j * 3 + 2)];
  }
  return est;
}

// ----------------------------------------------------------------- train

TrainTrace train_estimator(EstimatorModel& model, const FeatureProvider& provider,
                           const std::vector<clips::EstimatorSample>& dataset,
                           const ImageLookup& image_lookup, const TrainConfig& cfg) {
  if (dataset.empty()) throw ContractViolation("train_estimator: empty dataset");
  const auto& mc = model.config();

  // Cache features and targets; drop samples whose projected joints leave
  // the image (their soft-argmax targets would be unreachable).
  struct Prepared {
    ad::Tensor f2d, f3d, target;  // target (N_j, 3)
    int multiplicity = 1;
  };
  TrainTrace trace;
  std::vector<Prepared> prepared;
  for (const auto& sample : dataset) {
    bool inside = true;
    for (const auto& sj : sample.joints_screen)
      inside = inside && sj.x >= 0.0 && sj.x < mc.image_width && sj.y >= 0.0 &&
               sj.y < mc.image_height;
    if (!inside) {
      ++trace.excluded_samples;
      log::warn("train_estimator: sample " + sample.view + "/" +
                std::to_string(sample.frame_index) + " projects outside the image; excluded");
      continue;
    }
    if (static_cast<int>(sample.joints_screen.size()) != mc.joints)
      throw ContractViolation("train_estimator: sample joint count mismatch");
    Prepared p;
    auto [f2d, f3d] = provider.provide(image_lookup(sample));
    p.f2d = std::move(f2d.values);
    p.f3d = std::move(f3d.values);
    p.target = ad::Tensor({mc.joints, 3});
    for (int j = 0; j < mc.joints; ++j) {
      p.target.v[static_cast<size_t>(j * 3 + 0)] = sample.joints_screen[static_cast<size_t>(j)].x;
      p.target.v[static_cast<size_t>(j * 3 + 1)] = sample.joints_screen[static_cast<size_t>(j)].y;
      p.target.v[static_cast<size_t>(j * 3 + 2)] =
          sample.joints_screen[static_cast<size_t>(j)].depth;
    }
    p.multiplicity = sample.multiplicity;
    prepared.push_back(std::move(p));
  }
  if (prepared.empty()) throw ContractViolation("train_estimator: no usable samples");

  std::vector<int> epoch;
  for (size_t i = 0; i < prepared.size(); ++i)
    for (int m = 0; m < prepared[i].multiplicity; ++m) epoch.push_back(static_cast<int>(i));

  Rng rng(cfg.seed);
  nn::Adam opt({cfg.learning_rate, 0.9, 0.999, 1e-8});
  size_t cursor = epoch.size();  // forces an initial shuffle

  for (int step = 0; step < cfg.steps; ++step) {
    ad::Graph g;
    auto binds = model.bind(g, true);
    std::vector<ad::Graph::Id> losses;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= epoch.size()) {
        for (size_t i = epoch.size(); i > 1; --i)
          std::swap(epoch[i - 1],
                    epoch[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        cursor = 0;
      }
      const Prepared& item = prepared[static_cast<size_t>(epoch[cursor++])];
      auto fwd = model.forward(g, binds, g.constant(item.f2d), g.constant(item.f3d));
      losses.push_back(g.scale(g.sq_diff_sum(fwd.screen, item.target),
                               1.0 / static_cast<double>(mc.joints * 3)));
    }
    ad::Graph::Id loss = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) loss = g.add(loss, losses[i]);
    loss = g.scale(loss, 1.0 / static_cast<double>(losses.size()));
    g.backward(loss);
    trace.losses.push_back(g.val(loss).v[0]);

    std::vector<ad::Tensor*> params;
    std::vector<const ad::Tensor*> grads;
    for (auto& [tensor, id] : binds.trainable) {
      params.push_back(tensor);
      grads.push_back(&g.grad(id));
    }
    opt.step(params, grads);
    ++trace.steps_run;
  }
  return trace;
}

void save_estimator(const EstimatorModel& model, const std::string& provider_id,
                    const TrainConfig& cfg, const std::filesystem::path& binary_path,
                    const std::filesystem::path& sidecar_path) {
  nn::save_tensors(model.params(), binary_path);
  const auto& mc = model.config();
  json j;
  j["config"] = {{"image_width", mc.image_width},
                 {"image_height", mc.image_height},
                 {"joints", mc.joints},
                 {"provider_patch", mc.provider_patch},
                 {"provider_channels", mc.provider_channels},
                 {"merged_channels", mc.merged_channels},
                 {"depth_hidden", mc.depth_hidden},
                 {"init_seed", mc.init_seed},
                 {"heatmap", {mc.heatmap_width(), mc.heatmap_height()}}};
  j["provider"] = provider_id;
  j["train"] = {{"steps", cfg.steps},
                {"batch_size", cfg.batch_size},
                {"learning_rate", cfg.learning_rate},
                {"views", cfg.views},
                {"keyframe_weight", cfg.keyframe_weight},
                {"seed", cfg.seed}};
  std::ofstream out(sidecar_path);
  if (!out) throw IoError("cannot write estimator sidecar: " + sidecar_path.string());
  out << j.dump(1) << "\n";
}

EstimatorModel load_estimator(const std::filesystem::path& binary_path,
                              const std::filesystem::path& sidecar_path) {
  std::ifstream in(sidecar_path);
  if (!in) throw IoError("cannot read estimator sidecar: " + sidecar_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("estimator sidecar " + sidecar_path.string() + ": " + e.what());
  }
  EstimatorConfig cfg;
  const auto& jc = j.at("config");
  cfg.image_width = jc.at("image_width").get<int>();
  cfg.image_height = jc.at("image_height").get<int>();
  cfg.joints = jc.at("joints").get<int>();
  cfg.provider_patch = jc.at("provider_patch").get<int>();
  cfg.provider_channels = jc.at("provider_channels").get<int>();
  cfg.merged_channels = jc.at("merged_channels").get<int>();
  cfg.depth_hidden = jc.at("depth_hidden").get<int>();
  cfg.init_seed = jc.at("init_seed").get<std::uint64_t>();

  EstimatorModel model(cfg);
  const auto tensors = nn::load_tensors(binary_path);
  for (auto& nt : model.params()) {
    const ad::Tensor& stored = nn::find_tensor(tensors, nt.name);
    if (!stored.same_shape(nt.tensor))
      throw ParseError("estimator tensor shape mismatch for " + nt.name);
    nt.tensor = stored;
  }
  return model;
}

}  // namespace anymole::estimator
