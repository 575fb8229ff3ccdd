#include "anymole/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "anymole/errors.hpp"

namespace anymole::diffusion {

using nlohmann::json;

void LatentVideo::validate() const {
  if (values.ndim() != 4 || values.dim(0) != 16)
    throw ContractViolation("latent video must have shape (16, C, h, w)");
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > t_max) throw ContractViolation("timestep out of schedule range");
  return 1.0 - static_cast<double>(t) / static_cast<double>(t_max + 1);
}

// ------------------------------------------------------------------ codec

LatentCodec::LatentCodec(int width, int height) : width_(width), height_(height) {
  if (width % 4 != 0 || height % 4 != 0)
    throw ContractViolation("latent codec requires sides divisible by 4");
  // 1-D orthonormal Haar on 4 samples; the 2-D basis is its Kronecker square.
  const double s = 1.0 / std::sqrt(2.0);
  const double h4[4][4] = {{0.5, 0.5, 0.5, 0.5},
                           {0.5, 0.5, -0.5, -0.5},
                           {s, -s, 0.0, 0.0},
                           {0.0, 0.0, s, -s}};
  for (int u = 0; u < 4; ++u)
    for (int vv = 0; vv < 4; ++vv)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) basis_[u * 4 + vv][y * 4 + x] = h4[u][y] * h4[vv][x];
}

ad::Tensor LatentCodec::encode(const img::Image& frame) const {
  if (frame.width != width_ || frame.height != height_ || frame.channels != 3)
    throw ContractViolation("codec: frame resolution/channels mismatch");
  const int lw = latent_width(), lh = latent_height();
  ad::Tensor z({48, lh, lw});
  for (int c = 0; c < 3; ++c)
    for (int by = 0; by < lh; ++by)
      for (int bx = 0; bx < lw; ++bx) {
        double block[16];
        for (int y = 0; y < 4; ++y)
          for (int x = 0; x < 4; ++x) block[y * 4 + x] = frame.at(c, by * 4 + y, bx * 4 + x);
        for (int k = 0; k < 16; ++k) {
          double acc = 0.0;
          for (int i = 0; i < 16; ++i) acc += basis_[k][i] * block[i];
          z.v[static_cast<size_t>(((c * 16 + k) * lh + by) * lw + bx)] = acc;
        }
      }
  return z;
}

img::Image LatentCodec::decode(const ad::Tensor& latent) const {
  const int lw = latent_width(), lh = latent_height();
  if (latent.ndim() != 3 || latent.dim(0) != 48 || latent.dim(1) != lh || latent.dim(2) != lw)
    throw ContractViolation("codec: latent shape mismatch");
  img::Image frame = img::Image::zeros(width_, height_, 3);
  for (int c = 0; c < 3; ++c)
    for (int by = 0; by < lh; ++by)
      for (int bx = 0; bx < lw; ++bx) {
        double coeff[16];
        for (int k = 0; k < 16; ++k)
          coeff[k] = latent.v[static_cast<size_t>(((c * 16 + k) * lh + by) * lw + bx)];
        for (int y = 0; y < 4; ++y)
          for (int x = 0; x < 4; ++x) {
            double acc = 0.0;
            for (int k = 0; k < 16; ++k) acc += basis_[k][y * 4 + x] * coeff[k];  // transpose
            frame.at(c, by * 4 + y, bx * 4 + x) = acc;
          }
      }
  return frame;
}

std::pair<ad::Tensor, ad::Tensor> forward_noise(const ad::Tensor& z0, int t,
                                                const NoiseSchedule& schedule, Rng& rng) {
  const double ab = schedule.alpha_bar(t);  // validates t
  ad::Tensor eps(z0.shape, 0.0);
  if (t == 0) return {z0, eps};  // alpha_bar(0) = 1: z unchanged, noise unused
  for (double& e : eps.v) e = rng.normal();
  ad::Tensor zt = z0;
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  for (int i = 0; i < zt.numel(); ++i)
    zt.v[static_cast<size_t>(i)] = a * z0.v[static_cast<size_t>(i)] + b * eps.v[static_cast<size_t>(i)];
  return {zt, eps};
}

// ------------------------------------------------------------------ model

const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kSpatial: return "spatial";
    case ParamGroup::kTemporal: return "temporal";
    case ParamGroup::kImageProjector: return "image_projector";
    case ParamGroup::kFpsEmbedding: return "fps_embedding";
  }
  return "?";
}

ToyVideoModel::ToyVideoModel(const ToyModelConfig& cfg)
    : cfg_(cfg), schedule_{cfg.t_max}, codec_(cfg.width, cfg.height) {
  Rng rng(cfg.init_seed);
  const int c = codec_.latent_channels();
  const double ws = 0.25 / std::sqrt(static_cast<double>(c));
  spatial_.push_back({"spatial.w1", ad::Tensor::randn({c, c + 2, 1, 1}, rng, ws)});
  spatial_.push_back({"spatial.b1", ad::Tensor({c}, 0.0)});
  spatial_.push_back({"spatial.w2", ad::Tensor::randn({c, c, 1, 1}, rng, ws)});
  spatial_.push_back({"spatial.b2", ad::Tensor({c}, 0.0)});
  // Per-frame output bias: the capacity that lets adaptation memorize the
  // rendered scene content frame by frame.
  spatial_.push_back(
      {"spatial.frame_bias",
       ad::Tensor({cfg.frames, c, codec_.latent_height(), codec_.latent_width()}, 0.0)});
  temporal_.push_back(
      {"temporal.frame_mix", ad::Tensor::randn({cfg.frames, cfg.frames}, rng, 0.2)});
  projector_.push_back({"image_projector.w", ad::Tensor::randn({c, 2 * c, 1, 1}, rng, ws)});
  projector_.push_back({"image_projector.b", ad::Tensor({c}, 0.0)});
  fps_.push_back({"fps_embedding.table",
                  ad::Tensor::randn({static_cast<int>(cfg.fps_table.size()), c}, rng, 0.1)});
}

std::vector<nn::NamedTensor>& ToyVideoModel::group(ParamGroup g) {
  switch (g) {
    case ParamGroup::kSpatial: return spatial_;
    case ParamGroup::kTemporal: return temporal_;
    case ParamGroup::kImageProjector: return projector_;
    case ParamGroup::kFpsEmbedding: return fps_;
  }
  throw ContractViolation("unknown parameter group");
}

const std::vector<nn::NamedTensor>& ToyVideoModel::group(ParamGroup g) const {
  return const_cast<ToyVideoModel*>(this)->group(g);
}

std::vector<std::string> ToyVideoModel::all_parameter_names() const {
  std::vector<std::string> names;
  for (auto g : {ParamGroup::kSpatial, ParamGroup::kTemporal, ParamGroup::kImageProjector,
                 ParamGroup::kFpsEmbedding})
    for (const auto& nt : group(g)) names.push_back(nt.name);
  return names;
}

bool ToyVideoModel::supports_fps(int fps) const {
  return std::find(cfg_.fps_table.begin(), cfg_.fps_table.end(), fps) != cfg_.fps_table.end();
}

namespace {

double text_feature(const std::string& text) {
  // FNV-1a folded into [0, 1); the fixed scene prompt enters as a constant
  // input channel rather than learned parameters.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace

ToyVideoModel::Bindings ToyVideoModel::bind(ad::Graph& g, bool train) {
  Bindings binds;
  auto one = [&](std::vector<nn::NamedTensor>& set, size_t i, bool group_trains) {
    if (train && group_trains) {
      ad::Graph::Id id = g.param(&set[i].tensor);
      binds.trainable.push_back({&set[i].tensor, id});
      return id;
    }
    return g.constant(set[i].tensor);
  };
  binds.w1 = one(spatial_, 0, true);
  binds.b1 = one(spatial_, 1, true);
  binds.w2 = one(spatial_, 2, true);
  binds.b2 = one(spatial_, 3, true);
  binds.frame_bias = one(spatial_, 4, true);
  binds.frame_mix = one(temporal_, 0, false);
  binds.proj_w = one(projector_, 0, true);
  binds.proj_b = one(projector_, 1, true);
  return binds;
}

ad::Graph::Id ToyVideoModel::predict_clean(ad::Graph& g, const Bindings& binds,
                                           ad::Graph::Id z_t, const Conditioning& cond) {
  if (!supports_fps(cond.fps))
    throw ConfigError("fps " + std::to_string(cond.fps) + " not in the supported embedding set");
  const int c = codec_.latent_channels();
  const int lh = codec_.latent_height(), lw = codec_.latent_width();
  const ad::Tensor& vz = g.val(z_t);
  if (vz.ndim() != 4 || vz.dim(0) != cfg_.frames || vz.dim(1) != c || vz.dim(2) != lh ||
      vz.dim(3) != lw)
    throw ContractViolation("predict_clean: latent shape mismatch");

  // Frozen fps table: the row for cond.fps enters as a constant vector.
  const auto& table = fps_[0].tensor;
  const int row = static_cast<int>(
      std::find(cfg_.fps_table.begin(), cfg_.fps_table.end(), cond.fps) - cfg_.fps_table.begin());
  ad::Tensor fps_vec({c});
  std::copy_n(&table.v[static_cast<size_t>(row) * c], c, fps_vec.v.data());
  const ad::Graph::Id fps_id = g.constant(std::move(fps_vec));

  // Aux channels: normalized timestep and the text hash.
  ad::Tensor aux({cfg_.frames, 2, lh, lw});
  const double tn = static_cast<double>(cond.timestep) / static_cast<double>(cfg_.t_max);
  const double tx = text_feature(cond.text);
  for (int f = 0; f < cfg_.frames; ++f)
    for (int i = 0; i < lh * lw; ++i) {
      aux.v[static_cast<size_t>((f * 2 + 0) * lh * lw + i)] = tn;
      aux.v[static_cast<size_t>((f * 2 + 1) * lh * lw + i)] = tx;
    }

  const ad::Graph::Id x = g.concat({z_t, g.constant(std::move(aux))}, 1);
  const ad::Graph::Id s1 = g.conv2d(x, binds.w1, binds.b1, 0);

  const ad::Graph::Id e0 = g.constant(codec_.encode(cond.first_frame));
  const ad::Graph::Id en = g.constant(codec_.encode(cond.last_frame));
  ad::Graph::Id pcat = g.concat({e0, en}, 0);
  pcat = g.reshape(pcat, {1, 2 * c, lh, lw});
  ad::Graph::Id proj = g.conv2d(pcat, binds.proj_w, binds.proj_b, 0);
  proj = g.reshape(proj, {c, lh, lw});

  ad::Graph::Id h1 = g.add_spatial_broadcast(s1, proj);
  h1 = g.add_channel_bias(h1, fps_id);
  h1 = g.tanh_act(h1);
  const ad::Graph::Id h2 = g.tanh_act(g.add(h1, g.frame_dense(h1, binds.frame_mix)));
  return g.add(g.conv2d(h2, binds.w2, binds.b2, 0), binds.frame_bias);
}

LatentVideo ToyVideoModel::denoise_step(const LatentVideo& z_t, const Conditioning& cond) {
  z_t.validate();
  const int t = cond.timestep;
  if (t < 1 || t > cfg_.t_max) throw ContractViolation("denoise_step requires 1 <= t <= t_max");
  ad::Graph g;
  const Bindings binds = bind(g, false);
  const ad::Graph::Id zin = g.constant(z_t.values);
  const ad::Graph::Id clean = predict_clean(g, binds, zin, cond);
  const ad::Tensor& z0_hat = g.val(clean);

  const double ab_t = schedule_.alpha_bar(t);
  const double ab_prev = schedule_.alpha_bar(t - 1);
  const double inv = 1.0 / std::sqrt(1.0 - ab_t);
  LatentVideo out;
  out.noise_level = t - 1;
  out.values = ad::Tensor(z_t.values.shape);
  for (int i = 0; i < out.values.numel(); ++i) {
    const size_t k = static_cast<size_t>(i);
    const double eps_hat = (z_t.values.v[k] - std::sqrt(ab_t) * z0_hat.v[k]) * inv;
    out.values.v[k] = std::sqrt(ab_prev) * z0_hat.v[k] + std::sqrt(1.0 - ab_prev) * eps_hat;
  }
  return out;
}

ad::Tensor ToyVideoModel::encode(const img::Image& frame) const { return codec_.encode(frame); }
img::Image ToyVideoModel::decode(const ad::Tensor& latent) const { return codec_.decode(latent); }

// ------------------------------------------------------------------ icadapt

AdaptTrace icadapt_indexed(ToyVideoModel& model,
                           const std::vector<std::vector<img::Image>>& view_frames,
                           const std::vector<clips::ClipIndex>& clip_list,
                           const AdaptConfig& cfg) {
  if (clip_list.empty()) throw ContractViolation("icadapt: no clips");
  const int frames = model.config().frames;
  const auto& codec = model.codec();
  for (const auto& clip : clip_list) {
    if (static_cast<int>(clip.frame_indices.size()) != frames)
      throw ContractViolation("icadapt: clip with " + std::to_string(clip.frame_indices.size()) +
                              " frames; expected " + std::to_string(frames));
    if (!model.supports_fps(clip.fps_tag))
      throw ConfigError("icadapt: clip fps " + std::to_string(clip.fps_tag) + " unsupported");
    if (clip.view < 0 || static_cast<size_t>(clip.view) >= view_frames.size())
      throw ContractViolation("icadapt: clip references unknown view");
    for (int idx : clip.frame_indices)
      if (idx < 0 || static_cast<size_t>(idx) >= view_frames[static_cast<size_t>(clip.view)].size())
        throw ContractViolation("icadapt: clip frame index out of range");
  }

  // Clips overlap heavily; encode every referenced frame once.
  std::vector<std::vector<ad::Tensor>> latents(view_frames.size());
  for (size_t v = 0; v < view_frames.size(); ++v) {
    latents[v].reserve(view_frames[v].size());
    for (const auto& frame : view_frames[v]) latents[v].push_back(codec.encode(frame));
  }
  const int per_frame = codec.latent_channels() * codec.latent_height() * codec.latent_width();

  Rng rng(cfg.seed);
  nn::Adam opt({cfg.learning_rate, 0.9, 0.999, 1e-8});
  AdaptTrace trace;
  const int t_max = model.schedule().t_max;

  for (int step = 0; step < cfg.steps; ++step) {
    ad::Graph g;
    auto binds = model.bind(g, true);
    std::vector<ad::Graph::Id> batch_losses;
    const int batch = std::min<int>(cfg.batch_size, static_cast<int>(clip_list.size()));
    for (int b = 0; b < batch; ++b) {
      const auto& clip = clip_list[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(clip_list.size()) - 1))];
      ad::Tensor z0({frames, codec.latent_channels(), codec.latent_height(),
                     codec.latent_width()});
      for (int f = 0; f < frames; ++f)
        std::copy_n(latents[static_cast<size_t>(clip.view)]
                           [static_cast<size_t>(clip.frame_indices[static_cast<size_t>(f)])]
                               .v.data(),
                    per_frame, &z0.v[static_cast<size_t>(f) * per_frame]);

      const int t = static_cast<int>(rng.uniform_int(1, t_max));
      auto [z_t, eps] = forward_noise(z0, t, model.schedule(), rng);
      Conditioning cond;
      cond.first_frame =
          view_frames[static_cast<size_t>(clip.view)][static_cast<size_t>(clip.frame_indices.front())];
      cond.last_frame =
          view_frames[static_cast<size_t>(clip.view)][static_cast<size_t>(clip.frame_indices.back())];
      cond.text = cfg.text;
      cond.fps = clip.fps_tag;
      cond.timestep = t;

      const ad::Graph::Id zin = g.constant(std::move(z_t));
      const ad::Graph::Id clean = model.predict_clean(g, binds, zin, cond);
      const double ab = model.schedule().alpha_bar(t);
      // eps_hat = (z_t - sqrt(ab) z0_hat) / sqrt(1 - ab); the step loss is
      // the plain predicted-noise MSE.
      const ad::Graph::Id num = g.add(zin, g.scale(clean, -std::sqrt(ab)));
      const ad::Graph::Id eps_hat = g.scale(num, 1.0 / std::sqrt(1.0 - ab));
      batch_losses.push_back(g.scale(g.sq_diff_sum(eps_hat, eps), 1.0 / eps.numel()));
    }
    ad::Graph::Id loss = batch_losses[0];
    for (size_t i = 1; i < batch_losses.size(); ++i) loss = g.add(loss, batch_losses[i]);
    loss = g.scale(loss, 1.0 / static_cast<double>(batch_losses.size()));
    g.backward(loss);
    trace.losses.push_back(g.val(loss).v[0]);

    std::vector<ad::Tensor*> params;
    std::vector<const ad::Tensor*> grads;
    for (auto& [tensor, id] : binds.trainable) {
      params.push_back(tensor);
      grads.push_back(&g.grad(id));
    }
    opt.step(params, grads);
    ++trace.spatial_updates;
    ++trace.image_projector_updates;
  }
  return trace;
}

AdaptTrace icadapt(ToyVideoModel& model, const std::vector<VideoClip>& clip_list,
                   const AdaptConfig& cfg) {
  if (clip_list.empty()) throw ContractViolation("icadapt: no clips");
  // Each standalone clip becomes its own frame pool with a trivial index.
  std::vector<std::vector<img::Image>> view_frames;
  std::vector<clips::ClipIndex> indexed;
  for (size_t i = 0; i < clip_list.size(); ++i) {
    view_frames.push_back(clip_list[i].frames);
    clips::ClipIndex ci;
    ci.view = static_cast<int>(i);
    ci.interval = 1;
    ci.fps_tag = clip_list[i].fps;
    for (size_t f = 0; f < clip_list[i].frames.size(); ++f)
      ci.frame_indices.push_back(static_cast<int>(f));
    indexed.push_back(std::move(ci));
  }
  return icadapt_indexed(model, view_frames, indexed, cfg);
}

void save_checkpoint(const ToyVideoModel& model, const AdaptConfig& cfg,
                     const std::filesystem::path& binary_path,
                     const std::filesystem::path& sidecar_path) {
  std::vector<nn::NamedTensor> tensors;
  json partition;
  for (auto g : {ParamGroup::kSpatial, ParamGroup::kTemporal, ParamGroup::kImageProjector,
                 ParamGroup::kFpsEmbedding}) {
    json names = json::array();
    for (const auto& nt : model.group(g)) {
      tensors.push_back(nt);
      names.push_back(nt.name);
    }
    partition[param_group_name(g)] = names;
  }
  nn::save_tensors(tensors, binary_path);

  const auto& mc = model.config();
  json j;
  j["partition"] = partition;
  j["adapt_config"] = {{"steps", cfg.steps},         {"learning_rate", cfg.learning_rate},
                       {"batch_size", cfg.batch_size}, {"views", cfg.views},
                       {"intervals", cfg.intervals},  {"text", cfg.text},
                       {"seed", cfg.seed}};
  j["model"] = {{"width", mc.width},   {"height", mc.height},       {"frames", mc.frames},
                {"t_max", mc.t_max},   {"fps_table", mc.fps_table}, {"init_seed", mc.init_seed}};
  std::ofstream out(sidecar_path);
  if (!out) throw IoError("cannot write checkpoint sidecar: " + sidecar_path.string());
  out << j.dump(1) << "\n";
}

ToyVideoModel load_checkpoint(const std::filesystem::path& binary_path,
                              const std::filesystem::path& sidecar_path) {
  std::ifstream in(sidecar_path);
  if (!in) throw IoError("cannot read checkpoint sidecar: " + sidecar_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("checkpoint sidecar " + sidecar_path.string() + ": " + e.what());
  }
  ToyModelConfig mc;
  mc.width = j.at("model").at("width").get<int>();
  mc.height = j.at("model").at("height").get<int>();
  mc.frames = j.at("model").at("frames").get<int>();
  mc.t_max = j.at("model").at("t_max").get<int>();
  mc.fps_table = j.at("model").at("fps_table").get<std::vector<int>>();
  mc.init_seed = j.at("model").at("init_seed").get<std::uint64_t>();

  ToyVideoModel model(mc);
  const auto tensors = nn::load_tensors(binary_path);
  for (auto g : {ParamGroup::kSpatial, ParamGroup::kTemporal, ParamGroup::kImageProjector,
                 ParamGroup::kFpsEmbedding})
    for (auto& nt : model.group(g)) {
      const ad::Tensor& stored = nn::find_tensor(tensors, nt.name);
      if (!stored.same_shape(nt.tensor))
        throw ParseError("checkpoint tensor shape mismatch for " + nt.name);
      nt.tensor = stored;
    }
  return model;
}

}  // namespace anymole::diffusion
