#include "anymole/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "anymole/errors.hpp"
#include "anymole/log.hpp"

namespace anymole::guidance {

using nlohmann::json;

std::map<int, ad::Tensor> encode_guidance(const diffusion::VideoBackend& backend,
                                          const GuidanceSpec& spec) {
  std::map<int, ad::Tensor> encoded;
  for (const auto& [index, image] : spec.images) encoded.emplace(index, backend.encode(image));
  return encoded;
}

diffusion::LatentVideo inpaint_replace(const diffusion::LatentVideo& z,
                                       const std::map<int, ad::Tensor>& guidance_latents, int t,
                                       const diffusion::NoiseSchedule& schedule, Rng& rng) {
  z.validate();
  diffusion::LatentVideo out = z;
  const int frames = z.frames();
  const int per_frame = z.values.numel() / frames;
  for (const auto& [index, latent] : guidance_latents) {
    if (index < 0 || index >= frames)
      throw ContractViolation("inpaint_replace: guided index " + std::to_string(index) +
                              " outside the segment");
    if (latent.numel() != per_frame)
      throw ContractViolation("inpaint_replace: guidance latent shape mismatch");
    auto [noised, eps] = diffusion::forward_noise(latent, t, schedule, rng);
    std::copy_n(noised.v.data(), per_frame,
                &out.values.v[static_cast<size_t>(index) * per_frame]);
  }
  out.noise_level = t;
  return out;
}

std::vector<img::Image> generate_segment(diffusion::VideoBackend& model,
                                         const img::Image& first, const img::Image& last,
                                         const GuidanceSpec& spec, int fps,
                                         const std::string& text, Rng& rng) {
  const int frames = model.frames_per_segment();

  // Endpoints are conditioning; a spec entry at 0 or 15 must agree with them.
  for (const auto& [index, image] : spec.images) {
    if (index < 0 || index >= frames)
      throw ContractViolation("generate_segment: guided index outside segment");
    if ((index == 0 && image.data != first.data) ||
        (index == frames - 1 && image.data != last.data))
      throw ContractViolation("generate_segment: endpoint guidance conflicts with conditioning");
  }

  GuidanceSpec merged = spec;
  merged.images[0] = first;
  merged.images[frames - 1] = last;
  const auto encoded = encode_guidance(model, merged);

  diffusion::Conditioning cond;
  cond.first_frame = first;
  cond.last_frame = last;
  cond.text = text;
  cond.fps = fps;

  const int t_max = model.schedule().t_max;
  diffusion::LatentVideo z;
  z.values = ad::Tensor({frames, model.latent_channels(), model.latent_height(),
                         model.latent_width()});
  for (double& x : z.values.v) x = rng.normal();
  z.noise_level = t_max;
  z = inpaint_replace(z, encoded, t_max, model.schedule(), rng);

  for (int t = t_max; t >= 1; --t) {
    cond.timestep = t;
    z = model.denoise_step(z, cond);
    z = inpaint_replace(z, encoded, t - 1, model.schedule(), rng);
  }

  std::vector<img::Image> out;
  out.reserve(static_cast<size_t>(frames));
  const int per_frame = z.values.numel() / frames;
  for (int f = 0; f < frames; ++f) {
    ad::Tensor latent({model.latent_channels(), model.latent_height(), model.latent_width()});
    std::copy_n(&z.values.v[static_cast<size_t>(f) * per_frame], per_frame, latent.v.data());
    out.push_back(model.decode(latent));
  }
  return out;
}

void KnownFrames::add_context(const std::vector<img::Image>& context, int start_tick) {
  for (size_t i = 0; i < context.size(); ++i) {
    const int tick = start_tick + static_cast<int>(i);
    frames[tick] = context[i];
    tags[tick] = "context";
  }
}

void KnownFrames::add_keyframe(int tick, img::Image frame) {
  frames[tick] = std::move(frame);
  tags[tick] = "keyframe";
}

namespace {

struct GridFrames {
  std::map<int, img::Image> frames;
  std::map<int, std::string> provenance;
  std::vector<int> snapped;
};

// Project known frames onto a stage grid (tick_step ticks between frames).
// Off-grid keyframes snap to the nearest grid point with a warning;
// off-grid context frames are simply not part of the grid.
GridFrames seed_grid(const KnownFrames& known, int tick_step, int last_tick) {
  GridFrames grid;
  for (const auto& [tick, image] : known.frames) {
    const std::string& tag = known.tags.at(tick);
    if (tick % tick_step == 0) {
      if (tick <= last_tick) {
        grid.frames[tick] = image;
        grid.provenance[tick] = tag;
      }
      continue;
    }
    if (tag == "keyframe") {
      int snapped = static_cast<int>(std::llround(static_cast<double>(tick) / tick_step)) *
                    tick_step;
      snapped = std::clamp(snapped, 0, last_tick);
      log::warn("keyframe at tick " + std::to_string(tick) + " snapped to " +
                std::to_string(snapped));
      grid.snapped.push_back(tick);
      grid.frames[snapped] = image;
      grid.provenance[snapped] = "keyframe";
    }
  }
  return grid;
}

StageResult run_stage(diffusion::VideoBackend& model, GridFrames grid, const std::string& stage,
                      int fps, int tick_step, int seconds_per_segment, int segment_stride_seconds,
                      int total_seconds, int context_seconds, const std::string& text, Rng& rng) {
  StageResult result;
  result.plan.stage = stage;
  result.plan.fps = fps;
  result.plan.total_seconds = total_seconds;
  result.plan.context_seconds = context_seconds;
  result.plan.snapped_ticks = grid.snapped;

  const int frames = model.frames_per_segment();
  const int last_segment_start = total_seconds - seconds_per_segment;
  int segment_index = 0;
  for (int t_vid = 0; t_vid <= last_segment_start; t_vid += segment_stride_seconds) {
    const int s0 = t_vid * kTicksPerSecond;
    const int s_end = s0 + seconds_per_segment * kTicksPerSecond;
    auto first_it = grid.frames.find(s0);
    auto last_it = grid.frames.find(s_end);
    if (first_it == grid.frames.end() || last_it == grid.frames.end())
      throw ConfigError(stage + " stage: missing endpoint frame at tick " +
                        std::to_string(first_it == grid.frames.end() ? s0 : s_end) +
                        " (keyframes must cover every segment boundary)");

    SegmentPlan seg;
    seg.start_tick = s0;
    seg.fps = fps;
    GuidanceSpec spec;
    for (int i = 1; i < frames - 1; ++i) {
      const int tick = s0 + i * tick_step;
      auto it = grid.frames.find(tick);
      if (it != grid.frames.end()) {
        spec.images[i] = it->second;
        seg.guided_indices.push_back(i);
      }
    }

    Rng seg_rng = rng.fork(static_cast<std::uint64_t>(segment_index));
    const auto generated =
        generate_segment(model, first_it->second, last_it->second, spec, fps, text, seg_rng);

    for (int i = 0; i < frames; ++i) {
      const int tick = s0 + i * tick_step;
      auto tag = grid.provenance.find(tick);
      const bool ground_truth =
          tag != grid.provenance.end() && (tag->second == "context" || tag->second == "keyframe");
      if (ground_truth) continue;  // inputs stay bitwise exact
      // Overlapping generated frames: the newest segment's pinned value wins.
      grid.frames[tick] = generated[static_cast<size_t>(i)];
      grid.provenance[tick] = stage + " segment " + std::to_string(segment_index);
      seg.generated_ticks.push_back(tick);
    }
    result.plan.segments.push_back(std::move(seg));
    ++segment_index;
  }

  result.frames = std::move(grid.frames);
  result.provenance = std::move(grid.provenance);
  return result;
}

}  // namespace

StageResult coarse_stage(diffusion::VideoBackend& model, const KnownFrames& known,
                         int total_seconds, int context_seconds, const std::string& text,
                         Rng& rng) {
  if (total_seconds < 3)
    throw ContractViolation("coarse stage needs at least a 3-second timeline");
  const int last_tick = total_seconds * kTicksPerSecond;
  GridFrames grid = seed_grid(known, kTicksPerSecond / 5, last_tick);
  return run_stage(model, std::move(grid), "coarse", 5, kTicksPerSecond / 5, 3, 1, total_seconds,
                   context_seconds, text, rng);
}

StageResult fine_stage(diffusion::VideoBackend& model, const StageResult& coarse,
                       const KnownFrames& known, int total_seconds, int context_seconds,
                       const std::string& text, Rng& rng) {
  if (coarse.plan.stage != "coarse" || coarse.frames.empty())
    throw ContractViolation("fine stage requires the coarse result");
  const int last_tick = total_seconds * kTicksPerSecond;
  GridFrames grid = seed_grid(known, kTicksPerSecond / 15, last_tick);
  // Coarse frames (all on the fine grid) guide the fine pass; ground-truth
  // inputs keep their original tags.
  for (const auto& [tick, image] : coarse.frames) {
    if (tick > last_tick) continue;
    if (grid.provenance.count(tick)) continue;
    grid.frames[tick] = image;
    grid.provenance[tick] = coarse.provenance.at(tick);
  }
  return run_stage(model, std::move(grid), "fine", 15, kTicksPerSecond / 15, 1, 1, total_seconds,
                   context_seconds, text, rng);
}

TwoStagePlan plan_two_stage(int total_seconds, int context_seconds) {
  if (total_seconds < 3) throw ContractViolation("two-stage plan needs total >= 3 seconds");
  TwoStagePlan plan;
  plan.context_seconds = context_seconds;
  plan.coarse.stage = "coarse";
  plan.coarse.fps = 5;
  plan.coarse.total_seconds = total_seconds;
  plan.coarse.context_seconds = context_seconds;
  for (int t = 0; t <= total_seconds - 3; ++t) {
    SegmentPlan seg;
    seg.start_tick = t * kTicksPerSecond;
    seg.fps = 5;
    plan.coarse.segments.push_back(seg);
  }
  plan.fine.stage = "fine";
  plan.fine.fps = 15;
  plan.fine.total_seconds = total_seconds;
  plan.fine.context_seconds = context_seconds;
  for (int t = 0; t <= total_seconds - 1; ++t) {
    SegmentPlan seg;
    seg.start_tick = t * kTicksPerSecond;
    seg.fps = 15;
    plan.fine.segments.push_back(seg);
  }
  plan.total_backend_calls = plan.coarse.backend_calls() + plan.fine.backend_calls();
  return plan;
}

namespace {

json plan_to_json(const StagePlan& plan) {
  json j;
  j["stage"] = plan.stage;
  j["fps"] = plan.fps;
  j["total_seconds"] = plan.total_seconds;
  j["context_seconds"] = plan.context_seconds;
  j["backend_calls"] = plan.backend_calls();
  j["snapped_ticks"] = plan.snapped_ticks;
  j["segments"] = json::array();
  for (const auto& seg : plan.segments)
    j["segments"].push_back({{"start_tick", seg.start_tick},
                             {"fps", seg.fps},
                             {"guided_indices", seg.guided_indices},
                             {"generated_ticks", seg.generated_ticks}});
  return j;
}

}  // namespace

void write_plan_manifest(const TwoStagePlan& plan, const std::filesystem::path& path) {
  json j;
  j["context_seconds"] = plan.context_seconds;
  j["total_backend_calls"] = plan.total_backend_calls;
  j["coarse"] = plan_to_json(plan.coarse);
  j["fine"] = plan_to_json(plan.fine);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write plan manifest: " + path.string());
  out << j.dump(1) << "\n";
}

void write_stage_manifest(const StageResult& result, const std::filesystem::path& path) {
  json j = plan_to_json(result.plan);
  j["provenance"] = json::object();
  for (const auto& [tick, tag] : result.provenance) j["provenance"][std::to_string(tick)] = tag;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write stage manifest: " + path.string());
  out << j.dump(1) << "\n";
}

}  // namespace anymole::guidance
