#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "anymole/diffusion.hpp"
#include "anymole/image.hpp"
#include "anymole/rng.hpp"

namespace anymole::guidance {

/// Guidance for one 16-frame segment: segment-local frame index -> image.
/// Indices 0 and 15 belong to the conditioning endpoints; they may appear
/// here only when consistent with them.
struct GuidanceSpec {
  std::map<int, img::Image> images;
};

std::map<int, ad::Tensor> encode_guidance(const diffusion::VideoBackend& backend,
                                          const GuidanceSpec& spec);

/// Overwrite guided frame latents with the forward-noised encodings of
/// their guidance images at noise level t. Unguided frames are untouched
/// (bitwise). t = 0 pins the encoded guidance exactly.
diffusion::LatentVideo inpaint_replace(const diffusion::LatentVideo& z,
                                       const std::map<int, ad::Tensor>& guidance_latents, int t,
                                       const diffusion::NoiseSchedule& schedule, Rng& rng);

/// Full reverse chain from pure noise with guided inpainting applied after
/// every step, including once at t = 0 so guided frames decode exactly.
std::vector<img::Image> generate_segment(diffusion::VideoBackend& model,
                                         const img::Image& first, const img::Image& last,
                                         const GuidanceSpec& spec, int fps,
                                         const std::string& text, Rng& rng);

// Timestamps are integer ticks of 1/30 s, so the 30 fps context grid, the
// 5 fps coarse grid (6 ticks) and the 15 fps fine grid (2 ticks) are all
// exact.
constexpr int kTicksPerSecond = 30;

struct SegmentPlan {
  int start_tick = 0;
  int fps = 5;
  std::vector<int> guided_indices;   // segment-local, excluding endpoints
  std::vector<int> generated_ticks;  // ticks newly filled by this segment
};

struct StagePlan {
  std::string stage;  // "coarse" or "fine"
  int fps = 5;
  int total_seconds = 0;
  int context_seconds = 0;
  std::vector<SegmentPlan> segments;
  std::vector<int> snapped_ticks;  // off-grid keyframes snapped to the grid
  int backend_calls() const { return static_cast<int>(segments.size()); }
};

struct StageResult {
  std::map<int, img::Image> frames;       // tick -> frame, covering the stage grid
  std::map<int, std::string> provenance;  // tick -> context|keyframe|segment <i>
  StagePlan plan;
};

/// Known input frames: 30 fps context frames occupy ticks [0, 30*context_s)
/// tagged "context"; keyframes sit at their ticks tagged "keyframe".
struct KnownFrames {
  std::map<int, img::Image> frames;
  std::map<int, std::string> tags;

  void add_context(const std::vector<img::Image>& context, int start_tick = 0);
  void add_keyframe(int tick, img::Image frame);
};

/// Stage 1: autoregressive 3-second windows at 5 fps over
/// t in {0..total-3} seconds; every already-known frame inside a window is
/// guidance, and newly generated frames join the guidance pool.
StageResult coarse_stage(diffusion::VideoBackend& model, const KnownFrames& known,
                         int total_seconds, int context_seconds, const std::string& text,
                         Rng& rng);

/// Stage 2: 1-second windows at 15 fps; coarse output and keyframes pin
/// every third frame. Output covers 15 * total + 1 frames.
StageResult fine_stage(diffusion::VideoBackend& model, const StageResult& coarse,
                       const KnownFrames& known, int total_seconds, int context_seconds,
                       const std::string& text, Rng& rng);

struct TwoStagePlan {
  StagePlan coarse;
  StagePlan fine;
  int total_backend_calls = 0;
  int context_seconds = 0;
};

/// Segment enumeration without running the backend; the call count is
/// affine in total_seconds (coarse: total-2, fine: total).
TwoStagePlan plan_two_stage(int total_seconds, int context_seconds);

void write_plan_manifest(const TwoStagePlan& plan, const std::filesystem::path& path);
void write_stage_manifest(const StageResult& result, const std::filesystem::path& path);

}  // namespace anymole::guidance
