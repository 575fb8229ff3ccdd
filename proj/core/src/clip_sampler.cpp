#include "anymole/clip_sampler.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "anymole/errors.hpp"
#include "anymole/log.hpp"

namespace anymole::clips {

std::vector<ClipIndex> gather_clips(int num_views, int frames_per_view, int k,
                                    const std::vector<int>& intervals, int base_fps) {
  if (k < 2) throw ContractViolation("gather_clips: clips need at least two frames");
  if (num_views <= 0 || frames_per_view <= 0)
    throw ContractViolation("gather_clips: views and frames per view must be positive");
  for (int s : intervals) {
    if (s <= 0) throw ContractViolation("gather_clips: intervals must be positive");
    if (base_fps % s != 0)
      throw ConfigError("gather_clips: interval " + std::to_string(s) +
                        " does not divide base fps " + std::to_string(base_fps));
  }

  std::vector<ClipIndex> out;
  for (int view = 0; view < num_views; ++view) {
    for (int s : intervals) {
      const int last_start = frames_per_view - k * s;
      if (last_start < 0) {
        if (view == 0)
          log::warn("gather_clips: interval " + std::to_string(s) +
                    " yields no clips for " + std::to_string(frames_per_view) + " frames");
        continue;
      }
      for (int start = 0; start <= last_start; ++start) {
        ClipIndex clip;
        clip.view = view;
        clip.interval = s;
        clip.fps_tag = base_fps / s;
        clip.frame_indices.reserve(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) clip.frame_indices.push_back(start + i * s);
        out.push_back(std::move(clip));
      }
    }
  }
  return out;
}

std::vector<EstimatorSample> assemble_estimator_dataset(
    const std::vector<ViewFrames>& context_frames, const std::vector<ViewFrames>& keyframes,
    int keyframe_weight, bool allow_empty_keyframes) {
  if (keyframe_weight < 1)
    throw ContractViolation("assemble_estimator_dataset: keyframe weight must be >= 1");
  bool any_keyframes = false;
  for (const auto& view : keyframes) any_keyframes |= !view.joints.empty();
  if (!any_keyframes && !allow_empty_keyframes)
    throw ConfigError(
        "assemble_estimator_dataset: empty keyframe set; pass the explicit no-data-selection "
        "flag to train on context frames only");

  std::vector<EstimatorSample> samples;
  auto add = [&samples](const ViewFrames& view, bool is_keyframe, int multiplicity) {
    if (view.view == "back") return;  // back views confuse left/right; dropped
    for (size_t f = 0; f < view.joints.size(); ++f) {
      EstimatorSample s;
      s.view = view.view;
      s.frame_index = static_cast<int>(f);
      s.is_keyframe = is_keyframe;
      s.multiplicity = multiplicity;
      s.joints_global = view.joints[f];
      s.joints_screen = camera::project(view.joints[f], view.cam);
      samples.push_back(std::move(s));
    }
  };
  for (const auto& view : context_frames) add(view, false, 1);
  for (const auto& view : keyframes) add(view, true, keyframe_weight);
  return samples;
}

long weighted_entry_count(const std::vector<EstimatorSample>& samples) {
  long count = 0;
  for (const auto& s : samples) count += s.multiplicity;
  return count;
}

std::vector<int> expand_epoch(const std::vector<EstimatorSample>& samples) {
  std::vector<int> epoch;
  epoch.reserve(static_cast<size_t>(weighted_entry_count(samples)));
  for (size_t i = 0; i < samples.size(); ++i)
    for (int m = 0; m < samples[i].multiplicity; ++m) epoch.push_back(static_cast<int>(i));
  return epoch;
}

void write_dataset_manifest(const std::vector<ClipIndex>& clip_list,
                            const std::vector<EstimatorSample>& samples,
                            const std::filesystem::path& path) {
  nlohmann::json j;
  j["clips"] = nlohmann::json::array();
  for (const auto& c : clip_list) {
    j["clips"].push_back({{"view", c.view},
                          {"interval", c.interval},
                          {"fps", c.fps_tag},
                          {"frames", c.frame_indices}});
  }
  j["samples"] = nlohmann::json::array();
  for (const auto& s : samples) {
    j["samples"].push_back({{"view", s.view},
                            {"frame", s.frame_index},
                            {"keyframe", s.is_keyframe},
                            {"multiplicity", s.multiplicity}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset manifest: " + path.string());
  out << j.dump(1) << "\n";
}

}  // namespace anymole::clips
