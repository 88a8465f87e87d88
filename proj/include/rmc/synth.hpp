#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rmc/box.hpp"
#include "rmc/tensor.hpp"

namespace rmc {

enum class Split : uint32_t { Train = 0, Test = 1 };

std::string to_string(Split s);
Split parse_split(const std::string& s);

/// Number of motion patterns in the catalog.
constexpr int kPatternCount = 10;
/// Catalog names in id order.
const std::array<const char*, kPatternCount>& pattern_names();

struct SynthConfig {
  int size = 112;
  int clip_len = 8;
  int act_num = 6;
  int distractors = 1;
  float noise = 0.05f;
  /// 0 flat, 1 gradient, 2 checker; -1 picks one per clip.
  int background = -1;
  /// Nominal sprite side in pixels; 0 means size/5.
  float sprite = 0;
  /// Motion amplitude in pixels; 0 means size/7.
  float amplitude = 0;

  float sprite_px() const { return sprite > 0 ? sprite : size / 5.0f; }
  float amplitude_px() const { return amplitude > 0 ? amplitude : size / 7.0f; }
  void validate() const;
};

enum class Shape2D { Rect, Disc };

struct Sprite {
  Shape2D shape = Shape2D::Rect;
  float half_w = 0, half_h = 0;
  std::array<float, 3> color{};
};

/// Parametric trajectory of one sprite over the clip.
struct Motion {
  int pattern = 0;
  float cx = 0, cy = 0;
  float amplitude = 0;
  /// Radians; oscillations and orbits complete one period per clip.
  double phase = 0;
  /// Per-frame offsets used by the stationary-jitter pattern.
  std::vector<std::array<float, 2>> jitter;
};

struct Pose {
  double cx = 0, cy = 0, scale = 1;
};

/// Sprite center and scale at frame t of L.
Pose pattern_pose(const Motion& m, int t, int L);

struct Actor {
  Sprite sprite;
  Motion motion;
};

/// Everything a clip is rendered from; drawn from a seed by draw_clip.
struct ClipParams {
  Actor target;
  std::vector<Actor> distractors;
  int background = 0;
  std::array<float, 2> levels{};
  uint64_t noise_seed = 0;
};

struct ClipRecord {
  int size = 0;
  int clip_len = 0;
  int act_num = 0;
  int label = 0;
  uint32_t clip_id = 0;
  Split split = Split::Train;
  /// [3, L, S, S], values in [0, 1].
  std::vector<float> frames;
  /// Tight bounds of the painted target per frame.
  std::vector<Box> boxes;

  friend bool operator==(const ClipRecord&, const ClipRecord&) = default;
};

ClipParams draw_clip(uint64_t seed, const SynthConfig& cfg, int pattern);
ClipRecord render(const ClipParams& p, const SynthConfig& cfg);
/// draw_clip followed by render; the label is the pattern id.
ClipRecord render_clip(uint64_t seed, const SynthConfig& cfg, int pattern);

// "RMC1" clip file: magic, u32 version, u32 L, S, channels, act_num, label,
// clip_id, split; L*4 f32 boxes; f32 frames channel, frame, row, column.
constexpr uint32_t kClipVersion = 1;
constexpr size_t kClipHeaderBytes = 36;

void write_clip(const ClipRecord& rec, const std::string& path);
ClipRecord read_clip(const std::string& path);

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  Split split = Split::Train;
  int label = 0;
};

/// Renders n_train + n_test clips into `dir` with balanced labels and writes
/// `dir/manifest.txt` ("path split label" per line). Returns the manifest path.
std::string make_dataset(const std::string& dir, uint64_t seed, int n_train, int n_test, const SynthConfig& cfg);

std::vector<ManifestEntry> read_manifest(const std::string& manifest_path);
/// Loads every clip of one split listed in the manifest.
std::vector<ClipRecord> load_split(const std::string& manifest_path, Split split);

/// Stacks clips into [B,3,L,S,S] with frame boxes and labels in batch order.
struct ClipBatch {
  Tensor clip;
  std::vector<Box> boxes;
  std::vector<int> labels;
};
ClipBatch make_batch(std::span<const ClipRecord> records, std::span<const size_t> indices);

}  // namespace rmc
