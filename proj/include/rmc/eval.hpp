#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "rmc/network.hpp"
#include "rmc/rpn.hpp"
#include "rmc/synth.hpp"

namespace rmc {

/// All-point interpolated average precision. Each prediction is a true
/// positive or not; `n_gt` is the number of ground-truth objects. Equal
/// scores form a single operating point.
double average_precision(std::span<const double> scores, std::span<const char> true_positive, int64_t n_gt);

struct Predictions {
  /// One detection per frame in dataset order (clip-major).
  std::vector<FrameProposal> frames;
  std::vector<Box> gt;
  std::vector<int> labels;
  std::vector<int> predicted;
  /// Softmax action probabilities per clip.
  std::vector<std::vector<double>> probs;
  double seconds = 0;
};

Predictions predict(const ActionNet<float>& net, std::span<const ClipRecord> data, int batch_clips = 2);

struct EvalReport {
  double ap = 0;
  double accuracy = 0;
  double mean_iou = 0;
  double clips_per_sec = 0;
  double frames_per_sec = 0;
  int64_t clips = 0;
  int64_t frames = 0;

  /// Flat "key=value" lines.
  std::string to_text() const;
};

EvalReport report_from(const Predictions& p, double iou_threshold);
EvalReport evaluate(const ActionNet<float>& net, std::span<const ClipRecord> data, double iou_threshold = 0.5,
                    int batch_clips = 2);

struct BenchResult {
  double frames_per_sec = 0;
  double clips_per_sec = 0;
  std::vector<double> seconds;
};

/// Median over `repetitions` timed eval-mode forwards of a random clip batch
/// [clips,3,L,S,S], after `warmup` untimed runs.
BenchResult bench_fps(const ActionNet<float>& net, int clips, int repetitions, int warmup = 1, uint64_t seed = 0);

/// Median wall time of standalone backbone classification on a random clip.
double bench_backbone_seconds(const Backbone<float>& net, int clips, int repetitions, int warmup = 1,
                              uint64_t seed = 0);

}  // namespace rmc
