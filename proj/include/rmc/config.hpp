#pragma once

#include <string>
#include <vector>

#include "rmc/network.hpp"
#include "rmc/synth.hpp"
#include "rmc/train.hpp"

namespace rmc {

/// Every tunable of the command-line tool. Sourced from a key=value file and
/// then from flags, later assignments winning.
struct RunConfig {
  // network
  std::string backbone = "rmc";
  int depth = 50;
  std::string width = "1/8";
  int size = 112;
  int clip_len = 8;
  int act_num = 6;
  int tap_channels = 512;
  std::string anchors = "micro";
  int crop_size = 4;
  bool improved = false;
  bool localize = true;
  int reg_hidden = 1024;
  // training
  double lambda1 = 3;
  double lambda2 = 1;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int iterations = 1000;
  int batch = 2;
  uint64_t seed = 1;
  int lr_decay_at = 0;
  double lr_decay = 0.1;
  int log_every = 5;
  double eval_iou = 0.5;
  double pos_iou = 0.7;
  double neg_iou = 0.3;
  int max_samples = 256;
  std::string train_crop = "proposal";
  // data
  std::string data;
  int train_count = 40;
  int test_count = 20;
  int distractors = 1;
  double noise = 0.05;
  int background = -1;
  // artifacts
  std::string out = "runs";
  std::string checkpoint;

  /// Assigns one key; unknown keys and unparsable values throw
  /// std::invalid_argument naming the key.
  void set(const std::string& key, const std::string& value);
  /// Reads "key = value" lines; '#' starts a comment.
  void load_file(const std::string& path);
  static const std::vector<std::string>& keys();
  std::string get(const std::string& key) const;
  std::string to_text() const;

  NetConfig net() const;
  TrainConfig train() const;
  SynthConfig synth() const;
};

}  // namespace rmc
