#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmc/network.hpp"
#include "rmc/optim.hpp"
#include "rmc/synth.hpp"

namespace rmc {

struct TrainConfig {
  double lambda1 = 3;
  double lambda2 = 1;
  SgdOptions sgd;
  int iterations = 1000;
  int batch_clips = 2;
  uint64_t seed = 1;
  /// Iteration at which lr is multiplied by lr_decay; 0 disables it.
  int lr_decay_at = 0;
  double lr_decay = 0.1;
  int log_every = 5;
  double eval_iou = 0.5;
  AssignConfig assign;
  /// Boxes cropped for the action path while training.
  CropSource train_crop = CropSource::Proposal;

  void validate() const;
};

/// Scalar values of the loss terms of one batch.
struct LossParts {
  double rpn_cls = 0;
  double rpn_reg = 0;
  double act_cls = 0;
  std::optional<double> roi_reg;
};

/// rpn_cls + rpn_reg + act_cls, plus roi_reg for the improved model, summed
/// in that order.
double total_loss(const LossParts& parts);

template <typename T>
struct LossTerms {
  BasicTensor<T> rpn_cls, rpn_reg, act_cls, roi_reg;
  BasicTensor<T> total;

  LossParts values() const;
};

/// Builds every loss term for a forward pass over a batch whose frames carry
/// `gt` boxes and whose clips carry `labels`.
template <typename T>
LossTerms<T> compute_losses(const ActionNet<T>& net, const NetForward<T>& fwd, std::span<const Box> gt,
                            std::span<const int> labels, const TrainConfig& cfg, uint64_t assign_seed);

struct CurvePoint {
  int iter = 0;
  LossParts loss;
  double err_rate = 0;
};

struct TrainResult {
  std::vector<CurvePoint> curves;
  double seconds = 0;
};

/// Deterministic SGD over `data`. Loss parts and the error rate are averaged
/// over the iterations since the previous log point. Throws DivergenceError
/// on a non-finite loss.
TrainResult train(ActionNet<float>& net, std::span<const ClipRecord> data, const TrainConfig& cfg,
                  const std::function<void(const CurvePoint&)>& on_log = {});

/// "iter loss_rpn_cls loss_rpn_reg loss_act_cls loss_roi_reg err_rate" per
/// line, with "-" for an absent roi_reg.
void write_curves(std::ostream& os, std::span<const CurvePoint> curves);

}  // namespace rmc
