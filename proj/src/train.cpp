#include "rmc/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "rmc/errors.hpp"

namespace rmc {

void TrainConfig::validate() const {
  if (!(lambda1 >= 0) || !(lambda2 >= 0)) throw std::invalid_argument("lambda1 and lambda2 must be non-negative");
  if (batch_clips < 1) throw std::invalid_argument("batch_clips must be at least 1");
  if (iterations < 0) throw std::invalid_argument("iterations must be non-negative");
  if (log_every < 1) throw std::invalid_argument("log_every must be at least 1");
  if (!(sgd.lr >= 0) || !(sgd.momentum >= 0) || !(sgd.weight_decay >= 0))
    throw std::invalid_argument("lr, momentum and weight_decay must be non-negative");
  if (lr_decay_at < 0 || !(lr_decay > 0)) throw std::invalid_argument("lr decay settings must be positive");
  if (!(eval_iou > 0 && eval_iou <= 1)) throw std::invalid_argument("eval_iou must be in (0, 1]");
}

double total_loss(const LossParts& p) {
  double t = p.rpn_cls + p.rpn_reg + p.act_cls;
  if (p.roi_reg) t += *p.roi_reg;
  return t;
}

template <typename T>
LossParts LossTerms<T>::values() const {
  LossParts p{rpn_cls.item(), rpn_reg.item(), act_cls.item(), std::nullopt};
  if (roi_reg.defined()) p.roi_reg = roi_reg.item();
  return p;
}

template <typename T>
LossTerms<T> compute_losses(const ActionNet<T>& net, const NetForward<T>& fwd, std::span<const Box> gt,
                            std::span<const int> labels, const TrainConfig& cfg, uint64_t assign_seed) {
  const float S = static_cast<float>(net.config().backbone.input_size);
  const auto& anchors = net.anchors();
  if (gt.size() != fwd.proposals.size()) throw std::invalid_argument("one ground-truth box per frame is required");
  std::vector<AnchorAssignment> assignments;
  assignments.reserve(gt.size());
  for (size_t f = 0; f < gt.size(); ++f)
    assignments.push_back(assign_anchors(anchors, gt[f], cfg.assign, S, S, mix_seed(assign_seed, f)));
  LossTerms<T> terms;
  terms.rpn_cls = loss_rpn_cls(fwd.rpn.logits, anchors, assignments);
  terms.rpn_reg = loss_rpn_reg(fwd.rpn.deltas, anchors, assignments, static_cast<T>(cfg.lambda1));
  terms.act_cls = softmax_cross_entropy(fwd.action_logits, labels);
  terms.total = add(add(terms.rpn_cls, terms.rpn_reg), terms.act_cls);
  if (fwd.reg_deltas.defined()) {
    std::vector<Box> proposals;
    for (const auto& p : fwd.proposals) proposals.push_back(p.box);
    terms.roi_reg = loss_roi_reg(fwd.reg_deltas, proposals, gt, static_cast<T>(cfg.lambda2));
    terms.total = add(terms.total, terms.roi_reg);
  }
  return terms;
}

namespace {

void check_finite(const LossParts& p, int iter) {
  auto check = [iter](double v, const char* name) {
    if (!std::isfinite(v)) throw DivergenceError(iter, name, v);
  };
  check(p.rpn_cls, "loss_rpn_cls");
  check(p.rpn_reg, "loss_rpn_reg");
  check(p.act_cls, "loss_act_cls");
  if (p.roi_reg) check(*p.roi_reg, "loss_roi_reg");
}

int argmax_row(std::span<const float> row) {
  int best = 0;
  for (size_t k = 1; k < row.size(); ++k)
    if (row[k] > row[static_cast<size_t>(best)]) best = static_cast<int>(k);
  return best;
}

}  // namespace

TrainResult train(ActionNet<float>& net, std::span<const ClipRecord> data, const TrainConfig& cfg,
                  const std::function<void(const CurvePoint&)>& on_log) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("training set is empty");
  const auto& nc = net.config();
  for (const auto& r : data) {
    if (r.size != nc.backbone.input_size || r.clip_len != nc.backbone.clip_len)
      throw std::invalid_argument("clip geometry " + std::to_string(r.size) + "x" + std::to_string(r.clip_len) +
                                  " does not match the network");
    if (r.label >= nc.backbone.num_classes)
      throw std::invalid_argument("label " + std::to_string(r.label) + " exceeds the network's act_num");
  }
  const auto start = std::chrono::steady_clock::now();
  Sgd<float> opt(net.state().params, cfg.sgd);
  TrainResult result;
  std::vector<size_t> order(data.size());
  size_t cursor = order.size();
  int epoch = 0;
  LossParts acc;
  int acc_n = 0, correct = 0, seen = 0;
  for (int it = 1; it <= cfg.iterations; ++it) {
    if (cfg.lr_decay_at > 0 && it == cfg.lr_decay_at + 1) opt.options().lr *= cfg.lr_decay;
    std::vector<size_t> idx;
    while (idx.size() < static_cast<size_t>(cfg.batch_clips)) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), size_t{0});
        Rng rng(mix_seed(cfg.seed, 1000 + static_cast<uint64_t>(epoch++)));
        for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    const ClipBatch batch = make_batch(data, idx);
    const auto fwd = net.forward(batch.clip, Mode::Train, cfg.train_crop, batch.boxes);
    const auto terms = compute_losses(net, fwd, batch.boxes, batch.labels, cfg, mix_seed(cfg.seed, static_cast<uint64_t>(it)));
    const LossParts parts = terms.values();
    check_finite(parts, it);
    opt.zero_grad();
    terms.total.backward();
    opt.step();

    acc.rpn_cls += parts.rpn_cls;
    acc.rpn_reg += parts.rpn_reg;
    acc.act_cls += parts.act_cls;
    if (parts.roi_reg) acc.roi_reg = acc.roi_reg.value_or(0) + *parts.roi_reg;
    ++acc_n;
    const auto logits = fwd.action_logits.data();
    const size_t K = static_cast<size_t>(fwd.action_logits.dim(1));
    for (size_t n = 0; n < batch.labels.size(); ++n)
      correct += argmax_row(logits.subspan(n * K, K)) == batch.labels[n];
    seen += static_cast<int>(batch.labels.size());
    if (it % cfg.log_every == 0 || it == cfg.iterations) {
      CurvePoint pt;
      pt.iter = it;
      pt.loss = {acc.rpn_cls / acc_n, acc.rpn_reg / acc_n, acc.act_cls / acc_n, std::nullopt};
      if (acc.roi_reg) pt.loss.roi_reg = *acc.roi_reg / acc_n;
      pt.err_rate = 1.0 - static_cast<double>(correct) / seen;
      result.curves.push_back(pt);
      if (on_log) on_log(pt);
      acc = {};
      acc_n = correct = seen = 0;
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void write_curves(std::ostream& os, std::span<const CurvePoint> curves) {
  os << "# iter loss_rpn_cls loss_rpn_reg loss_act_cls loss_roi_reg err_rate\n";
  char buf[256];
  for (const auto& c : curves) {
    char roi[32] = "-";
    if (c.loss.roi_reg) std::snprintf(roi, sizeof roi, "%.6f", *c.loss.roi_reg);
    std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %s %.4f\n", c.iter, c.loss.rpn_cls, c.loss.rpn_reg,
                  c.loss.act_cls, roi, c.err_rate);
    os << buf;
  }
}

template struct LossTerms<float>;
template struct LossTerms<double>;
template LossTerms<float> compute_losses<float>(const ActionNet<float>&, const NetForward<float>&,
                                                std::span<const Box>, std::span<const int>, const TrainConfig&,
                                                uint64_t);
template LossTerms<double> compute_losses<double>(const ActionNet<double>&, const NetForward<double>&,
                                                  std::span<const Box>, std::span<const int>, const TrainConfig&,
                                                  uint64_t);

}  // namespace rmc
