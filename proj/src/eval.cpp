#include "rmc/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace rmc {

double average_precision(std::span<const double> scores, std::span<const char> true_positive, int64_t n_gt) {
  if (scores.size() != true_positive.size()) throw std::invalid_argument("average_precision: size mismatch");
  if (n_gt <= 0) return 0.0;
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  std::vector<double> recall, precision;
  int64_t tp = 0, fp = 0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      true_positive[order[j]] ? ++tp : ++fp;
      ++j;
    }
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    i = j;
  }
  for (size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0, prev = 0;
  for (size_t k = 0; k < recall.size(); ++k) {
    ap += (recall[k] - prev) * precision[k];
    prev = recall[k];
  }
  return ap;
}

Predictions predict(const ActionNet<float>& net, std::span<const ClipRecord> data, int batch_clips) {
  if (batch_clips < 1) throw std::invalid_argument("batch_clips must be at least 1");
  NoGradGuard no_grad;
  Predictions p;
  double seconds = 0;
  for (size_t s = 0; s < data.size(); s += static_cast<size_t>(batch_clips)) {
    std::vector<size_t> idx;
    for (size_t i = s; i < std::min(data.size(), s + static_cast<size_t>(batch_clips)); ++i) idx.push_back(i);
    const ClipBatch batch = make_batch(data, idx);
    const auto t0 = std::chrono::steady_clock::now();
    const auto fwd = net.forward(batch.clip, Mode::Eval);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (size_t f = 0; f < fwd.detections.size(); ++f)
      p.frames.push_back({static_cast<int64_t>(p.frames.size()), fwd.proposals[f].score, fwd.detections[f]});
    p.gt.insert(p.gt.end(), batch.boxes.begin(), batch.boxes.end());
    const auto logits = fwd.action_logits.data();
    const size_t K = static_cast<size_t>(fwd.action_logits.dim(1));
    for (size_t n = 0; n < idx.size(); ++n) {
      std::vector<double> prob(K);
      double mx = logits[n * K];
      for (size_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(logits[n * K + k]));
      double z = 0;
      for (size_t k = 0; k < K; ++k) z += prob[k] = std::exp(logits[n * K + k] - mx);
      for (auto& v : prob) v /= z;
      p.predicted.push_back(static_cast<int>(std::max_element(prob.begin(), prob.end()) - prob.begin()));
      p.probs.push_back(std::move(prob));
      p.labels.push_back(batch.labels[n]);
    }
  }
  p.seconds = seconds;
  return p;
}

EvalReport report_from(const Predictions& p, double iou_threshold) {
  EvalReport r;
  r.clips = static_cast<int64_t>(p.labels.size());
  r.frames = static_cast<int64_t>(p.frames.size());
  std::vector<double> scores;
  std::vector<char> tp;
  double iou_sum = 0;
  for (size_t f = 0; f < p.frames.size(); ++f) {
    const double o = iou(p.frames[f].box, p.gt[f]);
    iou_sum += o;
    scores.push_back(p.frames[f].score);
    tp.push_back(o >= iou_threshold);
  }
  r.ap = average_precision(scores, tp, r.frames);
  r.mean_iou = r.frames > 0 ? iou_sum / static_cast<double>(r.frames) : 0.0;
  int64_t correct = 0;
  for (size_t i = 0; i < p.labels.size(); ++i) correct += p.labels[i] == p.predicted[i];
  r.accuracy = r.clips > 0 ? static_cast<double>(correct) / static_cast<double>(r.clips) : 0.0;
  if (p.seconds > 0) {
    r.clips_per_sec = static_cast<double>(r.clips) / p.seconds;
    r.frames_per_sec = static_cast<double>(r.frames) / p.seconds;
  }
  return r;
}

EvalReport evaluate(const ActionNet<float>& net, std::span<const ClipRecord> data, double iou_threshold,
                    int batch_clips) {
  return report_from(predict(net, data, batch_clips), iou_threshold);
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "ap=" << ap << "\naccuracy=" << accuracy << "\nmean_iou=" << mean_iou << "\nclips_per_sec=" << clips_per_sec
     << "\nframes_per_sec=" << frames_per_sec << "\nclips=" << clips << "\nframes=" << frames << '\n';
  return os.str();
}

namespace {

Tensor random_clip(int clips, int L, int S, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(static_cast<size_t>(clips) * 3 * L * S * S);
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Tensor(Shape{clips, 3, L, S, S}, std::move(v));
}

template <typename F>
std::vector<double> time_runs(F&& run, int repetitions, int warmup) {
  if (repetitions < 1) throw std::invalid_argument("repetitions must be at least 1");
  for (int i = 0; i < warmup; ++i) run();
  std::vector<double> s;
  for (int i = 0; i < repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run();
    s.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return s;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BenchResult bench_fps(const ActionNet<float>& net, int clips, int repetitions, int warmup, uint64_t seed) {
  const auto& bc = net.config().backbone;
  const Tensor clip = random_clip(clips, bc.clip_len, bc.input_size, seed);
  NoGradGuard no_grad;
  BenchResult r;
  r.seconds = time_runs([&] { net.forward(clip, Mode::Eval); }, repetitions, warmup);
  const double t = median(r.seconds);
  r.clips_per_sec = clips / t;
  r.frames_per_sec = static_cast<double>(clips) * bc.clip_len / t;
  return r;
}

double bench_backbone_seconds(const Backbone<float>& net, int clips, int repetitions, int warmup, uint64_t seed) {
  const auto& bc = net.config();
  const Tensor clip = random_clip(clips, bc.clip_len, bc.input_size, seed);
  NoGradGuard no_grad;
  return median(time_runs([&] { net.classify_clip(clip, Mode::Eval); }, repetitions, warmup));
}

}  // namespace rmc
