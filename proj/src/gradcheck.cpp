#include "rmc/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>

#include "rmc/backbone.hpp"
#include "rmc/crop_action.hpp"
#include "rmc/network.hpp"
#include "rmc/rpn.hpp"

namespace rmc {

template <>
GradCheckOptions GradCheckOptions::defaults<float>() {
  return {};
}

template <>
GradCheckOptions GradCheckOptions::defaults<double>() {
  GradCheckOptions o;
  o.eps = 1e-3;
  o.tolerance = 1e-6;
  o.kink_tolerance = 1e-6;
  return o;
}

GradCheckOptions GradCheckOptions::twin_defaults() {
  GradCheckOptions o;
  o.kink_tolerance = 1e-3;
  return o;
}

namespace {

// <out, probe> accumulated in double.
template <typename T>
double project(const BasicTensor<T>& out, const std::vector<float>& probe) {
  double s = 0;
  for (size_t i = 0; i < probe.size(); ++i) s += static_cast<double>(out.data()[i]) * probe[i];
  return s;
}

}  // namespace

template <typename T, typename R>
GradCheckResult check_gradients(const std::string& name, const GradProbe<T>& f, const GradProbe<R>& ref,
                                const GradCheckOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckResult res;
  res.name = name;
  if (f.wrt.size() != ref.wrt.size()) throw std::invalid_argument("check_gradients: " + name + " reference differs");
  for (size_t t = 0; t < f.wrt.size(); ++t) {
    if (!f.wrt[t].requires_grad()) throw std::invalid_argument("check_gradients: " + name + " has an input without gradient");
    if (f.wrt[t].shape() != ref.wrt[t].shape()) throw std::invalid_argument("check_gradients: " + name + " reference differs");
  }
  Rng rng(opt.seed);
  for (const auto& w : f.wrt) w.zero_grad();
  const auto out = f.forward();
  std::vector<float> probe(static_cast<size_t>(out.numel()));
  for (auto& v : probe) v = static_cast<float>(rng.uniform(-1, 1));
  sum(mul(out, BasicTensor<T>(out.shape(), std::vector<T>(probe.begin(), probe.end())))).backward();

  std::vector<std::pair<size_t, size_t>> coords;
  for (size_t t = 0; t < f.wrt.size(); ++t)
    for (size_t i = 0; i < f.wrt[t].data().size(); ++i) coords.emplace_back(t, i);
  if (coords.size() > static_cast<size_t>(opt.max_coords)) {
    for (size_t i = 0; i < static_cast<size_t>(opt.max_coords); ++i)
      std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    coords.resize(static_cast<size_t>(opt.max_coords));
  }
  double max_grad = 0;
  for (const auto& [t, i] : coords) max_grad = std::max(max_grad, std::abs(static_cast<double>(f.wrt[t].grad()[i])));
  const double floor = std::max(1e-3 * max_grad, 1e-12);

  NoGradGuard no_grad;
  auto eval_at = [&](R& x, R value) {
    x = value;
    return project(ref.forward(), probe);
  };
  for (const auto& [t, i] : coords) {
    R& x = ref.wrt[t].data()[i];
    const R orig = x;
    const double f0 = eval_at(x, orig);
    // A step that straddles a kink is retried at h/8 and h/64 while rounding
    // noise stays below the tolerance.
    double h = opt.eps * std::max<double>(1.0, std::abs(static_cast<double>(orig)));
    std::optional<double> numeric;
    for (int attempt = 0; attempt < 3 && !numeric; ++attempt, h /= 8) {
      // Central differences at h and h/2 over the exactly representable steps.
      const R p1 = static_cast<R>(orig + h), m1 = static_cast<R>(orig - h);
      const R p2 = static_cast<R>(orig + h / 2), m2 = static_cast<R>(orig - h / 2);
      const double fp1 = eval_at(x, p1), fm1 = eval_at(x, m1), fp2 = eval_at(x, p2), fm2 = eval_at(x, m2);
      const double d1 = (fp1 - fm1) / (static_cast<double>(p1) - m1);
      const double d2 = (fp2 - fm2) / (static_cast<double>(p2) - m2);
      // Second-order one-sided differences; a kink near x separates them
      // even when it biases d1 and d2 alike.
      const double fwd = (-3 * f0 + 4 * fp2 - fp1) / (static_cast<double>(p1) - orig);
      const double bwd = (3 * f0 - 4 * fm2 + fm1) / (static_cast<double>(orig) - m1);
      const double scale = std::max({std::abs(d1), std::abs(d2), floor});
      // Rounding in f alone moves a difference by about eps_R * |f| / h.
      const double noise = std::numeric_limits<R>::epsilon() * std::max({std::abs(f0), std::abs(fp1), std::abs(fm1)}) / h;
      if (noise > opt.tolerance * scale) break;
      if (std::abs(d1 - d2) > opt.kink_tolerance * scale || std::abs(fwd - bwd) > opt.kink_tolerance * scale) continue;
      // Richardson extrapolation removes the h^2 term; in single precision
      // it would double the rounding noise instead.
      numeric = std::is_same_v<R, double> ? (4 * d2 - d1) / 3 : d1;
    }
    x = orig;
    if (!numeric) {
      ++res.skipped;
      continue;
    }
    const double analytic = f.wrt[t].grad()[i];
    const double rel = std::abs(analytic - *numeric) / std::max({std::abs(analytic), std::abs(*numeric), floor});
    res.max_rel_err = std::max(res.max_rel_err, rel);
    res.passed += rel < opt.tolerance;
    ++res.coords;
  }
  const double sampled = static_cast<double>(res.coords + res.skipped);
  res.pass = res.coords > 0 &&
             static_cast<double>(res.passed) >= opt.min_pass_fraction * static_cast<double>(res.coords) &&
             static_cast<double>(res.coords) >= opt.min_smooth_fraction * sampled;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

template <typename T>
GradCheckResult check_gradients(const std::string& name, const std::function<BasicTensor<T>()>& forward,
                                const std::vector<BasicTensor<T>>& wrt, const GradCheckOptions& opt) {
  const GradProbe<T> p{forward, wrt};
  return check_gradients<T, T>(name, p, p, opt);
}

namespace {

template <typename T>
BasicTensor<T> rand_tensor(Rng& rng, Shape shape, double lo = -1, double hi = 1) {
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return BasicTensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
std::vector<BasicTensor<T>> params_of(const StateDict<T>& s, const std::string& name_part = "") {
  std::vector<BasicTensor<T>> out;
  for (const auto& p : s.params)
    if (name_part.empty() || p.name.find(name_part) != std::string::npos) out.push_back(p.tensor);
  return out;
}

}  // namespace

template <typename T>
std::vector<GradCheckResult> gradcheck_suite(uint64_t seed) {
  std::vector<GradCheckResult> out;
  Rng rng(seed);
  // Each probe is built at the checked precision; float gradients are
  // scored against differences of a double twin holding the same values.
  auto run = [&](const std::string& name, auto build) {
    const uint64_t s = rng.next();
    const GradProbe<T> f = build(T{}, s);
    if constexpr (std::is_same_v<T, double>) {
      GradCheckOptions o = GradCheckOptions::defaults<double>();
      o.seed = rng.next();
      out.push_back(check_gradients<T, T>(name, f, f, o));
    } else {
      const GradProbe<double> ref = build(double{}, s);
      for (size_t t = 0; t < f.wrt.size(); ++t)
        std::copy(f.wrt[t].data().begin(), f.wrt[t].data().end(), ref.wrt[t].data().begin());
      GradCheckOptions o = GradCheckOptions::twin_defaults();
      o.seed = rng.next();
      out.push_back(check_gradients<T, double>(name, f, ref, o));
    }
  };
  auto binary = [&](const std::string& name, auto op) {
    run(name, [op](auto tag, uint64_t s) {
      using U = decltype(tag);
      Rng r(s);
      auto a = rand_tensor<U>(r, {4, 5}), b = rand_tensor<U>(r, {4, 5});
      return GradProbe<U>{[=] { return op(a, b); }, {a, b}};
    });
  };
  auto unary = [&](const std::string& name, Shape shape, auto op) {
    run(name, [op, shape](auto tag, uint64_t s) {
      using U = decltype(tag);
      Rng r(s);
      auto a = rand_tensor<U>(r, shape);
      return GradProbe<U>{[=] { return op(a); }, {a}};
    });
  };

  binary("add", [](const auto& a, const auto& b) { return add(a, b); });
  binary("sub", [](const auto& a, const auto& b) { return sub(a, b); });
  binary("mul", [](const auto& a, const auto& b) { return mul(a, b); });
  unary("scale", {4, 5}, []<typename U>(const BasicTensor<U>& a) { return scale(a, U(-1.7)); });
  unary("sum", {4, 5}, [](const auto& a) { return sum(a); });
  unary("mean", {4, 5}, [](const auto& a) { return mean(a); });
  unary("relu", {4, 5}, [](const auto& a) { return relu(a); });
  unary("reshape", {2, 3, 4}, [](const auto& a) { return reshape(a, Shape{6, 4}); });
  unary("flatten", {2, 3, 4}, [](const auto& a) { return flatten(a, 1); });
  unary("permute", {2, 3, 4}, [](const auto& a) { return permute(a, {2, 0, 1}); });
  run("conv2d", [](auto tag, uint64_t s) {
    using U = decltype(tag);
    Rng r(s);
    auto x = rand_tensor<U>(r, {2, 2, 5, 5}), w = rand_tensor<U>(r, {3, 2, 3, 3}), b = rand_tensor<U>(r, {3});
    return GradProbe<U>{[=] { return conv2d(x, w, b, {2, 2}, {1, 1}); }, {x, w, b}};
  });
  run("conv3d", [](auto tag, uint64_t s) {
    using U = decltype(tag);
    Rng r(s);
    auto x = rand_tensor<U>(r, {1, 2, 4, 4, 4}), w = rand_tensor<U>(r, {2, 2, 3, 3, 3}), b = rand_tensor<U>(r, {2});
    return GradProbe<U>{[=] { return conv3d(x, w, b, {1, 2, 2}, {1, 1, 1}); }, {x, w, b}};
  });
  unary("maxpool2d", {1, 2, 6, 6}, [](const auto& x) { return maxpool2d(x, {3, 3}, {2, 2}, {1, 1}); });
  unary("maxpool3d", {1, 2, 4, 4, 4}, [](const auto& x) { return maxpool3d(x, {2, 2, 2}, {2, 2, 2}); });
  unary("global_avgpool", {2, 3, 2, 3, 3}, [](const auto& x) { return global_avgpool(x); });
  run("linear", [](auto tag, uint64_t s) {
    using U = decltype(tag);
    Rng r(s);
    auto x = rand_tensor<U>(r, {4, 6}), w = rand_tensor<U>(r, {6, 5}), b = rand_tensor<U>(r, {5});
    return GradProbe<U>{[=] { return linear(x, w, b); }, {x, w, b}};
  });
  for (const bool training : {true, false}) {
    run(training ? "batchnorm_train" : "batchnorm_eval", [training](auto tag, uint64_t s) {
      using U = decltype(tag);
      Rng r(s);
      auto x = rand_tensor<U>(r, {4, 3, 2, 2}), g = rand_tensor<U>(r, {3}, 0.5, 1.5), b = rand_tensor<U>(r, {3});
      BasicTensor<U> rm(Shape{3}, U(0.25)), rv(Shape{3}, U(1.5));
      return GradProbe<U>{[=]() mutable { return batchnorm(x, g, b, rm, rv, training); }, {x, g, b}};
    });
  }
  run("softmax_cross_entropy", [](auto tag, uint64_t s) {
    using U = decltype(tag);
    Rng r(s);
    auto z = rand_tensor<U>(r, {5, 4}, -2, 2);
    const std::vector<int> labels{0, 3, 1, 1, 2};
    return GradProbe<U>{[=] { return softmax_cross_entropy(z, std::span<const int>(labels)); }, {z}};
  });
  run("smooth_l1", [](auto tag, uint64_t s) {
    using U = decltype(tag);
    Rng r(s);
    auto d = rand_tensor<U>(r, {60}, -3, 3);
    return GradProbe<U>{[=] { return smooth_l1(d); }, {d}};
  });
  run("crop_pool", [](auto tag, uint64_t s) {
    using U = decltype(tag);
    Rng r(s);
    auto tap = rand_tensor<U>(r, {2, 3, 4, 4});
    const std::vector<Box> boxes{{5, 3, 40, 50}, {-4, 10, 70, 30}};
    return GradProbe<U>{[=] { return crop_pool(tap, std::span<const Box>(boxes), CropSpec{3, 16}, 1); }, {tap}};
  });
  const auto anchors = generate_anchors(3, 3, 16, std::vector<float>{16, 24}, std::vector<float>{0.5f, 1, 2});
  const std::vector<AnchorAssignment> assigned{assign_anchors(anchors, {10, 12, 30, 34}, {}, 48, 48, 1),
                                               assign_anchors(anchors, {20, 5, 44, 25}, {0.5, 0.3, 20}, 48, 48, 2)};
  run("loss_rpn_cls", [&](auto tag, uint64_t s) {
    using U = decltype(tag);
    Rng r(s);
    auto logits = rand_tensor<U>(r, {2, anchors.per_cell(), 3, 3, 2});
    return GradProbe<U>{[=] { return loss_rpn_cls(logits, anchors, std::span<const AnchorAssignment>(assigned)); }, {logits}};
  });
  run("loss_rpn_reg", [&](auto tag, uint64_t s) {
    using U = decltype(tag);
    Rng r(s);
    auto deltas = rand_tensor<U>(r, {2, anchors.per_cell(), 3, 3, 4}, -0.5, 0.5);
    return GradProbe<U>{[=] { return loss_rpn_reg(deltas, anchors, std::span<const AnchorAssignment>(assigned), U(3)); },
                        {deltas}};
  });
  run("loss_roi_reg", [](auto tag, uint64_t s) {
    using U = decltype(tag);
    Rng r(s);
    auto pred = rand_tensor<U>(r, {3, 4}, -0.5, 0.5);
    const std::vector<Box> props{{0, 0, 20, 20}, {5, 5, 30, 25}, {10, 2, 14, 40}};
    const std::vector<Box> gts{{2, 1, 22, 18}, {4, 6, 28, 28}, {9, 0, 16, 44}};
    return GradProbe<U>{[=] { return loss_roi_reg(pred, std::span<const Box>(props), std::span<const Box>(gts), U(1)); },
                        {pred}};
  });
  run("rpn_head", [](auto tag, uint64_t s) {
    using U = decltype(tag);
    Rng r(s);
    RpnHead<U> head(3, 2, r);
    auto tap = rand_tensor<U>(r, {2, 3, 3, 3});
    StateDict<U> st;
    head.collect("rpn", st);
    auto wrt = params_of(st);
    wrt.push_back(tap);
    return GradProbe<U>{[=] {
                          const auto o = head.forward(tap);
                          return add(sum(mul(o.logits, o.logits)), sum(o.deltas));
                        },
                        wrt};
  });
  run("regression_block", [](auto tag, uint64_t s) {
    using U = decltype(tag);
    Rng r(s);
    RegressionBlock<U> block(12, 6, r);
    auto crops = rand_tensor<U>(r, {3, 3, 1, 2, 2});
    StateDict<U> st;
    block.collect("r", st);
    auto wrt = params_of(st);
    wrt.push_back(crops);
    return GradProbe<U>{[=] { return block.forward(crops); }, wrt};
  });
  run("residual_block_2d", [](auto tag, uint64_t s) {
    using U = decltype(tag);
    Rng r(s);
    ResidualBlock<U> block(2, BlockType::Bottleneck, 4, 2, 8, 2, 1, r);
    auto x = rand_tensor<U>(r, {2, 4, 4, 4});
    StateDict<U> st;
    block.collect("b", st);
    auto wrt = params_of(st);
    wrt.push_back(x);
    return GradProbe<U>{[=] { return block.forward(x, Mode::Train); }, wrt};
  });
  run("residual_block_3d", [](auto tag, uint64_t s) {
    using U = decltype(tag);
    Rng r(s);
    ResidualBlock<U> block(3, BlockType::Basic, 3, 3, 3, 1, 1, r);
    auto x = rand_tensor<U>(r, {2, 3, 2, 3, 3});
    StateDict<U> st;
    block.collect("b", st);
    auto wrt = params_of(st);
    wrt.push_back(x);
    return GradProbe<U>{[=] { return block.forward(x, Mode::Train); }, wrt};
  });
  run("rmc_forward", [](auto tag, uint64_t s) {
    using U = decltype(tag);
    BackboneConfig cfg;
    cfg.width = {1, 16};
    cfg.input_size = 32;
    cfg.clip_len = 8;
    cfg.num_classes = 3;
    cfg.tap_channels = 64;
    Backbone<U> net(cfg, s);
    Rng r(mix_seed(s, 1));
    auto clip = rand_tensor<U>(r, {1, 3, 8, 32, 32}, 0, 1);
    auto wrt = params_of(net.state());
    wrt.push_back(clip);
    return GradProbe<U>{[=] { return net.classify_clip(clip, Mode::Eval); }, wrt};
  });
  run("action_net_forward", [](auto tag, uint64_t s) {
    using U = decltype(tag);
    NetConfig cfg;
    cfg.backbone.width = {1, 16};
    cfg.backbone.input_size = 32;
    cfg.backbone.num_classes = 3;
    cfg.backbone.tap_channels = 64;
    cfg.crop_size = 2;
    cfg.anchors = AnchorConfig::preset("micro");
    ActionNet<U> net(cfg, s);
    Rng r(mix_seed(s, 1));
    auto clip = rand_tensor<U>(r, {1, 3, 8, 32, 32}, 0, 1);
    const std::vector<Box> gt(8, Box{6, 4, 22, 20});
    auto wrt = params_of(net.state(), "rmc.");
    wrt.push_back(clip);
    return GradProbe<U>{[=] {
                          return net.forward(clip, Mode::Eval, CropSource::GroundTruth, std::span<const Box>(gt)).action_logits;
                        },
                        wrt};
  });
  return out;
}

std::string format_gradcheck(const std::vector<GradCheckResult>& results) {
  std::string s;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %8s %8s %6s %12s %8s  %s\n", "operation", "coords", "passed", "skipped", "max_rel_err", "seconds", "result");
  s += line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-24s %8lld %8lld %6lld %12.3e %8.3f  %s\n", r.name.c_str(), static_cast<long long>(r.coords),
                  static_cast<long long>(r.passed), static_cast<long long>(r.skipped), r.max_rel_err, r.seconds, r.pass ? "PASS" : "FAIL");
    s += line;
  }
  return s;
}

template GradCheckResult check_gradients<float, float>(const std::string&, const GradProbe<float>&, const GradProbe<float>&, const GradCheckOptions&);
template GradCheckResult check_gradients<float, double>(const std::string&, const GradProbe<float>&, const GradProbe<double>&, const GradCheckOptions&);
template GradCheckResult check_gradients<double, double>(const std::string&, const GradProbe<double>&, const GradProbe<double>&, const GradCheckOptions&);
template GradCheckResult check_gradients<float>(const std::string&, const std::function<Tensor()>&, const std::vector<Tensor>&, const GradCheckOptions&);
template GradCheckResult check_gradients<double>(const std::string&, const std::function<Tensor64()>&, const std::vector<Tensor64>&, const GradCheckOptions&);
template std::vector<GradCheckResult> gradcheck_suite<float>(uint64_t);
template std::vector<GradCheckResult> gradcheck_suite<double>(uint64_t);

}  // namespace rmc
