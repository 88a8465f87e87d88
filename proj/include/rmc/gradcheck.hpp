#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rmc/tensor.hpp"

namespace rmc {

struct GradCheckOptions {
  /// Central-difference step relative to max(1, |x|).
  double eps = 1e-3;
  /// Largest accepted relative error per coordinate.
  double tolerance = 1e-2;
  /// Fraction of coordinates that must meet the tolerance.
  double min_pass_fraction = 0.99;
  /// Coordinates whose central differences at h and h/2, or whose forward
  /// and backward differences, disagree by more than this relative amount
  /// straddle a kink and are skipped.
  double kink_tolerance = 0.1;
  /// Fraction of sampled coordinates that must be scored.
  double min_smooth_fraction = 0.9;
  /// Coordinates checked per call, sampled without replacement.
  int max_coords = 200;
  uint64_t seed = 0;

  /// eps 1e-3, tolerance 1e-2 for float; eps 1e-3, tolerance 1e-6 for double.
  template <typename T>
  static GradCheckOptions defaults();
  /// Float gradients against double differences: eps 1e-3, tolerance 1e-2.
  static GradCheckOptions twin_defaults();
};

/// A function of some tensors, rebuilt on every call.
template <typename T>
struct GradProbe {
  std::function<BasicTensor<T>()> forward;
  std::vector<BasicTensor<T>> wrt;
};

struct GradCheckResult {
  std::string name;
  int64_t coords = 0;
  int64_t passed = 0;
  /// Sampled coordinates near a kink or below the rounding floor.
  int64_t skipped = 0;
  double max_rel_err = 0;
  double seconds = 0;
  bool pass = false;
};

/// Reverse-mode gradients of `f` against central differences of `ref`,
/// which must compute the same function of identically shaped tensors,
/// possibly at a higher precision. Coordinates whose differences at h and
/// h/2 disagree straddle a kink and are counted but not scored.
template <typename T, typename R>
GradCheckResult check_gradients(const std::string& name, const GradProbe<T>& f, const GradProbe<R>& ref,
                                const GradCheckOptions& opt);

/// Compares reverse-mode gradients of <forward(), P> for a fixed random P
/// against central differences with respect to every tensor in `wrt`.
/// Relative error is |a - n| / max(|a|, |n|, 1e-3 * max|a|).
template <typename T>
GradCheckResult check_gradients(const std::string& name, const std::function<BasicTensor<T>()>& forward,
                                const std::vector<BasicTensor<T>>& wrt, const GradCheckOptions& opt);

/// Checks every differentiable operation of the library on random inputs.
template <typename T>
std::vector<GradCheckResult> gradcheck_suite(uint64_t seed);

std::string format_gradcheck(const std::vector<GradCheckResult>& results);

}  // namespace rmc
