#include <gtest/gtest.h>

#include "rmc/gradcheck.hpp"
#include "rmc/ops.hpp"

using namespace rmc;

namespace {

// x^3 with a deliberately wrong derivative when `broken` is set.
BasicTensor<double> cube(const BasicTensor<double>& a, bool broken) {
  std::vector<double> out;
  for (double v : a.data()) out.push_back(v * v * v);
  return BasicTensor<double>::from_op(a.shape(), std::move(out), {a}, [broken](Node<double>& self) {
    auto g = self.parent_grad(0);
    const auto& x = self.parents[0]->data;
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.pass_grad[i] * (broken ? 2.9 : 3.0) * x[i] * x[i];
  });
}

void expect_all_pass(const std::vector<GradCheckResult>& results) {
  ASSERT_FALSE(results.empty());
  for (const auto& r : results) {
    EXPECT_TRUE(r.pass) << r.name << " max_rel_err=" << r.max_rel_err << " passed=" << r.passed << "/" << r.coords
                        << " skipped=" << r.skipped;
    EXPECT_GT(r.coords, 0) << r.name;
  }
}

}  // namespace

TEST(GradCheck, DetectsAWrongDerivative) {
  const BasicTensor<double> x(Shape{3, 4}, std::vector<double>{.1, .2, .3, .4, .5, .6, -.7, -.8, .9, 1.1, 1.2, -1.3}, true);
  const auto opt = GradCheckOptions::defaults<double>();
  EXPECT_TRUE(check_gradients<double>("cube", [&] { return sum(cube(x, false)); }, {x}, opt).pass);
  const auto bad = check_gradients<double>("cube", [&] { return sum(cube(x, true)); }, {x}, opt);
  EXPECT_FALSE(bad.pass);
  EXPECT_GT(bad.max_rel_err, 0.01);
}

TEST(GradCheck, FloatSuitePasses) { expect_all_pass(gradcheck_suite<float>(1)); }

TEST(GradCheck, DoubleSuitePasses) {
  const auto results = gradcheck_suite<double>(1);
  expect_all_pass(results);
  for (const auto& r : results) EXPECT_LT(r.max_rel_err, 1e-6) << r.name;
}
