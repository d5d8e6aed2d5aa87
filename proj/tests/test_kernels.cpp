#include <cmath>

#include <gtest/gtest.h>

#include "autoseg/kernels.hpp"
#include "autoseg/reference_kernels.hpp"
#include "test_util.hpp"

using namespace autoseg;
using testutil::random_normal;

namespace {

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

struct ConvCase {
  int ci, co, k, stride;
  int64_t d, h, w;
  bool bias;
};

std::string case_name(const ConvCase& c) {
  return "ci" + std::to_string(c.ci) + "_co" + std::to_string(c.co) + "_k" + std::to_string(c.k) + "_s" +
         std::to_string(c.stride) + "_" + std::to_string(c.d) + "x" + std::to_string(c.h) + "x" + std::to_string(c.w) +
         (c.bias ? "_bias" : "");
}

void PrintTo(const ConvCase& c, std::ostream* os) { *os << case_name(c); }

class ConvAgreement : public ::testing::TestWithParam<ConvCase> {};

}  // namespace

TEST_P(ConvAgreement, FastMatchesReference) {
  const ConvCase c = GetParam();
  const kernels::ConvParams p{c.k, c.stride, c.k / 2};
  const Tensord x = random_normal<double>({2, c.ci, c.d, c.h, c.w}, 1);
  const Tensord w = random_normal<double>({c.co, c.ci, c.k, c.k, c.k}, 2);
  const Tensord b = random_normal<double>({c.co}, 3);
  Tensord y1, y2;
  kernels::conv3d_forward(x, w, c.bias ? &b : nullptr, p, y1);
  reference::conv3d_forward(x, w, c.bias ? &b : nullptr, p, y2);
  EXPECT_LT(max_abs_diff(y1, y2), 1e-10);

  const Tensord dy = random_normal<double>(y1.shape(), 4);
  Tensord dx1, dx2, dw1(w.shape()), dw2(w.shape()), db1(b.shape()), db2(b.shape());
  kernels::conv3d_backward(x, w, dy, p, &dx1, dw1, c.bias ? &db1 : nullptr);
  reference::conv3d_backward(x, w, dy, p, &dx2, dw2, c.bias ? &db2 : nullptr);
  EXPECT_LT(max_abs_diff(dx1, dx2), 1e-10);
  EXPECT_LT(max_abs_diff(dw1, dw2), 1e-10);
  if (c.bias) EXPECT_LT(max_abs_diff(db1, db2), 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvAgreement,
                         ::testing::Values(ConvCase{3, 4, 3, 1, 5, 6, 7, false}, ConvCase{4, 2, 3, 2, 6, 4, 8, false},
                                           ConvCase{5, 3, 1, 1, 3, 4, 5, true}, ConvCase{1, 1, 3, 1, 1, 1, 1, true}),
                         [](const ::testing::TestParamInfo<ConvCase>& info) { return case_name(info.param); });

TEST(ConvReference, GradientsMatchFiniteDifferences) {
  const kernels::ConvParams p{3, 2, 1};
  Tensord x = random_normal<double>({1, 2, 4, 4, 4}, 5);
  Tensord w = random_normal<double>({3, 2, 3, 3, 3}, 6);
  Tensord y;
  reference::conv3d_forward<double>(x, w, nullptr, p, y);
  const Tensord r = random_normal<double>(y.shape(), 7);
  Tensord dx, dw(w.shape());
  reference::conv3d_backward<double>(x, w, r, p, &dx, dw, nullptr);
  auto f = [&]() {
    Tensord out;
    reference::conv3d_forward<double>(x, w, nullptr, p, out);
    return dot(out, r);
  };
  const double h = 1e-6;
  for (int64_t i : {0L, 17L, 63L, 100L}) {
    const double o = x[i];
    x[i] = o + h;
    const double fp = f();
    x[i] = o - h;
    const double fm = f();
    x[i] = o;
    EXPECT_NEAR((fp - fm) / (2 * h), dx[i], 1e-6);
  }
  for (int64_t i : {0L, 50L, 161L}) {
    const double o = w[i];
    w[i] = o + h;
    const double fp = f();
    w[i] = o - h;
    const double fm = f();
    w[i] = o;
    EXPECT_NEAR((fp - fm) / (2 * h), dw[i], 1e-6);
  }
}

TEST(BatchNorm, FastMatchesReferenceAndFiniteDifferences) {
  Tensord x = random_normal<double>({2, 3, 3, 4, 2}, 8);
  const Tensord g = random_normal<double>({3}, 9);
  const Tensord b = random_normal<double>({3}, 10);
  std::vector<double> rm1(3, 0.0), rv1(3, 1.0), rm2 = rm1, rv2 = rv1;
  Tensord y1, y2;
  kernels::BatchNormCache<double> c1, c2;
  kernels::batchnorm_forward(x, g, b, rm1, rv1, true, 0.1, 1e-5, y1, &c1);
  reference::batchnorm_forward(x, g, b, rm2, rv2, true, 0.1, 1e-5, y2, &c2);
  EXPECT_LT(max_abs_diff(y1, y2), 1e-12);
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(rm1[c], rm2[c], 1e-14);
    EXPECT_NEAR(rv1[c], rv2[c], 1e-14);
  }
  // Running variance uses the unbiased estimate.
  double mean = 0, ss = 0;
  const int64_t n = 2 * 24;
  for (int64_t bb = 0; bb < 2; ++bb)
    for (int64_t v = 0; v < 24; ++v) mean += x[(bb * 3 + 0) * 24 + v];
  mean /= n;
  for (int64_t bb = 0; bb < 2; ++bb)
    for (int64_t v = 0; v < 24; ++v) ss += std::pow(x[(bb * 3 + 0) * 24 + v] - mean, 2);
  EXPECT_NEAR(rm1[0], 0.1 * mean, 1e-14);
  EXPECT_NEAR(rv1[0], 0.9 + 0.1 * ss / (n - 1), 1e-14);

  const Tensord r = random_normal<double>(x.shape(), 11);
  Tensord dx1, dx2, dg1({3}), dg2({3}), db1({3}), db2({3});
  kernels::batchnorm_backward(r, g, c1, dx1, dg1, db1);
  reference::batchnorm_backward(r, g, c2, dx2, dg2, db2);
  EXPECT_LT(max_abs_diff(dx1, dx2), 1e-12);
  EXPECT_LT(max_abs_diff(dg1, dg2), 1e-12);
  EXPECT_LT(max_abs_diff(db1, db2), 1e-12);

  auto f = [&]() {
    std::vector<double> m(3, 0.0), v(3, 1.0);
    Tensord out;
    reference::batchnorm_forward<double>(x, g, b, m, v, true, 0.1, 1e-5, out, nullptr);
    return dot(out, r);
  };
  const double h = 1e-6;
  for (int64_t i : {0L, 25L, 99L, 143L}) {
    const double o = x[i];
    x[i] = o + h;
    const double fp = f();
    x[i] = o - h;
    const double fm = f();
    x[i] = o;
    EXPECT_NEAR((fp - fm) / (2 * h), dx1[i], 1e-6);
  }
}

TEST(BatchNorm, EvalUsesRunningStats) {
  const Tensord x = random_normal<double>({1, 2, 2, 2, 2}, 12);
  const Tensord g({2}, 2.0), b({2}, 0.5);
  std::vector<double> rm{1.0, -1.0}, rv{4.0, 0.25};
  Tensord y;
  kernels::batchnorm_forward<double>(x, g, b, rm, rv, false, 0.1, 0.0, y, nullptr);
  EXPECT_NEAR(y[0], 2.0 * (x[0] - 1.0) / 2.0 + 0.5, 1e-14);
  EXPECT_NEAR(y[8], 2.0 * (x[8] + 1.0) / 0.5 + 0.5, 1e-14);
  EXPECT_EQ(rm[0], 1.0);
}

TEST(Upsample, FastMatchesReferenceAndAdjoint) {
  const Tensord x = random_normal<double>({2, 3, 3, 4, 5}, 13);
  Tensord y1, y2;
  kernels::upsample2x_forward(x, y1);
  reference::upsample2x_forward(x, y2);
  ASSERT_EQ(y1.shape(), (Shape{2, 3, 6, 8, 10}));
  EXPECT_LT(max_abs_diff(y1, y2), 1e-13);
  const Tensord r = random_normal<double>(y1.shape(), 14);
  Tensord dx1, dx2;
  kernels::upsample2x_backward(r, dx1);
  reference::upsample2x_backward(r, dx2);
  EXPECT_LT(max_abs_diff(dx1, dx2), 1e-12);
  EXPECT_NEAR(dot(y1, r), dot(x, dx1), 1e-10);
}

TEST(Upsample, HalfPixelWeights) {
  Tensord x({1, 1, 1, 1, 2}, std::vector<double>{0.0, 4.0});
  Tensord y;
  kernels::upsample2x_forward(x, y);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2, 4}));
  for (int r = 0; r < 4; ++r) {
    EXPECT_EQ(std::vector<double>(y.data() + 4 * r, y.data() + 4 * r + 4), (std::vector<double>{0.0, 1.0, 3.0, 4.0}));
  }
}

TEST(Relu, ForwardBackward) {
  const Tensorf x({4}, std::vector<float>{-1, 0, 2, -3});
  Tensorf y, dx;
  std::vector<float> expect{0, 0, 2, 0};
  kernels::relu_forward(x, y);
  EXPECT_EQ(y.storage(), expect);
  kernels::relu_backward(x, Tensorf({4}, 1.0f), dx);
  EXPECT_EQ(dx.storage(), (std::vector<float>{0, 0, 1, 0}));
}
