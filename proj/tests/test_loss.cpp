#include <cmath>

#include <gtest/gtest.h>

#include "autoseg/error.hpp"
#include "autoseg/loss.hpp"
#include "test_util.hpp"

using namespace autoseg;

namespace {

const LossSettings kDefault{};

std::vector<double> channel(const Tensord& t, int64_t bk, int64_t n) {
  return {t.data() + bk * n, t.data() + (bk + 1) * n};
}
std::vector<int> channel(const Mask& t, int64_t bk, int64_t n) {
  return {t.data() + bk * n, t.data() + (bk + 1) * n};
}

}  // namespace

TEST(DiceFocal, SaturatedCorrectPredictionIsNearZero) {
  const Mask t = testutil::random_mask({1, 3, 4, 4, 4}, 1);
  Tensord z(t.shape());
  for (int64_t i = 0; i < z.numel(); ++i) z[i] = t[i] ? 40.0 : -40.0;
  EXPECT_LT(dice_focal_loss(z, t, full_class_mask(1, 3), kDefault), 1e-6);
}

TEST(DiceFocal, HandFormulaAtHalfProbability) {
  Mask t({1, 1, 2, 2, 2}, 0);
  for (int i = 0; i < 4; ++i) t[i] = 1;
  const Tensord z(t.shape(), 0.0);
  const double s = 1e-5;
  const double dice_term = 1.0 - (2 * 0.5 * 4 + s) / (8 * 0.25 + 4 + s);
  const double focal_term = std::pow(0.5, 2.0) * std::log(2.0);
  EXPECT_NEAR(dice_focal_loss(z, t, full_class_mask(1, 1), kDefault), dice_term + focal_term, 1e-15);
}

TEST(DiceFocal, MatchesScalarOracleOnRandomInputs) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const Tensord z = testutil::random_normal<double>({2, 3, 3, 4, 5}, seed, 3.0);
    const Mask t = testutil::random_mask(z.shape(), seed + 50);
    double expect = 0.0;
    for (int64_t bk = 0; bk < 6; ++bk) expect += testutil::dice_focal_scalar(channel(z, bk, 60), channel(t, bk, 60), 1e-5, 2.0);
    EXPECT_NEAR(dice_focal_loss(z, t, full_class_mask(2, 3), kDefault), expect / 6.0, 1e-12);
  }
}

TEST(DiceFocal, MaskedChannelsContributeNothing) {
  const Tensord z = testutil::random_normal<double>({1, 3, 4, 4, 4}, 3);
  const Mask t = testutil::random_mask(z.shape(), 4);
  ClassMask cm({1, 3}, 0);
  cm[0] = 1;
  Tensord g;
  const double v = dice_focal_loss(z, t, cm, kDefault, &g);
  Tensord z0(Shape{1, 1, 4, 4, 4}, channel(z, 0, 64));
  Mask t0(Shape{1, 1, 4, 4, 4}, std::vector<uint8_t>(t.data(), t.data() + 64));
  EXPECT_NEAR(v, dice_focal_loss(z0, t0, full_class_mask(1, 1), kDefault), 1e-12);
  for (int64_t i = 64; i < 192; ++i) EXPECT_EQ(g[i], 0.0);
  EXPECT_THROW(dice_focal_loss(z, t, ClassMask({1, 3}, 0), kDefault), ValidationError);
}

TEST(DiceFocal, ShapeMismatchRejected) {
  EXPECT_THROW(dice_focal_loss(Tensord({1, 2, 2, 2, 2}), Mask({1, 3, 2, 2, 2}), full_class_mask(1, 2), kDefault),
               ShapeError);
}

TEST(DiceFocal, GradientMatchesFiniteDifferences) {
  for (uint64_t seed = 0; seed < 3; ++seed) {
    Tensord z = testutil::random_normal<double>({2, 3, 4, 4, 4}, 10 + seed, 2.0);
    const Mask t = testutil::random_mask(z.shape(), 20 + seed);
    const ClassMask cm = full_class_mask(2, 3);
    Tensord g;
    dice_focal_loss(z, t, cm, kDefault, &g);
    const double h = 1e-5;
    double worst = 0.0;
    for (int64_t i = 0; i < z.numel(); ++i) {
      const double o = z[i];
      z[i] = o + h;
      const double fp = dice_focal_loss(z, t, cm, kDefault);
      z[i] = o - h;
      const double fm = dice_focal_loss(z, t, cm, kDefault);
      z[i] = o;
      const double fd = (fp - fm) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max(1e-6, std::abs(fd) + std::abs(g[i])));
    }
    EXPECT_LT(worst, 1e-4);
  }
}

TEST(DiceFocal, StableForExtremeLogits) {
  Tensord z({1, 1, 1, 1, 4}, std::vector<double>{-800, 800, -800, 800});
  Mask t({1, 1, 1, 1, 4}, std::vector<uint8_t>{1, 0, 0, 1});
  Tensord g;
  const double v = dice_focal_loss(z, t, full_class_mask(1, 1), kDefault, &g);
  EXPECT_TRUE(std::isfinite(v));
  for (double x : g.span()) EXPECT_TRUE(std::isfinite(x));
}

TEST(DiceFocal, MonotoneTowardTarget) {
  Tensord z = testutil::random_normal<double>({1, 1, 4, 4, 4}, 30);
  const Mask t = testutil::random_mask(z.shape(), 31);
  LossSettings dice_only;
  dice_only.focal_gamma = 2.0;
  auto dice_term = [&](const Tensord& zz) {
    double inter = 0, psq = 0, ts = 0;
    for (int64_t i = 0; i < zz.numel(); ++i) {
      const double p = testutil::sigmoid(zz[i]);
      inter += p * t[i];
      psq += p * p;
      ts += t[i];
    }
    return 1 - (2 * inter + 1e-5) / (psq + ts + 1e-5);
  };
  double prev = dice_term(z);
  for (int step = 0; step < 20; ++step) {
    for (int64_t i = 0; i < z.numel(); ++i) z[i] += 0.2 * (t[i] ? 1.0 : -1.0);
    const double cur = dice_term(z);
    EXPECT_LE(cur, prev + 1e-15);
    prev = cur;
  }
}

TEST(DownsampleTarget, IdentityConstantAndCornerConvention) {
  const Mask m = testutil::random_mask({1, 2, 4, 4, 4}, 40);
  EXPECT_EQ(downsample_nearest(m, {4, 4, 4}), m);
  EXPECT_EQ(downsample_nearest(Mask({1, 1, 8, 8, 8}, 1), {4, 4, 4}), Mask({1, 1, 4, 4, 4}, 1));
  Mask cb({1, 1, 4, 4, 4});
  for (int64_t z = 0; z < 4; ++z)
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 4; ++x) cb[(z * 4 + y) * 4 + x] = (z + y + x) % 2 == 0 ? 1 : 0;
  const Mask d = downsample_nearest(cb, {2, 2, 2});
  // Every sampled corner (2i, 2j, 2k) has even coordinate sum.
  for (uint8_t v : d.span()) EXPECT_EQ(v, 1);
  Mask shifted = cb;
  for (auto& v : shifted.span()) v = 1 - v;
  const Mask ds = downsample_nearest(shifted, {2, 2, 2});
  for (uint8_t v : ds.span()) EXPECT_EQ(v, 0);
  EXPECT_THROW(downsample_nearest(cb, {3, 2, 2}), ShapeError);
}

TEST(DeepSupervision, WeightsAndSum) {
  EXPECT_EQ(deep_supervision_weights(5), (std::vector<double>{1.0, 0.5, 0.25, 0.125, 0.0625}));
  const Mask t = testutil::random_mask({1, 3, 8, 8, 8}, 50);
  std::vector<Tensorf> logits;
  for (int i = 0; i < 4; ++i) {
    const int64_t n = 8 >> i;
    logits.push_back(testutil::random_normal<float>({1, 3, n, n, n}, 60 + i));
  }
  const auto r = deep_supervision_loss(logits, t, full_class_mask(1, 3), kDefault);
  double expect = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double li = dice_focal_loss(logits[static_cast<size_t>(i)], downsample_nearest(t, logits[static_cast<size_t>(i)].spatial()),
                                      full_class_mask(1, 3), kDefault);
    EXPECT_EQ(r.level_losses[static_cast<size_t>(i)], li);
    expect += li / (1 << i);
  }
  EXPECT_NEAR(r.total, expect, 1e-12);
  const auto single = deep_supervision_loss(std::vector<Tensorf>{logits[0]}, t, full_class_mask(1, 3), kDefault);
  EXPECT_EQ(single.total, dice_focal_loss(logits[0], t, full_class_mask(1, 3), kDefault));
}

TEST(DeepSupervision, GradientMatchesFiniteDifferencesInDouble) {
  const Mask t = testutil::random_mask({2, 3, 4, 4, 4}, 70);
  std::vector<Tensord> z{testutil::random_normal<double>({2, 3, 4, 4, 4}, 71, 2.0),
                         testutil::random_normal<double>({2, 3, 2, 2, 2}, 72, 2.0),
                         testutil::random_normal<double>({2, 3, 1, 1, 1}, 73, 2.0)};
  ClassMask cm = full_class_mask(2, 3);
  cm[4] = 0;
  const auto r = deep_supervision_loss(z, t, cm, kDefault, true);
  const double h = 1e-5;
  for (size_t l = 0; l < z.size(); ++l) {
    for (int64_t i = 0; i < z[l].numel(); ++i) {
      const double o = z[l][i];
      z[l][i] = o + h;
      const double fp = deep_supervision_loss(z, t, cm, kDefault, false).total;
      z[l][i] = o - h;
      const double fm = deep_supervision_loss(z, t, cm, kDefault, false).total;
      z[l][i] = o;
      const double fd = (fp - fm) / (2 * h);
      const double g = r.grads[l][i];
      EXPECT_LT(std::abs(fd - g), 1e-4 * std::max(1e-3, std::abs(fd) + std::abs(g))) << l << " " << i;
    }
  }
}
