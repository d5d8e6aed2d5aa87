#include <cmath>

#include <gtest/gtest.h>

#include "autoseg/error.hpp"
#include "autoseg/transforms.hpp"
#include "test_util.hpp"

using namespace autoseg;

namespace {

Tensorf positive_image(int64_t c, const Shape3& s, uint64_t seed) {
  Tensorf t = testutil::random_normal<float>({c, s.d, s.h, s.w}, seed);
  for (auto& v : t.span()) v = 10.0f + std::abs(v);
  return t;
}

}  // namespace

TEST(Normalize, ZeroMeanUnitStdOverForeground) {
  Tensorf t = positive_image(3, {6, 6, 6}, 1);
  for (int64_t i = 0; i < 50; ++i) t[i] = 0.0f;                          // background in channel 0
  std::fill(t.data() + 2 * 216, t.data() + 3 * 216, 0.0f);                // absent channel 2
  normalize_inplace(t);
  for (int64_t c = 0; c < 2; ++c) {
    double s = 0, ss = 0;
    int64_t n = 0;
    for (int64_t i = 0; i < 216; ++i) {
      const float v = t[c * 216 + i];
      if (c == 0 && i < 50) {
        EXPECT_EQ(v, 0.0f);
        continue;
      }
      s += v;
      ss += v * v;
      ++n;
    }
    EXPECT_NEAR(s / n, 0.0, 1e-5);
    EXPECT_NEAR(ss / n, 1.0, 1e-4);
  }
  for (int64_t i = 0; i < 216; ++i) EXPECT_EQ(t[2 * 216 + i], 0.0f);
}

TEST(Normalize, ConstantChannelBecomesZero) {
  Tensorf t({1, 2, 2, 2}, 5.0f);
  normalize_inplace(t);
  for (float v : t.span()) EXPECT_EQ(v, 0.0f);
}

TEST(MapLabels, BratsChannels) {
  LabelVolume l;
  l.data = Tensor<int32_t>({1, 1, 4}, std::vector<int32_t>{0, 1, 2, 3});
  const MultiLabelMask m = map_labels(l, SubregionSpec::brats());
  ASSERT_EQ(m.data.shape(), (Shape{3, 1, 1, 4}));
  const std::vector<uint8_t> expect{0, 1, 1, 1, /*tc*/ 0, 1, 0, 1, /*et*/ 0, 0, 0, 1};
  EXPECT_EQ(m.data.storage(), expect);
  l.data[0] = 7;
  EXPECT_THROW(map_labels(l, SubregionSpec::brats()), ValidationError);
}

TEST(Augment, DeterministicInSeed) {
  AugmentationPolicy p;
  p.affine_prob = p.noise_prob = p.blur_prob = p.intensity_scale_prob = p.intensity_shift_prob = 1.0;
  const Tensorf base = positive_image(2, {8, 8, 8}, 3);
  const Mask mbase = testutil::random_mask({3, 8, 8, 8}, 4);
  Tensorf a = base, b = base;
  Mask ma = mbase, mb = mbase;
  augment_inplace(a, ma, p, 77);
  augment_inplace(b, mb, p, 77);
  EXPECT_EQ(a, b);
  EXPECT_EQ(ma, mb);
  Tensorf c = base;
  Mask mc = mbase;
  augment_inplace(c, mc, p, 78);
  EXPECT_NE(a, c);
}

TEST(Augment, IdentityPolicyLeavesDataAlone) {
  const Tensorf base = positive_image(2, {5, 6, 7}, 3);
  const Mask mbase = testutil::random_mask({3, 5, 6, 7}, 4);
  Tensorf a = base;
  Mask ma = mbase;
  augment_inplace(a, ma, AugmentationPolicy::identity(), 5);
  EXPECT_EQ(a, base);
  EXPECT_EQ(ma, mbase);
}

TEST(Augment, FlipsMoveImageAndMaskTogether) {
  AugmentationPolicy p = AugmentationPolicy::identity();
  p.flip_prob = {1.0, 1.0, 1.0};
  Tensorf img({1, 3, 3, 3}, 0.0f);
  Mask m({1, 3, 3, 3}, 0);
  img[0] = 5.0f;
  m[0] = 1;
  augment_inplace(img, m, p, 1);
  EXPECT_EQ(img[26], 5.0f);
  EXPECT_EQ(m[26], 1);
}

TEST(Augment, IntensityOpsSkipAbsentChannel) {
  AugmentationPolicy p = AugmentationPolicy::identity();
  p.noise_prob = p.intensity_scale_prob = p.intensity_shift_prob = p.blur_prob = 1.0;
  Tensorf img = positive_image(2, {6, 6, 6}, 8);
  std::fill(img.data() + 216, img.data() + 432, 0.0f);
  Mask m({3, 6, 6, 6}, 0);
  augment_inplace(img, m, p, 3);
  for (int64_t i = 216; i < 432; ++i) EXPECT_EQ(img[i], 0.0f);
}

TEST(Augment, RejectsInvalidPolicy) {
  AugmentationPolicy p;
  p.noise_prob = 1.5;
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(ChannelDropout, RateAndOtherChannelsUntouched) {
  AugmentationPolicy p = AugmentationPolicy::identity();
  p.channel_dropout = ChannelDropout{2, 0.5};
  const Tensorf base = positive_image(4, {4, 4, 4}, 9);
  const Mask mbase = testutil::random_mask({3, 4, 4, 4}, 10);
  int fired = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    Tensorf t = base;
    Mask m = mbase;
    augment_inplace(t, m, p, static_cast<uint64_t>(i));
    const bool zero = std::all_of(t.data() + 128, t.data() + 192, [](float v) { return v == 0.0f; });
    EXPECT_EQ(zero, channel_dropout_fires(p, static_cast<uint64_t>(i)));
    fired += zero;
    for (int64_t j = 0; j < t.numel(); ++j) {
      if (j < 128 || j >= 192) ASSERT_EQ(t[j], base[j]);
    }
    ASSERT_EQ(m, mbase);
  }
  EXPECT_NEAR(static_cast<double>(fired) / n, 0.5, 0.04);
}

TEST(CropPatch, PadsSmallVolumesAndHitsForeground) {
  const Tensorf img = positive_image(1, {4, 10, 12}, 1);
  Mask m({1, 4, 10, 12}, 0);
  m[(2 * 10 + 7) * 12 + 9] = 1;
  for (uint64_t s = 0; s < 20; ++s) {
    auto [pi, pm] = crop_patch(img, m, {8, 4, 4}, s, 1.0);
    EXPECT_EQ(pi.shape(), (Shape{1, 8, 4, 4}));
    EXPECT_EQ(pm.shape(), (Shape{1, 8, 4, 4}));
    EXPECT_EQ(std::count(pm.span().begin(), pm.span().end(), 1), 1);
  }
}

TEST(PadFlip, PadIsSymmetricAndFlipIsInvolution) {
  Tensor<int32_t> t({1, 2, 2, 2});
  for (int i = 0; i < 8; ++i) t[i] = i + 1;
  std::array<int64_t, 3> lead{};
  const auto p = pad_to(t, {4, 4, 4}, &lead);
  EXPECT_EQ(lead, (std::array<int64_t, 3>{1, 1, 1}));
  EXPECT_EQ(p[((1 * 4) + 1) * 4 + 1], 1);
  auto f = t;
  for (int a = 0; a < 3; ++a) {
    flip_axis(f, a);
    flip_axis(f, a);
  }
  EXPECT_EQ(f, t);
}
