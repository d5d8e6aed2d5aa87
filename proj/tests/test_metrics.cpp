#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "autoseg/error.hpp"
#include "autoseg/metrics.hpp"
#include "autoseg/synthetic.hpp"
#include "test_util.hpp"

using namespace autoseg;
namespace fs = std::filesystem;

namespace {

Mask box(int64_t n, int64_t z0, int64_t z1, int64_t y0, int64_t y1, int64_t x0, int64_t x1) {
  Mask m({n, n, n}, 0);
  for (int64_t z = z0; z < z1; ++z)
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = x0; x < x1; ++x) m[(z * n + y) * n + x] = 1;
  return m;
}

// Random blobby masks so that boundaries are non-trivial.
Mask random_blob(const Shape3& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mask m({s.d, s.h, s.w}, 0);
  const int kind = static_cast<int>(u(rng) * 4);
  if (kind == 0) return m;  // empty sometimes
  if (kind == 1) {
    const double p = u(rng);
    for (auto& v : m.span()) v = u(rng) < p;
    return m;
  }
  const double cz = u(rng) * s.d, cy = u(rng) * s.h, cx = u(rng) * s.w;
  const double r = 1.0 + u(rng) * 0.5 * std::max({s.d, s.h, s.w});
  for (int64_t z = 0; z < s.d; ++z)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t x = 0; x < s.w; ++x) {
        const double d2 = (z - cz) * (z - cz) + (y - cy) * (y - cy) + (x - cx) * (x - cx);
        m[(z * s.h + y) * s.w + x] = d2 <= r * r;
      }
  return m;
}

}  // namespace

TEST(Confusion, WorkedExample) {
  const Mask p({2, 2, 2}, std::vector<uint8_t>{1, 1, 0, 0, 1, 0, 0, 0});
  const Mask r({2, 2, 2}, std::vector<uint8_t>{1, 0, 1, 0, 1, 0, 0, 1});
  const Confusion c = confusion(p, r);
  EXPECT_EQ(c, (Confusion{2, 1, 2, 3}));
  EXPECT_DOUBLE_EQ(dice(c), 4.0 / 7.0);
  const auto [sens, spec] = sensitivity_specificity(c);
  EXPECT_DOUBLE_EQ(sens, 0.5);
  EXPECT_DOUBLE_EQ(spec, 0.75);
  EXPECT_THROW(confusion(p, Mask({2, 2, 1}, 0)), ShapeError);
}

TEST(Confusion, EmptyConventions) {
  const Mask z({3, 3, 3}, 0), o({3, 3, 3}, 1);
  EXPECT_EQ(dice(z, z), 1.0);
  EXPECT_EQ(dice(o, z), 0.0);
  EXPECT_EQ(sensitivity_specificity(o, z).first, 1.0);
  EXPECT_EQ(sensitivity_specificity(o, o).second, 1.0);
  EXPECT_EQ(sensitivity_specificity(z, o).first, 0.0);
}

TEST(Boundary, HollowCube) {
  const Mask m = box(5, 0, 5, 0, 5, 0, 5);
  const Mask b = boundary_voxels(m);
  int64_t n = 0;
  for (auto v : b.span()) n += v;
  EXPECT_EQ(n, 125 - 27);  // out of bounds counts as background
  EXPECT_EQ(b[(2 * 5 + 2) * 5 + 2], 0);
}

TEST(Edt, MatchesBruteForceWithSpacing) {
  std::mt19937_64 rng(4);
  const Spacing sp{1.5, 0.75, 2.0};
  for (int t = 0; t < 20; ++t) {
    const Mask f = testutil::random_mask({5, 6, 7}, 40 + t, 0.05);
    const auto d = squared_edt(f, sp);
    for (int64_t z = 0; z < 5; ++z)
      for (int64_t y = 0; y < 6; ++y)
        for (int64_t x = 0; x < 7; ++x) {
          double best = INFINITY;
          for (int64_t a = 0; a < 5; ++a)
            for (int64_t b = 0; b < 6; ++b)
              for (int64_t c = 0; c < 7; ++c) {
                if (!f[(a * 6 + b) * 7 + c]) continue;
                const double e0 = (z - a) * sp[0], e1 = (y - b) * sp[1], e2 = (x - c) * sp[2];
                best = std::min(best, e0 * e0 + e1 * e1 + e2 * e2);
              }
          const double got = d[static_cast<size_t>((z * 6 + y) * 7 + x)];
          if (std::isinf(best)) {
            ASSERT_TRUE(std::isinf(got));
          } else {
            ASSERT_NEAR(got, best, 1e-9);
          }
        }
  }
}

TEST(Hd95, WorkedExamples) {
  const Spacing unit{1, 1, 1};
  const Mask a = box(10, 2, 5, 2, 5, 2, 5);
  EXPECT_EQ(hd95(a, a, unit).value, 0.0);
  const Mask shifted = box(10, 4, 7, 2, 5, 2, 5);
  EXPECT_NEAR(hd95(a, shifted, unit).value, 2.0, 1e-12);
  const Mask z({10, 10, 10}, 0);
  EXPECT_EQ(hd95(z, z, unit).value, 0.0);
  const Hausdorff pen = hd95(a, z, {1, 2, 3});
  EXPECT_TRUE(pen.penalized);
  EXPECT_NEAR(pen.value, std::sqrt(100.0 + 400.0 + 900.0), 1e-12);
  HausdorffOptions fixed;
  fixed.penalty = HausdorffOptions::EmptyPenalty::fixed;
  EXPECT_EQ(hd95(z, a, unit, fixed).value, 373.13);
}

TEST(Hd95, RandomPairsMatchBruteForce) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> ext(1, 9);
  std::uniform_real_distribution<double> sp(0.5, 2.0);
  for (int t = 0; t < 150; ++t) {
    const Shape3 s{ext(rng), ext(rng), ext(rng)};
    const Spacing spacing{sp(rng), sp(rng), sp(rng)};
    const Mask a = random_blob(s, rng), b = random_blob(s, rng);
    const double pen = volume_diagonal(s, spacing);
    const Hausdorff h = hd95(a, b, spacing);
    ASSERT_NEAR(h.value, testutil::hd95_bruteforce(a, b, s.d, s.h, s.w, spacing, pen), 1e-9) << t;
    ASSERT_EQ(h.value, hd95(b, a, spacing).value);  // symmetric
  }
}

TEST(Hd95, SpacingScalesAndTranslationInvariant) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    const Mask a = random_blob({8, 8, 8}, rng), b = random_blob({8, 8, 8}, rng);
    if (hd95(a, b, {1, 1, 1}).penalized) continue;
    EXPECT_NEAR(hd95(a, b, {3, 3, 3}).value, 3 * hd95(a, b, {1, 1, 1}).value, 1e-9);
  }
  // Translating both masks inside a larger grid leaves interior boundaries unchanged.
  const Mask a = box(12, 2, 5, 3, 6, 2, 4), b = box(12, 3, 6, 2, 7, 2, 5);
  const Mask a2 = box(12, 5, 8, 6, 9, 5, 7), b2 = box(12, 6, 9, 5, 10, 5, 8);
  EXPECT_NEAR(hd95(a, b, {1, 1, 1}).value, hd95(a2, b2, {1, 1, 1}).value, 1e-12);
}

TEST(Cohort, EvaluateWithMissingPredictionAndAverageRow) {
  const auto dir = testutil::temp_dir("cohort");
  SyntheticOptions o;
  o.num_folds = 2;
  const std::string dl = make_synthetic_dataset(dir.string(), 3, {12, 12, 12}, 5, o);
  const DatasetManifest m = load_manifest(dl, dir.string());
  const auto preds = dir / "preds";
  fs::create_directories(preds);
  // Perfect prediction for case 0, empty for case 1, none for case 2.
  LabelVolume ref0 = read_label(*m.cases[0].label_path);
  write_volume(ref0, (preds / prediction_filename(m.cases[0].case_id)).string());
  LabelVolume empty = read_label(*m.cases[1].label_path);
  empty.data.fill(0);
  write_volume(empty, (preds / prediction_filename(m.cases[1].case_id)).string());

  const CohortReport r = evaluate_cohort(preds.string(), m, SubregionSpec::brats());
  EXPECT_EQ(r.missing, (std::vector<std::string>{m.cases[2].case_id}));
  ASSERT_EQ(r.cases.size(), 2u);
  EXPECT_EQ(r.row_order, (std::vector<int>{2, 1, 0}));
  for (const auto& sm : r.cases[0].per_class) {
    EXPECT_EQ(sm.dice, 1.0);
    EXPECT_EQ(sm.hd95, 0.0);
  }
  for (const auto& sm : r.cases[1].per_class) {
    EXPECT_EQ(sm.dice, 0.0);
    EXPECT_TRUE(sm.hd95_penalized);
    EXPECT_NEAR(sm.hd95, std::sqrt(3.0 * 144.0), 1e-12);
  }
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(r.summary[k][0].mean, 0.5, 1e-12);
    EXPECT_NEAR(r.summary[k][0].std, 0.5, 1e-12);
  }
  double mean_of_means = 0;
  for (int k = 0; k < 3; ++k) mean_of_means += r.summary[k][1].mean / 3;
  EXPECT_NEAR(r.average[1].mean, mean_of_means, 1e-9);
  EXPECT_NEAR(r.average[0].mean, 0.5, 1e-9);
  EXPECT_NEAR(r.average[0].std, 0.5, 1e-9);
  const std::string table = r.table();
  ASSERT_NE(table.find("ET"), std::string::npos);
  EXPECT_LT(table.find("ET"), table.find("TC"));
  EXPECT_LT(table.find("TC"), table.find("WT"));
  EXPECT_LT(table.find("WT"), table.find("Avg"));
  EXPECT_NE(r.csv().find(m.cases[2].case_id + ",missing"), std::string::npos);
}

TEST(Cohort, AggregateHandComputed) {
  auto cm = [](const std::string& id, std::vector<double> d) {
    CaseMetrics c{id, {}};
    for (double v : d) c.per_class.push_back({v, 2 * v, v, 1.0, false});
    return c;
  };
  const CohortReport r = aggregate({cm("b", {0.9, 0.6, 0.3}), cm("a", {0.7, 0.4, 0.1})}, SubregionSpec::brats());
  EXPECT_EQ(r.cases[0].case_id, "a");
  EXPECT_NEAR(r.summary[0][0].mean, 0.8, 1e-12);
  EXPECT_NEAR(r.summary[0][0].std, 0.1, 1e-12);
  EXPECT_NEAR(r.average[0].mean, (0.8 + 0.5 + 0.2) / 3, 1e-12);
  // per-case averages 0.6 and 0.4
  EXPECT_NEAR(r.average[0].std, 0.1, 1e-12);
  EXPECT_NEAR(r.average[3].std, 0.0, 1e-12);
}
