#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "tilemark/error.hpp"
#include "tilemark/metrics.hpp"

using namespace tilemark;
namespace fs = std::filesystem;

namespace {

BinaryMask mask_of(int h, int w, std::vector<std::uint8_t> v) {
  BinaryMask m(h, w);
  m.values = std::move(v);
  return m;
}

ProbabilityMap prob_of(int h, int w, std::vector<float> v) {
  ProbabilityMap p(h, w);
  p.values = std::move(v);
  return p;
}

BinaryMask random_mask(int h, int w, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(density);
  BinaryMask m(h, w);
  for (auto& v : m.values) v = coin(rng);
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- binarize / dice / iou -----------------------------------------------------

TEST(Binarize, Examples) {
  EXPECT_EQ(binarize(ProbabilityMap(2, 2, 0.5f), 0.5).values, std::vector<std::uint8_t>(4, 1));
  EXPECT_EQ(binarize(ProbabilityMap(2, 2, 0.9f), 0.95).values, std::vector<std::uint8_t>(4, 0));
  EXPECT_EQ(binarize(prob_of(2, 2, {0.2f, 0.6f, 0.5f, 0.9f}), 0.5).values,
            (std::vector<std::uint8_t>{0, 1, 1, 1}));
}

TEST(Binarize, ThresholdOutsideOpenUnitIntervalIsDomainError) {
  const ProbabilityMap p(2, 2, 0.5f);
  for (double t : {0.0, 1.0, -0.1, 1.5}) EXPECT_THROW(binarize(p, t), DomainError);
}

TEST(Binarize, MonotoneInThreshold) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ProbabilityMap p(16, 16);
  for (auto& v : p.values) v = u(rng);
  long prev = 1 << 30;
  for (double t : sweep_thresholds()) {
    const auto b = binarize(p, t);
    const long n = std::count(b.values.begin(), b.values.end(), 1);
    EXPECT_LE(n, prev);
    prev = n;
  }
}

TEST(Dice, Examples) {
  const auto a = mask_of(2, 4, {1, 1, 1, 1, 0, 0, 0, 0});
  const auto b = mask_of(2, 4, {0, 0, 1, 1, 1, 1, 0, 0});
  const auto c = mask_of(2, 4, {0, 0, 0, 0, 1, 1, 1, 1});
  EXPECT_EQ(dice_coefficient(a, a), 1.0);
  EXPECT_EQ(dice_coefficient(a, c), 0.0);
  EXPECT_EQ(dice_coefficient(a, b), 0.5);
  EXPECT_DOUBLE_EQ(iou(a, b), 2.0 / 6.0);
  EXPECT_EQ(iou(b, b), 1.0);
  const BinaryMask empty(2, 4);
  EXPECT_EQ(dice_coefficient(empty, empty), 1.0);
  EXPECT_EQ(iou(empty, empty), 1.0);
  EXPECT_THROW(dice_coefficient(a, BinaryMask(4, 2)), ShapeError);
  EXPECT_THROW(iou(a, BinaryMask(2, 3)), ShapeError);
}

TEST(Dice, TwoHundredRandomPairsMatchPixelCountingOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> density(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_mask(8, 8, density(rng), rng);
    const auto b = random_mask(8, 8, density(rng), rng);
    long na = 0, nb = 0, both = 0, either = 0;
    for (int i = 0; i < 64; ++i) {
      na += a.values[i];
      nb += b.values[i];
      both += a.values[i] && b.values[i];
      either += a.values[i] || b.values[i];
    }
    const double d_oracle = na + nb == 0 ? 1.0 : 2.0 * both / double(na + nb);
    const double j_oracle = either == 0 ? 1.0 : both / double(either);
    const double d = dice_coefficient(a, b), j = iou(a, b);
    EXPECT_EQ(d, d_oracle);
    EXPECT_EQ(j, j_oracle);
    EXPECT_NEAR(j, d / (2.0 - d), 1e-12);
    EXPECT_NEAR(d, 2.0 * j / (1.0 + j), 1e-12);
  }
}

// ---- threshold sweep -----------------------------------------------------------

TEST(ThresholdSweep, EighteenThresholds) {
  const auto t = sweep_thresholds();
  ASSERT_EQ(t.size(), 18u);
  EXPECT_DOUBLE_EQ(t.front(), 0.10);
  EXPECT_DOUBLE_EQ(t.back(), 0.95);
  for (std::size_t k = 1; k < t.size(); ++k) EXPECT_NEAR(t[k] - t[k - 1], 0.05, 1e-12);
}

TEST(ThresholdSweep, BinaryPredictionsScorePerfectly) {
  std::mt19937_64 rng(3);
  std::vector<ProbabilityMap> probs;
  std::vector<BinaryMask> gts;
  for (int i = 0; i < 4; ++i) {
    gts.push_back(random_mask(8, 8, 0.3, rng));
    ProbabilityMap p(8, 8);
    for (int k = 0; k < 64; ++k) p.values[k] = gts.back().values[k];
    probs.push_back(p);
  }
  const auto r = threshold_sweep(probs, gts);
  ASSERT_EQ(r.rows.size(), 18u);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.mean_dice, 1.0);
    EXPECT_EQ(row.mean_iou, 1.0);
  }
  EXPECT_EQ(r.mean_dice, 1.0);
}

TEST(ThresholdSweep, HandcraftedMapMatchesBruteForce) {
  const auto prob = prob_of(4, 4, {0.05f, 0.12f, 0.33f, 0.47f,  //
                                   0.50f, 0.58f, 0.61f, 0.74f,  //
                                   0.80f, 0.86f, 0.91f, 0.97f,  //
                                   0.15f, 0.25f, 0.65f, 0.99f});
  const auto gt = mask_of(4, 4, {0, 0, 1, 0, 1, 1, 0, 1, 1, 1, 1, 1, 0, 1, 0, 1});
  const auto r = threshold_sweep({prob}, {gt});

  double dice_sum = 0, iou_sum = 0;
  for (int k = 0; k < 18; ++k) {
    const double t = 0.10 + 0.05 * k;
    long tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < 16; ++i) {
      const bool p = double(prob.values[i]) >= (10 + 5 * k) / 100.0;
      tp += p && gt.values[i];
      fp += p && !gt.values[i];
      fn += !p && gt.values[i];
    }
    const double d = 2.0 * tp / double(2 * tp + fp + fn);
    const double j = tp / double(tp + fp + fn);
    EXPECT_NEAR(r.rows[k].threshold, t, 1e-12);
    EXPECT_NEAR(r.rows[k].mean_dice, d, 1e-12) << "threshold " << t;
    EXPECT_NEAR(r.rows[k].mean_iou, j, 1e-12);
    dice_sum += d;
    iou_sum += j;
  }
  EXPECT_NEAR(r.mean_dice, dice_sum / 18, 1e-12);
  EXPECT_NEAR(r.mean_iou, iou_sum / 18, 1e-12);
}

TEST(ThresholdSweep, AveragesOverImages) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<ProbabilityMap> probs;
  std::vector<BinaryMask> gts;
  for (int i = 0; i < 3; ++i) {
    ProbabilityMap p(6, 6);
    for (auto& v : p.values) v = u(rng);
    probs.push_back(p);
    gts.push_back(random_mask(6, 6, 0.4, rng));
  }
  const auto all = threshold_sweep(probs, gts);
  for (std::size_t k = 0; k < 18; ++k) {
    double d = 0;
    for (int i = 0; i < 3; ++i) d += threshold_sweep({probs[i]}, {gts[i]}).rows[k].mean_dice;
    EXPECT_NEAR(all.rows[k].mean_dice, d / 3, 1e-12);
  }
}

TEST(ThresholdSweep, EmptyOrMisalignedIsDomainError) {
  EXPECT_THROW(threshold_sweep({}, {}), DomainError);
  EXPECT_THROW(threshold_sweep({ProbabilityMap(2, 2)}, {}), DomainError);
}

// ---- grid ------------------------------------------------------------------------

TEST(Grid, BandPartition) {
  EXPECT_EQ(band_sizes(256), (std::array<int, 3>{86, 85, 85}));
  EXPECT_EQ(band_sizes(64), (std::array<int, 3>{22, 21, 21}));
  EXPECT_EQ(band_sizes(9), (std::array<int, 3>{3, 3, 3}));
  EXPECT_EQ(band_sizes(5), (std::array<int, 3>{2, 2, 1}));
}

TEST(Grid, UniformMasks) {
  for (const auto& c : downscale_to_grid(BinaryMask(256, 256, 1)))
    for (double f : c) EXPECT_EQ(f, 1.0);
  for (const auto& c : downscale_to_grid(BinaryMask(256, 256, 0)))
    for (double f : c) EXPECT_EQ(f, 0.0);
  EXPECT_THROW(downscale_to_grid(BinaryMask(2, 8)), DomainError);
}

TEST(Grid, TopLeftBandFillsOneCell) {
  BinaryMask m(256, 256);
  for (int y = 0; y < 86; ++y)
    for (int x = 0; x < 86; ++x) m.at(y, x) = 1;
  const auto g = downscale_to_grid(m);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(g[r][c], r == 0 && c == 0 ? 1.0 : 0.0);
}

TEST(Grid, CellAreasConservePositiveTotals) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> side(3, 40);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = trial == 0 ? 256 : side(rng), w = trial == 0 ? 256 : side(rng);
    const auto m = random_mask(h, w, 0.37, rng);
    const auto g = downscale_to_grid(m);
    const auto bh = band_sizes(h), bw = band_sizes(w);
    EXPECT_EQ(bh[0] + bh[1] + bh[2], h);
    long total = 0, recovered = 0;
    for (auto v : m.values) total += v;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) recovered += std::lround(g[r][c] * bh[r] * bw[c]);
    EXPECT_EQ(recovered, total);
  }
}

// ---- grading ---------------------------------------------------------------------

TEST(GradeThresholds, ConstantFractionsFallBackToHalfMean) {
  // 5x5 cells with 10 positives each: every nonzero fraction is 0.4.
  BinaryMask n(15, 15);
  for (int cr = 0; cr < 3; ++cr)
    for (int cc = 0; cc < 3; ++cc)
      for (int k = 0; k < 10; ++k) n.at(cr * 5 + k / 5, cc * 5 + k % 5) = 1;
  const auto t = derive_grade_thresholds({n, BinaryMask(15, 15)});
  EXPECT_NEAR(t.t1, 0.2, 1e-12);
  EXPECT_NEAR(t.t2, 0.4, 1e-12);
}

TEST(GradeThresholds, ThreeValueExample) {
  // Cells of 5x5 = 25 pixels holding 5, 10 and 15 positives.
  BinaryMask m(15, 15);
  const int counts[3] = {5, 10, 15};
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < counts[i]; ++k) m.at(k / 5, i * 5 + k % 5) = 1;
  const auto [mu, sigma] = grade_statistic_moments({m}, GradeStatistic::kCellFractions);
  EXPECT_NEAR(mu, 0.4, 1e-12);
  EXPECT_NEAR(sigma, std::sqrt(0.08 / 3), 1e-12);
  const auto t = derive_grade_thresholds({m});
  EXPECT_NEAR(t.t1, 0.2367, 1e-4);
  EXPECT_NEAR(t.t2, 0.5633, 1e-4);
  EXPECT_NEAR(t.t1, 0.4 - std::sqrt(0.08 / 3), 1e-12);
}

TEST(GradeThresholds, NoPositivesIsDomainError) {
  EXPECT_THROW(derive_grade_thresholds({BinaryMask(9, 9), BinaryMask(9, 9)}), DomainError);
  EXPECT_THROW(derive_grade_thresholds({}), DomainError);
}

TEST(GradeThresholds, ImageStatistic) {
  BinaryMask a(10, 10), b(10, 10);
  for (int k = 0; k < 20; ++k) a.values[k] = 1;
  for (int k = 0; k < 60; ++k) b.values[k] = 1;
  const auto [mu, sigma] = grade_statistic_moments({a, b, BinaryMask(10, 10)}, GradeStatistic::kImageFractions);
  EXPECT_NEAR(mu, 0.4, 1e-12);
  EXPECT_NEAR(sigma, 0.2, 1e-12);
}

TEST(GradeThresholds, Validation) {
  EXPECT_NO_THROW((GradeThresholds{0.2, 0.5, 0.5}.validate()));
  EXPECT_THROW((GradeThresholds{0.5, 0.5, 0.5}.validate()), ConfigError);
  EXPECT_THROW((GradeThresholds{0.0, 0.5, 0.5}.validate()), ConfigError);
  EXPECT_THROW((GradeThresholds{0.2, 1.5, 0.5}.validate()), ConfigError);
  EXPECT_THROW((GradeThresholds{0.2, 0.5, 1.0}.validate()), ConfigError);
}

TEST(GradePatches, BoundaryConventions) {
  const GradeThresholds t{0.2, 0.5, 0.5};
  EXPECT_EQ(grade_fraction(0.0, t), Grade::kNone);
  EXPECT_EQ(grade_fraction(1e-9, t), Grade::kLow);
  EXPECT_EQ(grade_fraction(0.2, t), Grade::kLow);
  EXPECT_EQ(grade_fraction(0.3, t), Grade::kMiddle);
  EXPECT_EQ(grade_fraction(0.5, t), Grade::kMiddle);
  EXPECT_EQ(grade_fraction(0.7, t), Grade::kHigh);
  EXPECT_EQ(grade_fraction(1.0, t), Grade::kHigh);
  GridFractions f{};
  f[1][2] = 0.7;
  const auto g = grade_patches(f, t);
  EXPECT_EQ(g.grades[1][2], Grade::kHigh);
  EXPECT_EQ(g.grades[0][0], Grade::kNone);
  EXPECT_EQ(g.fractions[1][2], 0.7);
  EXPECT_THROW(grade_patches(f, GradeThresholds{0.6, 0.5, 0.5}), ConfigError);
}

TEST(GradePatches, TotalOverUnitInterval) {
  const GradeThresholds t{0.13, 0.61, 0.5};
  for (int i = 0; i <= 1000; ++i) {
    const double f = i / 1000.0;
    const int g = static_cast<int>(grade_fraction(f, t));
    const int expected = f == 0 ? 0 : f <= 0.13 ? 1 : f <= 0.61 ? 2 : 3;
    EXPECT_EQ(g, expected) << f;
  }
}

// ---- confusion -------------------------------------------------------------------

PatchGrid uniform_grid(Grade g) {
  PatchGrid p;
  for (auto& row : p.grades) row.fill(g);
  return p;
}

TEST(Confusion, PerfectPredictionIsDiagonal) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> grade(0, 3);
  std::vector<PatchGrid> grids(5);
  for (auto& g : grids)
    for (auto& row : g.grades)
      for (auto& v : row) v = static_cast<Grade>(grade(rng));
  const auto cm = patch_confusion(grids, grids);
  EXPECT_EQ(cm.trace(), 45u);
  EXPECT_EQ(cm.total(), 45u);
  for (int c = 0; c < 4; ++c) {
    const auto g = static_cast<Grade>(c);
    if (cm.precision(g)) EXPECT_EQ(*cm.precision(g), 1.0);
    if (cm.recall(g)) EXPECT_EQ(*cm.recall(g), 1.0);
  }
}

TEST(Confusion, MiddleVersusHigh) {
  const auto cm = patch_confusion({uniform_grid(Grade::kHigh)}, {uniform_grid(Grade::kMiddle)});
  EXPECT_EQ(cm.counts[2][3], 9u);
  EXPECT_EQ(cm.recall(Grade::kMiddle), 0.0);
  EXPECT_EQ(cm.precision(Grade::kHigh), 0.0);
  EXPECT_FALSE(cm.precision(Grade::kMiddle).has_value());
  EXPECT_FALSE(cm.recall(Grade::kHigh).has_value());
  EXPECT_FALSE(cm.recall(Grade::kNone).has_value());
}

TEST(Confusion, TwentyRandomGridPairsMatchBruteForceTally) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> grade(0, 3);
  std::vector<PatchGrid> pred(20), truth(20);
  for (int i = 0; i < 20; ++i)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        pred[i].grades[r][c] = static_cast<Grade>(grade(rng));
        truth[i].grades[r][c] = static_cast<Grade>(grade(rng));
      }
  const auto cm = patch_confusion(pred, truth);
  for (int t = 0; t < 4; ++t)
    for (int p = 0; p < 4; ++p) {
      std::size_t n = 0;
      for (int i = 0; i < 20; ++i)
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c)
            n += static_cast<int>(truth[i].grades[r][c]) == t && static_cast<int>(pred[i].grades[r][c]) == p;
      EXPECT_EQ(cm.counts[t][p], n);
    }
  EXPECT_EQ(cm.total(), 9u * 20u);
  for (int k = 0; k < 4; ++k) {
    std::size_t col = 0, row = 0;
    for (int j = 0; j < 4; ++j) {
      col += cm.counts[j][k];
      row += cm.counts[k][j];
    }
    const auto g = static_cast<Grade>(k);
    if (col) EXPECT_DOUBLE_EQ(*cm.precision(g), double(cm.counts[k][k]) / col);
    if (row) EXPECT_DOUBLE_EQ(*cm.recall(g), double(cm.counts[k][k]) / row);
  }
  EXPECT_THROW(patch_confusion(pred, {}), DomainError);
}

TEST(Confusion, GridImageLevels) {
  PatchGrid g;
  g.grades[0] = {Grade::kNone, Grade::kLow, Grade::kMiddle};
  g.grades[1][0] = Grade::kHigh;
  const auto img = grid_to_image(g);
  EXPECT_EQ(img.at(0, 0), 0);
  EXPECT_EQ(img.at(0, 1), 85);
  EXPECT_EQ(img.at(0, 2), 170);
  EXPECT_EQ(img.at(1, 0), 255);
}

// ---- reports ---------------------------------------------------------------------

TEST(Reports, SweepCsvRoundTrip) {
  const auto dir = fs::temp_directory_path() / "tilemark_test_metrics";
  fs::create_directories(dir);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ProbabilityMap p(8, 8);
  for (auto& v : p.values) v = u(rng);
  const auto sweep = threshold_sweep({p}, {random_mask(8, 8, 0.5, rng)});
  write_sweep_csv(dir / "sweep.csv", sweep);
  const auto back = read_sweep_csv(dir / "sweep.csv");
  ASSERT_EQ(back.rows.size(), 18u);
  for (std::size_t k = 0; k < 18; ++k) {
    EXPECT_EQ(back.rows[k].threshold, sweep.rows[k].threshold);
    EXPECT_EQ(back.rows[k].mean_dice, sweep.rows[k].mean_dice);
    EXPECT_EQ(back.rows[k].mean_iou, sweep.rows[k].mean_iou);
  }
  EXPECT_EQ(back.mean_dice, sweep.mean_dice);
  EXPECT_EQ(back.mean_iou, sweep.mean_iou);
  fs::remove_all(dir);
}

TEST(Reports, ConfusionAndClassCsv) {
  const auto dir = fs::temp_directory_path() / "tilemark_test_metrics_cm";
  fs::create_directories(dir);
  const auto cm = patch_confusion({uniform_grid(Grade::kHigh)}, {uniform_grid(Grade::kMiddle)});
  write_confusion_csv(dir / "cm.csv", cm);
  EXPECT_EQ(slurp(dir / "cm.csv"),
            "truth\\predicted,none,low,middle,high\n"
            "none,0,0,0,0\nlow,0,0,0,0\nmiddle,0,0,0,9\nhigh,0,0,0,0\n");
  write_class_metrics_csv(dir / "cls.csv", cm);
  const auto text = slurp(dir / "cls.csv");
  EXPECT_NE(text.find("class,precision,recall\n"), std::string::npos);
  EXPECT_NE(text.find("middle,,0\n"), std::string::npos);
  EXPECT_NE(text.find("high,0,\n"), std::string::npos);
  fs::remove_all(dir);
}

}  // namespace
