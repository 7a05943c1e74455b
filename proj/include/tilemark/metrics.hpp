#pragma once

// Pixel-level scores over a threshold sweep and the coarse 3 x 3 patch
// grading protocol with a four-class confusion matrix.

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tilemark/image.hpp"

namespace tilemark {

// pixel = 1 iff prob >= t; DomainError unless 0 < t < 1.
BinaryMask binarize(const ProbabilityMap& prob, double t);

// 2|A n B| / (|A| + |B|), 1 when both are empty. ShapeError on size mismatch.
double dice_coefficient(const BinaryMask& pred, const BinaryMask& gt);
// |A n B| / |A u B|, 1 when both are empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

// 0.10, 0.15, ..., 0.95 (18 values), computed as (10 + 5k) / 100.
std::vector<double> sweep_thresholds();

struct SweepRow {
  double threshold = 0.0;
  double mean_dice = 0.0;
  double mean_iou = 0.0;
};

struct ThresholdSweepResult {
  std::vector<SweepRow> rows;
  double mean_dice = 0.0;  // mean of the per-threshold means
  double mean_iou = 0.0;
};

// Per threshold: per-image dice and IoU averaged over images; the overall
// score averages over thresholds. DomainError on empty or misaligned input.
ThresholdSweepResult threshold_sweep(const std::vector<ProbabilityMap>& probs,
                                     const std::vector<BinaryMask>& gts);

// ---- Patch grading ------------------------------------------------------------

constexpr int kGridSide = 3;
using GridFractions = std::array<std::array<double, kGridSide>, kGridSide>;

enum class Grade { kNone = 0, kLow = 1, kMiddle = 2, kHigh = 3 };
constexpr int kGradeCount = 4;
std::string to_string(Grade grade);

// Contiguous bands along one axis; the first (n % 3) bands are one pixel
// longer, so 256 splits as 86, 85, 85.
std::array<int, kGridSide> band_sizes(int n);

// Positive fraction of each cell. DomainError when H or W < 3.
GridFractions downscale_to_grid(const BinaryMask& mask);

// How the spread of positive-pixel amounts is measured.
enum class GradeStatistic {
  kCellFractions,   // nonzero cell fractions of positive-containing masks
  kImageFractions,  // whole-image positive fraction of positive-containing masks
};

struct GradeThresholds {
  double t1 = 0.2;  // low | middle boundary
  double t2 = 0.5;  // middle | high boundary
  double pixel_positive_threshold = 0.5;

  void validate() const;  // ConfigError unless 0 < t1 < t2 <= 1 and 0 < p < 1
};

// t1 = mu - sigma and t2 = min(mu + sigma, 1) with population sigma; when
// mu - sigma <= 0 or t1 >= t2 the lower bound falls back to mu / 2.
// DomainError when no mask has a positive pixel.
GradeThresholds derive_grade_thresholds(const std::vector<BinaryMask>& gt_masks,
                                        GradeStatistic statistic = GradeStatistic::kCellFractions);

// Mean and population standard deviation of the values the statistic
// collects; exposed for reporting.
std::pair<double, double> grade_statistic_moments(const std::vector<BinaryMask>& gt_masks,
                                                  GradeStatistic statistic);

struct PatchGrid {
  std::array<std::array<Grade, kGridSide>, kGridSide> grades{};
  GridFractions fractions{};
};

// f = 0 -> none, f <= t1 -> low, f <= t2 -> middle, else high.
Grade grade_fraction(double f, const GradeThresholds& thresholds);
PatchGrid grade_patches(const GridFractions& fractions, const GradeThresholds& thresholds);

struct ConfusionMatrix4 {
  // counts[truth][predicted]
  std::array<std::array<std::size_t, kGradeCount>, kGradeCount> counts{};

  std::size_t total() const;
  std::size_t trace() const;
  // One-vs-rest ratios; absent when the denominator is zero.
  std::optional<double> precision(Grade g) const;
  std::optional<double> recall(Grade g) const;
};

ConfusionMatrix4 patch_confusion(const std::vector<PatchGrid>& pred,
                                 const std::vector<PatchGrid>& truth);

// 3 x 3 grayscale with levels 0, 85, 170, 255 for none..high.
Plane<std::uint8_t> grid_to_image(const PatchGrid& grid);

// ---- Reports ------------------------------------------------------------------

// threshold,mean_dice,mean_iou rows, then a "mean" summary row.
void write_sweep_csv(const std::filesystem::path& path, const ThresholdSweepResult& sweep);
ThresholdSweepResult read_sweep_csv(const std::filesystem::path& path);

// Header "truth\predicted,none,low,middle,high" and one row per true grade.
void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix4& cm);
// class,precision,recall with empty fields for undefined ratios.
void write_class_metrics_csv(const std::filesystem::path& path, const ConfusionMatrix4& cm);

}  // namespace tilemark
