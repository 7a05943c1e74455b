#include "tilemark/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tilemark/config.hpp"
#include "tilemark/error.hpp"

namespace tilemark {

namespace {

void check_same_size(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": masks are " + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " and " + std::to_string(b.height) + "x" +
                     std::to_string(b.width));
  }
}

struct Overlap {
  std::size_t a = 0, b = 0, both = 0;
};

Overlap overlap(const BinaryMask& pred, const BinaryMask& gt, const char* what) {
  check_same_size(pred, gt, what);
  Overlap o;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool p = pred.values[i] != 0, g = gt.values[i] != 0;
    o.a += p;
    o.b += g;
    o.both += p && g;
  }
  return o;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::string optional_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

}  // namespace

BinaryMask binarize(const ProbabilityMap& prob, double t) {
  if (!(t > 0.0 && t < 1.0)) throw DomainError("binarization threshold must lie in (0, 1)");
  BinaryMask out(prob.height, prob.width);
  for (std::size_t i = 0; i < prob.values.size(); ++i) out.values[i] = prob.values[i] >= t;
  return out;
}

double dice_coefficient(const BinaryMask& pred, const BinaryMask& gt) {
  const auto o = overlap(pred, gt, "dice_coefficient");
  if (o.a + o.b == 0) return 1.0;
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

double iou(const BinaryMask& pred, const BinaryMask& gt) {
  const auto o = overlap(pred, gt, "iou");
  const std::size_t uni = o.a + o.b - o.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.both) / static_cast<double>(uni);
}

std::vector<double> sweep_thresholds() {
  std::vector<double> out;
  for (int k = 0; k < 18; ++k) out.push_back((10 + 5 * k) / 100.0);
  return out;
}

ThresholdSweepResult threshold_sweep(const std::vector<ProbabilityMap>& probs,
                                     const std::vector<BinaryMask>& gts) {
  if (probs.empty()) throw DomainError("threshold_sweep: no images");
  if (probs.size() != gts.size()) throw DomainError("threshold_sweep: list lengths differ");
  ThresholdSweepResult result;
  const double n = static_cast<double>(probs.size());
  for (double t : sweep_thresholds()) {
    SweepRow row{t, 0.0, 0.0};
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const BinaryMask pred = binarize(probs[i], t);
      row.mean_dice += dice_coefficient(pred, gts[i]);
      row.mean_iou += iou(pred, gts[i]);
    }
    row.mean_dice /= n;
    row.mean_iou /= n;
    result.rows.push_back(row);
  }
  for (const auto& r : result.rows) {
    result.mean_dice += r.mean_dice;
    result.mean_iou += r.mean_iou;
  }
  result.mean_dice /= static_cast<double>(result.rows.size());
  result.mean_iou /= static_cast<double>(result.rows.size());
  return result;
}

std::string to_string(Grade grade) {
  switch (grade) {
    case Grade::kNone: return "none";
    case Grade::kLow: return "low";
    case Grade::kMiddle: return "middle";
    case Grade::kHigh: return "high";
  }
  return "?";
}

std::array<int, kGridSide> band_sizes(int n) {
  std::array<int, kGridSide> out{};
  for (int i = 0; i < kGridSide; ++i) out[i] = n / kGridSide + (i < n % kGridSide ? 1 : 0);
  return out;
}

GridFractions downscale_to_grid(const BinaryMask& mask) {
  if (mask.height < kGridSide || mask.width < kGridSide) {
    throw DomainError("downscale_to_grid: mask smaller than 3x3");
  }
  const auto rows = band_sizes(mask.height), cols = band_sizes(mask.width);
  GridFractions out{};
  int y0 = 0;
  for (int r = 0; r < kGridSide; ++r) {
    int x0 = 0;
    for (int c = 0; c < kGridSide; ++c) {
      std::size_t count = 0;
      for (int y = y0; y < y0 + rows[r]; ++y) {
        for (int x = x0; x < x0 + cols[c]; ++x) count += mask.at(y, x) != 0;
      }
      out[r][c] = static_cast<double>(count) / (static_cast<double>(rows[r]) * cols[c]);
      x0 += cols[c];
    }
    y0 += rows[r];
  }
  return out;
}

void GradeThresholds::validate() const {
  if (!(t1 > 0.0 && t1 < t2 && t2 <= 1.0)) {
    throw ConfigError("grade thresholds need 0 < t1 < t2 <= 1, got t1=" + format_double(t1) +
                      " t2=" + format_double(t2));
  }
  if (!(pixel_positive_threshold > 0.0 && pixel_positive_threshold < 1.0)) {
    throw ConfigError("pixel_positive_threshold must lie in (0, 1)");
  }
}

std::pair<double, double> grade_statistic_moments(const std::vector<BinaryMask>& gt_masks,
                                                  GradeStatistic statistic) {
  std::vector<double> values;
  for (const auto& m : gt_masks) {
    std::size_t positives = 0;
    for (auto v : m.values) positives += v != 0;
    if (positives == 0) continue;
    if (statistic == GradeStatistic::kImageFractions) {
      values.push_back(static_cast<double>(positives) / static_cast<double>(m.values.size()));
      continue;
    }
    for (const auto& row : downscale_to_grid(m)) {
      for (double f : row) {
        if (f > 0.0) values.push_back(f);
      }
    }
  }
  if (values.empty()) throw DomainError("grade thresholds: no ground-truth mask has positives");
  // Identical values: report the exact value and zero spread rather than
  // summation round-off.
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) return {*lo, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

GradeThresholds derive_grade_thresholds(const std::vector<BinaryMask>& gt_masks,
                                        GradeStatistic statistic) {
  const auto [mu, sigma] = grade_statistic_moments(gt_masks, statistic);
  GradeThresholds t;
  t.t2 = std::min(mu + sigma, 1.0);
  t.t1 = mu - sigma;
  if (t.t1 <= 0.0 || t.t1 >= t.t2) t.t1 = mu / 2.0;
  t.validate();
  return t;
}

Grade grade_fraction(double f, const GradeThresholds& thresholds) {
  if (f <= 0.0) return Grade::kNone;
  if (f <= thresholds.t1) return Grade::kLow;
  if (f <= thresholds.t2) return Grade::kMiddle;
  return Grade::kHigh;
}

PatchGrid grade_patches(const GridFractions& fractions, const GradeThresholds& thresholds) {
  thresholds.validate();
  PatchGrid grid;
  grid.fractions = fractions;
  for (int r = 0; r < kGridSide; ++r) {
    for (int c = 0; c < kGridSide; ++c) {
      const double f = fractions[r][c];
      if (!(f >= 0.0 && f <= 1.0)) throw DomainError("cell fraction outside [0, 1]");
      grid.grades[r][c] = grade_fraction(f, thresholds);
    }
  }
  return grid;
}

std::size_t ConfusionMatrix4::total() const {
  std::size_t n = 0;
  for (const auto& row : counts) {
    for (auto v : row) n += v;
  }
  return n;
}

std::size_t ConfusionMatrix4::trace() const {
  std::size_t n = 0;
  for (int i = 0; i < kGradeCount; ++i) n += counts[i][i];
  return n;
}

std::optional<double> ConfusionMatrix4::precision(Grade g) const {
  const int c = static_cast<int>(g);
  std::size_t col = 0;
  for (int r = 0; r < kGradeCount; ++r) col += counts[r][c];
  if (col == 0) return std::nullopt;
  return static_cast<double>(counts[c][c]) / static_cast<double>(col);
}

std::optional<double> ConfusionMatrix4::recall(Grade g) const {
  const int r = static_cast<int>(g);
  std::size_t row = 0;
  for (int c = 0; c < kGradeCount; ++c) row += counts[r][c];
  if (row == 0) return std::nullopt;
  return static_cast<double>(counts[r][r]) / static_cast<double>(row);
}

ConfusionMatrix4 patch_confusion(const std::vector<PatchGrid>& pred,
                                 const std::vector<PatchGrid>& truth) {
  if (pred.size() != truth.size()) throw DomainError("patch_confusion: list lengths differ");
  ConfusionMatrix4 cm;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (int r = 0; r < kGridSide; ++r) {
      for (int c = 0; c < kGridSide; ++c) {
        ++cm.counts[static_cast<int>(truth[i].grades[r][c])][static_cast<int>(pred[i].grades[r][c])];
      }
    }
  }
  return cm;
}

Plane<std::uint8_t> grid_to_image(const PatchGrid& grid) {
  Plane<std::uint8_t> out(kGridSide, kGridSide);
  for (int r = 0; r < kGridSide; ++r) {
    for (int c = 0; c < kGridSide; ++c) {
      out.at(r, c) = static_cast<std::uint8_t>(85 * static_cast<int>(grid.grades[r][c]));
    }
  }
  return out;
}

void write_sweep_csv(const std::filesystem::path& path, const ThresholdSweepResult& sweep) {
  auto out = open_out(path);
  out << "threshold,mean_dice,mean_iou\n";
  for (const auto& r : sweep.rows) {
    out << format_double(r.threshold) << ',' << format_double(r.mean_dice) << ','
        << format_double(r.mean_iou) << '\n';
  }
  out << "mean," << format_double(sweep.mean_dice) << ',' << format_double(sweep.mean_iou)
      << '\n';
}

ThresholdSweepResult read_sweep_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "threshold,mean_dice,mean_iou") {
    throw Error(path.string() + ": unexpected header");
  }
  ThresholdSweepResult result;
  bool have_summary = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (have_summary) throw Error(path.string() + ": rows after the summary row");
    std::stringstream ss(line);
    std::string a, b, c, extra;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ',') ||
        std::getline(ss, extra, ',')) {
      throw Error(path.string() + ": malformed row '" + line + "'");
    }
    const double d = parse_double("mean_dice", b), i = parse_double("mean_iou", c);
    if (a == "mean") {
      result.mean_dice = d;
      result.mean_iou = i;
      have_summary = true;
    } else {
      result.rows.push_back({parse_double("threshold", a), d, i});
    }
  }
  if (!have_summary) throw Error(path.string() + ": missing summary row");
  return result;
}

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix4& cm) {
  auto out = open_out(path);
  out << "truth\\predicted";
  for (int c = 0; c < kGradeCount; ++c) out << ',' << to_string(static_cast<Grade>(c));
  out << '\n';
  for (int r = 0; r < kGradeCount; ++r) {
    out << to_string(static_cast<Grade>(r));
    for (int c = 0; c < kGradeCount; ++c) out << ',' << cm.counts[r][c];
    out << '\n';
  }
}

void write_class_metrics_csv(const std::filesystem::path& path, const ConfusionMatrix4& cm) {
  auto out = open_out(path);
  out << "class,precision,recall\n";
  for (int g = 0; g < kGradeCount; ++g) {
    const auto grade = static_cast<Grade>(g);
    out << to_string(grade) << ',' << optional_field(cm.precision(grade)) << ','
        << optional_field(cm.recall(grade)) << '\n';
  }
}

}  // namespace tilemark
