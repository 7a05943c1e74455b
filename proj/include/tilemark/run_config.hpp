#pragma once

// Complete run description for the command-line tool: model, training,
// data handling and evaluation settings, with named presets.
//
// A config file may set `preset = <name>` at top level; its remaining keys
// override the preset. Without a preset the reference setup for `model.kind`
// (default improved_unet) is the base. Keys outside the model, train, data
// and eval sections, or unknown within them, raise ConfigError.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tilemark/metrics.hpp"
#include "tilemark/train.hpp"

namespace tilemark {

struct DataConfig {
  // Share of a single dataset directory held out for validation.
  double val_fraction = 0.2;
  std::uint64_t split_seed = 0;
  // Variants per training sample (1 = no augmentation, 12 = 256 -> 3072).
  int augment_factor = 1;
  std::uint64_t augment_seed = 0;

  void validate() const;
};

struct EvalConfig {
  // Fixed (t1, t2); derived from the ground truth when absent.
  std::optional<std::pair<double, double>> grade_thresholds;
  double pixel_threshold = 0.5;
  GradeStatistic grade_statistic = GradeStatistic::kCellFractions;

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;

  static std::vector<std::string> preset_names();
  // ConfigError for unknown names.
  static RunConfig preset(const std::string& name);

  static RunConfig from_kv(const KeyValueConfig& kv);
  static RunConfig parse(std::string_view text) { return from_kv(KeyValueConfig::parse(text)); }
  static RunConfig load(const std::string& path) { return from_kv(KeyValueConfig::load(path)); }

  // Every key, fully resolved (no preset reference).
  KeyValueConfig to_kv() const;
  std::string serialize() const { return to_kv().serialize(); }

  void validate() const;
};

GradeStatistic grade_statistic_from_string(const std::string& name);
std::string to_string(GradeStatistic statistic);

}  // namespace tilemark
