#pragma once

#include <memory>

#include "tilemark/config.hpp"
#include "tilemark/transunet.hpp"
#include "tilemark/unet.hpp"

namespace tilemark {

// Architecture selection plus the hyperparameters of the selected family.
struct ModelConfig {
  ModelKind kind = ModelKind::kImprovedUNet;
  BasicUNetConfig basic;
  ImprovedUNetConfig improved;
  TransUNetConfig transunet;

  void validate() const;
};

template <typename T>
std::unique_ptr<SegmentationModel<T>> make_model(const ModelConfig& config);

// Writes the `model.*` keys relevant to config.kind.
void write_model_config(const ModelConfig& config, KeyValueConfig& out);
// Reads `model.*` keys on top of the full-size defaults for model.kind.
// Keys that do not belong to the selected family raise ConfigError.
ModelConfig read_model_config(const KeyValueConfig& in);

}  // namespace tilemark
