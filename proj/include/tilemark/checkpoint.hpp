#pragma once

// Binary checkpoint, all integers and floats little-endian:
//
//   "TMCK" | u32 version | u32 n, config text (model.* and train.* keys)
//   | i32 epoch | f64 best_val_loss | u32 n, RNG state text
//   | u32 count, count x { u32 n, name | u8 kind | u32 rank | u32 dims[rank] | f32 data }
//   | u64 optimizer step | u32 count, count x { u32 n, name | u32 len | f32 data }
//   | "KCMT"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>

#include "tilemark/config.hpp"
#include "tilemark/optim.hpp"
#include "tilemark/parameters.hpp"

namespace tilemark {

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  KeyValueConfig config;
  int epoch = -1;  // last completed epoch reflected in the parameters
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::string rng_state;
  // Note: copying a Checkpoint shares parameter storage; use
  // parameters.convert<float>() for an independent copy.
  ParameterStore<float> parameters;
  OptimizerState optimizer;
};

// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
// CheckpointError on a bad magic, version mismatch, truncation or trailing bytes.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies every entry of `source` into the same-named entry of `target`.
// CheckpointError when names or shapes disagree.
void restore_parameters(ParameterStore<float>& target, const ParameterStore<float>& source);

}  // namespace tilemark
