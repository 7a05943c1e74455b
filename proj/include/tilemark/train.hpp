#pragma once

// Deterministic minibatch training with validation-loss early stopping.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "tilemark/checkpoint.hpp"
#include "tilemark/data.hpp"
#include "tilemark/losses.hpp"
#include "tilemark/model_config.hpp"
#include "tilemark/optim.hpp"
#include "tilemark/schedules.hpp"

namespace tilemark {

struct TrainConfig {
  ModelKind model = ModelKind::kImprovedUNet;
  int max_epochs = 100;
  // Non-improving epochs tolerated in a row; training stops on the next
  // one. nullopt disables early stopping.
  std::optional<int> patience;
  int batch_size = 8;
  ScheduleSpec schedule;
  LossKind loss = LossKind::kDice;
  OptimizerSpec optimizer;
  std::uint64_t seed = 0;
  // Stops after this many optimizer steps (0 = no limit); the epoch in
  // progress is cut short but still validated and logged.
  int max_steps = 0;

  // 500 epochs, patience 50, dice loss, lr 1e-3 halved every 16 epochs, Adam.
  static TrainConfig basic_unet_paper();
  // 100 epochs without early stopping, dice loss, lr 1e-3 halved every 16, Adam.
  static TrainConfig improved_unet_paper();
  // 150 epochs, lr 0.01 (1 - i/150)^0.9, 0.5 dice + 0.5 BCE, SGD momentum 0.9.
  static TrainConfig transunet_paper();
  static TrainConfig paper_preset(ModelKind kind);

  void validate() const;
};

// train.* keys.
void write_train_config(const TrainConfig& config, KeyValueConfig& out);
// Reads train.* keys over the reference preset for `model`; unknown train.*
// keys raise ConfigError.
TrainConfig read_train_config(const KeyValueConfig& in, ModelKind model);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_time = 0.0;  // seconds since training started

  bool operator==(const EpochLog&) const = default;
};

// epoch,lr,train_loss,val_loss with shortest round-trip numbers. Wall time
// is left out so logs of identical runs are byte-identical.
void write_train_log_csv(const std::filesystem::path& path, const std::vector<EpochLog>& logs);
std::vector<EpochLog> read_train_log_csv(const std::filesystem::path& path);

struct TrainOptions {
  // Continue from a checkpoint: parameters, optimizer state, RNG state and
  // best loss are restored and training resumes at checkpoint.epoch + 1.
  const Checkpoint* resume = nullptr;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;  // lowest validation loss; earliest epoch on ties
  std::vector<EpochLog> logs;
  std::uint64_t steps = 0;
  bool stopped_early = false;
};

// NumericalError on a non-finite loss (naming epoch and batch); ShapeError
// when samples differ in size or the model cannot take them; DomainError on
// empty sets.
TrainResult train(const ModelConfig& model_config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& config,
                  const TrainOptions& options = {});

// Mean per-sample loss in inference mode.
double evaluate_loss(const SegmentationModel<float>& model, const ParameterStore<float>& store,
                     const std::vector<Sample>& samples, LossKind loss, int batch_size);

// Model and parameters reconstructed from a checkpoint's config and arrays.
struct LoadedModel {
  ModelConfig config;
  std::unique_ptr<SegmentationModel<float>> model;
  ParameterStore<float> parameters;
};
LoadedModel instantiate(const Checkpoint& checkpoint);

}  // namespace tilemark
