#include "tilemark/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "tilemark/error.hpp"

namespace tilemark {

TrainConfig TrainConfig::basic_unet_paper() {
  TrainConfig c;
  c.model = ModelKind::kBasicUNet;
  c.max_epochs = 500;
  c.patience = 50;
  c.schedule = ScheduleSpec::step_halving(1e-3, 16);
  c.loss = LossKind::kDice;
  c.optimizer = OptimizerSpec::adam();
  return c;
}

TrainConfig TrainConfig::improved_unet_paper() {
  TrainConfig c;
  c.model = ModelKind::kImprovedUNet;
  c.max_epochs = 100;
  c.patience = std::nullopt;
  c.schedule = ScheduleSpec::step_halving(1e-3, 16);
  c.loss = LossKind::kDice;
  c.optimizer = OptimizerSpec::adam();
  return c;
}

TrainConfig TrainConfig::transunet_paper() {
  TrainConfig c;
  c.model = ModelKind::kTransUNet;
  c.max_epochs = 150;
  c.patience = std::nullopt;
  c.schedule = ScheduleSpec::poly(0.01, 150, 0.9);
  c.loss = LossKind::kCombined;
  c.optimizer = OptimizerSpec::sgd_momentum(0.9);
  return c;
}

TrainConfig TrainConfig::paper_preset(ModelKind kind) {
  switch (kind) {
    case ModelKind::kBasicUNet: return basic_unet_paper();
    case ModelKind::kImprovedUNet: return improved_unet_paper();
    case ModelKind::kTransUNet: return transunet_paper();
  }
  throw ConfigError("unknown model kind");
}

void TrainConfig::validate() const {
  if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
  if (patience && *patience < 0) throw ConfigError("train.patience must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
  schedule.validate();
  if (schedule.kind == ScheduleSpec::Kind::kPoly && max_epochs > schedule.max_epoch) {
    throw ConfigError("train.max_epochs exceeds the poly schedule's max epoch");
  }
  optimizer.validate();
}

void write_train_config(const TrainConfig& c, KeyValueConfig& out) {
  out.set("train.max_epochs", std::to_string(c.max_epochs));
  out.set("train.patience", c.patience ? std::to_string(*c.patience) : "none");
  out.set("train.batch_size", std::to_string(c.batch_size));
  out.set("train.schedule", to_string(c.schedule.kind));
  out.set("train.initial_lr", format_double(c.schedule.initial_lr));
  out.set("train.halve_every", std::to_string(c.schedule.halve_every));
  out.set("train.poly_max_epoch", std::to_string(c.schedule.max_epoch));
  out.set("train.poly_power", format_double(c.schedule.power));
  out.set("train.loss", to_string(c.loss));
  out.set("train.optimizer", to_string(c.optimizer.kind));
  out.set("train.beta1", format_double(c.optimizer.beta1));
  out.set("train.beta2", format_double(c.optimizer.beta2));
  out.set("train.epsilon", format_double(c.optimizer.epsilon));
  out.set("train.momentum", format_double(c.optimizer.momentum));
  out.set("train.seed", std::to_string(c.seed));
  out.set("train.max_steps", std::to_string(c.max_steps));
}

TrainConfig read_train_config(const KeyValueConfig& in, ModelKind model) {
  TrainConfig c = TrainConfig::paper_preset(model);
  for (const auto& [key, value] : in.items()) {
    if (key.rfind("train.", 0) != 0) continue;
    const std::string k = key.substr(6);
    if (k == "max_epochs") {
      c.max_epochs = parse_int(key, value);
    } else if (k == "patience") {
      c.patience = value == "none" ? std::nullopt : std::optional<int>(parse_int(key, value));
    } else if (k == "batch_size") {
      c.batch_size = parse_int(key, value);
    } else if (k == "schedule") {
      c.schedule.kind = schedule_kind_from_string(value);
    } else if (k == "initial_lr") {
      c.schedule.initial_lr = parse_double(key, value);
    } else if (k == "halve_every") {
      c.schedule.halve_every = parse_int(key, value);
    } else if (k == "poly_max_epoch") {
      c.schedule.max_epoch = parse_int(key, value);
    } else if (k == "poly_power") {
      c.schedule.power = parse_double(key, value);
    } else if (k == "loss") {
      c.loss = loss_kind_from_string(value);
    } else if (k == "optimizer") {
      c.optimizer.kind = optimizer_kind_from_string(value);
    } else if (k == "beta1") {
      c.optimizer.beta1 = parse_double(key, value);
    } else if (k == "beta2") {
      c.optimizer.beta2 = parse_double(key, value);
    } else if (k == "epsilon") {
      c.optimizer.epsilon = parse_double(key, value);
    } else if (k == "momentum") {
      c.optimizer.momentum = parse_double(key, value);
    } else if (k == "seed") {
      std::size_t used = 0;
      try {
        c.seed = std::stoull(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != value.size() || value.empty() || value[0] == '-') {
        throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
      }
    } else if (k == "max_steps") {
      c.max_steps = parse_int(key, value);
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

void write_train_log_csv(const std::filesystem::path& path, const std::vector<EpochLog>& logs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,lr,train_loss,val_loss\n";
  for (const auto& l : logs) {
    out << l.epoch << ',' << format_double(l.lr) << ',' << format_double(l.train_loss) << ','
        << format_double(l.val_loss) << '\n';
  }
}

std::vector<EpochLog> read_train_log_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,lr,train_loss,val_loss") {
    throw Error(path.string() + ": unexpected header");
  }
  std::vector<EpochLog> logs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string item; std::getline(ss, item, ',');) f.push_back(item);
    if (f.size() != 4) throw Error(path.string() + ": malformed row '" + line + "'");
    EpochLog l;
    l.epoch = parse_int("epoch", f[0]);
    l.lr = parse_double("lr", f[1]);
    l.train_loss = parse_double("train_loss", f[2]);
    l.val_loss = parse_double("val_loss", f[3]);
    logs.push_back(l);
  }
  return logs;
}

namespace {

// Samples pre-converted to network layout.
struct TensorSet {
  int height = 0, width = 0, channels = 0;
  std::vector<std::vector<float>> inputs;   // C x H x W in [0, 1]
  std::vector<std::vector<float>> targets;  // H x W in {0, 1}
};

TensorSet to_tensors(const std::vector<Sample>& samples, const char* what) {
  if (samples.empty()) throw DomainError(std::string(what) + " set is empty");
  TensorSet t;
  t.height = samples[0].image.height;
  t.width = samples[0].image.width;
  t.channels = samples[0].image.channels;
  for (const auto& s : samples) {
    if (s.image.height != t.height || s.image.width != t.width || s.image.channels != t.channels ||
        s.mask.height != t.height || s.mask.width != t.width) {
      throw ShapeError(std::string(what) + " sample " + s.id + " differs in size from " +
                       samples[0].id);
    }
    const auto x = images_to_tensor<float>(std::span(&s.image, 1));
    t.inputs.emplace_back(x.data().begin(), x.data().end());
    t.targets.emplace_back(s.mask.values.begin(), s.mask.values.end());
  }
  return t;
}

struct Batch {
  Var<float> input;
  std::vector<float> target;
};

Batch make_batch(const TensorSet& t, std::span<const std::size_t> ids) {
  std::vector<float> x, y;
  for (auto i : ids) {
    x.insert(x.end(), t.inputs[i].begin(), t.inputs[i].end());
    y.insert(y.end(), t.targets[i].begin(), t.targets[i].end());
  }
  return {Var<float>::leaf({static_cast<int>(ids.size()), t.channels, t.height, t.width},
                           std::move(x)),
          std::move(y)};
}

double mean_loss(const SegmentationModel<float>& model, const ParameterStore<float>& store,
                 const TensorSet& t, LossKind loss, int batch_size) {
  NoGradGuard no_grad;
  std::vector<std::size_t> order(t.inputs.size());
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, order.size() - b);
    auto batch = make_batch(t, std::span(order).subspan(b, n));
    const auto pred = model.forward(store, batch.input, ForwardContext{});
    total += static_cast<double>(segmentation_loss<float>(loss, pred, batch.target).item()) *
             static_cast<double>(n);
  }
  return total / static_cast<double>(order.size());
}

ParameterStore<float> deep_copy(const ParameterStore<float>& store) {
  return store.convert<float>();
}

}  // namespace

double evaluate_loss(const SegmentationModel<float>& model, const ParameterStore<float>& store,
                     const std::vector<Sample>& samples, LossKind loss, int batch_size) {
  const auto t = to_tensors(samples, "evaluation");
  model.check_input(t.height, t.width);
  return mean_loss(model, store, t, loss, std::max(1, batch_size));
}

LoadedModel instantiate(const Checkpoint& checkpoint) {
  LoadedModel out;
  try {
    out.config = read_model_config(checkpoint.config);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint model config: ") + e.what());
  }
  out.model = make_model<float>(out.config);
  out.parameters = out.model->make_parameters(0);
  restore_parameters(out.parameters, checkpoint.parameters);
  return out;
}

TrainResult train(const ModelConfig& model_config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  model_config.validate();
  if (config.model != model_config.kind) {
    throw ConfigError("training preset is for " + to_string(config.model) + " but the model is " +
                      to_string(model_config.kind));
  }
  const auto train_t = to_tensors(train_set, "training");
  const auto val_t = to_tensors(val_set, "validation");
  if (train_t.channels != val_t.channels) throw ShapeError("training and validation channels differ");

  const auto model = make_model<float>(model_config);
  model->check_input(train_t.height, train_t.width);
  model->check_input(val_t.height, val_t.width);
  if (train_t.channels != model->in_channels()) {
    throw ShapeError("images have " + std::to_string(train_t.channels) + " channels, model expects " +
                     std::to_string(model->in_channels()));
  }

  KeyValueConfig saved_config;
  write_model_config(model_config, saved_config);
  write_train_config(config, saved_config);

  auto store = model->make_parameters(mix_seed(config.seed, 11));
  Optimizer<float> optimizer(config.optimizer);
  std::mt19937_64 rng(mix_seed(config.seed, 12));

  TrainResult result;
  int start_epoch = 0;
  if (options.resume) {
    restore_parameters(store, options.resume->parameters);
    optimizer.load_state(options.resume->optimizer);
    std::istringstream rs(options.resume->rng_state);
    rs >> rng;
    if (!rs) throw CheckpointError("checkpoint RNG state is corrupt");
    start_epoch = options.resume->epoch + 1;
  }
  double best = options.resume ? options.resume->best_val_loss
                               : std::numeric_limits<double>::infinity();
  int stale = 0;

  auto snapshot = [&](int epoch) {
    Checkpoint ck;
    ck.config = saved_config;
    ck.epoch = epoch;
    ck.best_val_loss = best;
    std::ostringstream rs;
    rs << rng;
    ck.rng_state = rs.str();
    ck.parameters = deep_copy(store);
    ck.optimizer = optimizer.state();
    return ck;
  };
  if (options.resume) result.best = snapshot(options.resume->epoch);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(train_t.inputs.size());
  const ForwardContext train_ctx{.training = true};
  bool step_limit = false;

  for (int epoch = start_epoch; epoch < config.max_epochs && !step_limit; ++epoch) {
    const double lr = config.schedule.rate(epoch);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0, index = 0; b < order.size(); b += config.batch_size, ++index) {
      const std::size_t n = std::min<std::size_t>(config.batch_size, order.size() - b);
      auto batch = make_batch(train_t, std::span(order).subspan(b, n));
      const auto pred = model->forward(store, batch.input, train_ctx);
      const auto loss = segmentation_loss<float>(config.loss, pred, batch.target);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(index));
      }
      backward(loss);
      optimizer.step(store, lr);
      store.zero_grad();
      total += value * static_cast<double>(n);
      seen += n;
      ++result.steps;
      if (config.max_steps > 0 && result.steps >= static_cast<std::uint64_t>(config.max_steps)) {
        step_limit = true;
        break;
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train_loss = total / static_cast<double>(seen);
    log.val_loss = mean_loss(*model, store, val_t, config.loss, config.batch_size);
    if (!std::isfinite(log.val_loss)) {
      throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    log.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.logs.push_back(log);
    if (options.on_epoch) options.on_epoch(log);

    if (log.val_loss < best) {
      best = log.val_loss;
      stale = 0;
      result.best = snapshot(epoch);
    } else if (config.patience && ++stale > *config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  if (result.best.epoch < 0) result.best = snapshot(config.max_epochs - 1);
  return result;
}

}  // namespace tilemark
