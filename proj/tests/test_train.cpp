#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "tilemark/checkpoint.hpp"
#include "tilemark/error.hpp"
#include "tilemark/run_config.hpp"
#include "tilemark/train.hpp"

using namespace tilemark;
namespace fs = std::filesystem;

namespace {

std::vector<Sample> scenes(int count, int size, std::uint64_t seed) {
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) {
    SynthSceneConfig c;
    c.size = size;
    c.line_spacing = 8;
    c.line_width = 2;
    c.orientation_deg = 20.0 * i;
    c.seed = mix_seed(seed, i);
    auto s = generate_synthetic_scene(c);
    s.id = "s" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

ModelConfig tiny_model() { return RunConfig::preset("tiny").model; }

TrainConfig quick(int epochs) {
  TrainConfig t = RunConfig::preset("tiny").train;
  t.max_epochs = epochs;
  t.batch_size = 2;
  t.seed = 5;
  return t;
}

struct Fixture : ::testing::Test {
  std::vector<Sample> train_set = scenes(4, 32, 1);
  std::vector<Sample> val_set = scenes(2, 32, 2);
  fs::path dir;

  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("tilemark_test_train_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
};

std::vector<EpochLog> without_time(std::vector<EpochLog> logs) {
  for (auto& l : logs) l.wall_time = 0.0;
  return logs;
}

std::vector<std::vector<float>> arrays(const ParameterStore<float>& s) {
  std::vector<std::vector<float>> out;
  for (const auto& e : s.entries()) out.emplace_back(e.var.data().begin(), e.var.data().end());
  return out;
}

std::vector<float> probe_forward(const Checkpoint& ck, const Sample& s) {
  const auto loaded = instantiate(ck);
  const auto p = predict(*loaded.model, loaded.parameters, s.image);
  return p.values;
}

// ---- presets and config --------------------------------------------------------

TEST(TrainPresets, MatchTheReferenceSetups) {
  const auto basic = TrainConfig::basic_unet_paper();
  EXPECT_EQ(basic.max_epochs, 500);
  EXPECT_EQ(basic.patience, 50);
  EXPECT_EQ(basic.loss, LossKind::kDice);
  EXPECT_EQ(basic.schedule.kind, ScheduleSpec::Kind::kStepHalving);
  EXPECT_EQ(basic.schedule.initial_lr, 0.001);
  EXPECT_EQ(basic.schedule.halve_every, 16);

  const auto improved = TrainConfig::improved_unet_paper();
  EXPECT_EQ(improved.max_epochs, 100);
  EXPECT_FALSE(improved.patience.has_value());
  EXPECT_EQ(improved.schedule.kind, ScheduleSpec::Kind::kStepHalving);
  EXPECT_EQ(improved.schedule.initial_lr, 0.001);

  const auto trans = TrainConfig::transunet_paper();
  EXPECT_EQ(trans.max_epochs, 150);
  EXPECT_EQ(trans.loss, LossKind::kCombined);
  EXPECT_EQ(trans.schedule.kind, ScheduleSpec::Kind::kPoly);
  EXPECT_EQ(trans.schedule.initial_lr, 0.01);
  EXPECT_EQ(trans.schedule.max_epoch, 150);
  EXPECT_EQ(trans.schedule.power, 0.9);
  EXPECT_EQ(trans.optimizer.kind, OptimizerKind::kSgdMomentum);
  EXPECT_EQ(trans.optimizer.momentum, 0.9);

  EXPECT_EQ(TrainConfig::paper_preset(ModelKind::kTransUNet).max_epochs, 150);
}

TEST(TrainConfigIo, RoundTripAndUnknownKeys) {
  auto t = TrainConfig::transunet_paper();
  t.patience = 7;
  t.seed = 1234567890123ULL;
  t.max_steps = 42;
  KeyValueConfig kv;
  write_train_config(t, kv);
  const auto back = read_train_config(KeyValueConfig::parse(kv.serialize()), ModelKind::kTransUNet);
  KeyValueConfig again;
  write_train_config(back, again);
  EXPECT_EQ(again, kv);
  EXPECT_EQ(back.patience, 7);
  EXPECT_EQ(back.seed, 1234567890123ULL);

  kv.set("train.warmup", "3");
  EXPECT_THROW(read_train_config(kv, ModelKind::kTransUNet), ConfigError);
}

TEST(TrainConfigIo, InvalidValuesRejected) {
  auto t = quick(3);
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = quick(3);
  t.patience = -1;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TrainConfig::transunet_paper();
  t.max_epochs = 151;  // poly schedule undefined past its max epoch
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(TrainLog, CsvRoundTripIsLossless) {
  const auto dir = fs::temp_directory_path() / "tilemark_test_train_log";
  fs::create_directories(dir);
  std::vector<EpochLog> logs{{0, 0.001, 0.123456789012345, 0.9876543210987, 1.5},
                             {1, 0.0005, 1.0 / 3.0, 2.0 / 7.0, 3.0}};
  write_train_log_csv(dir / "log.csv", logs);
  EXPECT_EQ(read_train_log_csv(dir / "log.csv"), without_time(logs));
  fs::remove_all(dir);
}

// ---- the training loop -----------------------------------------------------------

TEST_F(Fixture, DeterministicInConfigDataAndSeed) {
  const auto a = train(tiny_model(), train_set, val_set, quick(3));
  const auto b = train(tiny_model(), train_set, val_set, quick(3));
  ASSERT_EQ(a.logs.size(), 3u);
  EXPECT_EQ(without_time(a.logs), without_time(b.logs));
  EXPECT_EQ(arrays(a.best.parameters), arrays(b.best.parameters));
  auto other = quick(3);
  other.seed = 6;
  EXPECT_NE(without_time(train(tiny_model(), train_set, val_set, other).logs), without_time(a.logs));
}

TEST_F(Fixture, LoggedLearningRateIsTheScheduleValue) {
  auto t = quick(4);
  t.schedule = ScheduleSpec::poly(0.01, 4, 0.9);
  t.optimizer = OptimizerSpec::sgd_momentum();
  const auto r = train(tiny_model(), train_set, val_set, t);
  ASSERT_EQ(r.logs.size(), 4u);
  for (const auto& l : r.logs) EXPECT_EQ(l.lr, poly_lr(l.epoch, 4, 0.01, 0.9));

  t = quick(3);
  t.schedule = ScheduleSpec::step_halving(0.001, 1);
  const auto s = train(tiny_model(), train_set, val_set, t);
  for (const auto& l : s.logs) EXPECT_EQ(l.lr, step_lr(l.epoch, 0.001, 1));
}

TEST_F(Fixture, BestCheckpointHoldsLowestValidationLoss) {
  auto t = quick(5);
  t.schedule = ScheduleSpec::step_halving(0.05, 100);  // large steps so the loss moves around
  const auto r = train(tiny_model(), train_set, val_set, t);
  int argmin = 0;
  for (std::size_t i = 1; i < r.logs.size(); ++i) {
    if (r.logs[i].val_loss < r.logs[argmin].val_loss) argmin = static_cast<int>(i);
  }
  EXPECT_EQ(r.best.epoch, r.logs[argmin].epoch);
  EXPECT_EQ(r.best.best_val_loss, r.logs[argmin].val_loss);
  // The stored parameters reproduce the logged validation loss.
  const auto loaded = instantiate(r.best);
  EXPECT_NEAR(evaluate_loss(*loaded.model, loaded.parameters, val_set, t.loss, t.batch_size),
              r.best.best_val_loss, 1e-6);
}

TEST_F(Fixture, PatienceZeroStopsAtFirstNonImprovement) {
  // The rule is checked on every run; the sweep over learning rates makes
  // sure the stopping branch is actually taken.
  int stopped = 0;
  for (const double lr : {0.3, 0.1, 0.03, 0.01}) {
    auto t = quick(3);
    t.patience = 0;
    t.schedule = ScheduleSpec::step_halving(lr, 100);
    const auto r = train(tiny_model(), train_set, val_set, t);
    std::size_t first_bad = r.logs.size();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < r.logs.size(); ++i) {
      if (r.logs[i].val_loss < best) {
        best = r.logs[i].val_loss;
      } else {
        first_bad = i;
        break;
      }
    }
    if (r.stopped_early) {
      ++stopped;
      EXPECT_EQ(first_bad, r.logs.size() - 1) << "lr " << lr;
    } else {
      EXPECT_EQ(r.logs.size(), 3u);
      EXPECT_EQ(first_bad, r.logs.size());
    }
  }
  EXPECT_GT(stopped, 0);
}

TEST_F(Fixture, PatienceCountsConsecutiveStaleEpochs) {
  auto t = quick(6);
  t.patience = 1;
  t.schedule = ScheduleSpec::step_halving(0.3, 100);
  const auto r = train(tiny_model(), train_set, val_set, t);
  int stale = 0, max_stale = 0;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& l : r.logs) {
    stale = l.val_loss < best ? 0 : stale + 1;
    best = std::min(best, l.val_loss);
    max_stale = std::max(max_stale, stale);
  }
  if (r.stopped_early) {
    EXPECT_EQ(stale, 2);
  } else {
    EXPECT_LE(max_stale, 1);
  }
}

TEST_F(Fixture, NonFiniteLossAbortsWithLocation) {
  auto ck = train(tiny_model(), train_set, val_set, quick(1)).best;
  ASSERT_EQ(ck.epoch, 0);
  for (const auto& e : ck.parameters.entries()) {
    if (e.kind == ParamKind::kTrainable) {
      auto v = e.var;
      v.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
      break;
    }
  }
  TrainOptions opts;
  opts.resume = &ck;
  try {
    train(tiny_model(), train_set, val_set, quick(3), opts);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
  }
}

TEST_F(Fixture, IncompatibleShapesRejected) {
  auto small = train_set;
  for (auto& s : small) {
    s.image = Image(40, 40);
    s.mask = BinaryMask(40, 40);
  }
  EXPECT_THROW(train(tiny_model(), small, val_set, quick(1)), ShapeError);
  auto odd = train_set;
  odd[0].image = Image(20, 20);
  odd[0].mask = BinaryMask(20, 20);
  EXPECT_THROW(train(tiny_model(), odd, val_set, quick(1)), ShapeError);
  EXPECT_THROW(train(tiny_model(), {}, val_set, quick(1)), DomainError);
}

TEST_F(Fixture, MaxStepsCutsTheEpochShort) {
  auto t = quick(5);
  t.max_steps = 3;  // two batches per epoch
  const auto r = train(tiny_model(), train_set, val_set, t);
  EXPECT_EQ(r.steps, 3u);
  EXPECT_EQ(r.logs.size(), 2u);
}

TEST(SingleStep, SmallLearningRateDecreasesTheLoss) {
  const auto sample = scenes(1, 32, 9);
  for (const auto kind : {OptimizerKind::kAdam, OptimizerKind::kSgdMomentum}) {
    const auto model = make_model<float>(tiny_model());
    auto store = model->make_parameters(3);
    const auto x = images_to_tensor<float>(std::span(&sample[0].image, 1));
    std::vector<float> target(sample[0].mask.values.begin(), sample[0].mask.values.end());
    const ForwardContext ctx{.training = true};
    auto loss = dice_loss<float>(model->forward(store, x, ctx), target);
    const double before = loss.item();
    backward(loss);
    Optimizer<float> opt(kind == OptimizerKind::kAdam ? OptimizerSpec::adam() : OptimizerSpec::sgd_momentum());
    opt.step(store, 1e-4);
    store.zero_grad();
    NoGradGuard ng;
    const double after = dice_loss<float>(model->forward(store, x, ctx), target).item();
    EXPECT_LT(after, before) << to_string(kind);
  }
}

TEST(OptimizerState, SaveAndLoadContinuesIdentically) {
  for (const auto spec : {OptimizerSpec::adam(), OptimizerSpec::sgd_momentum()}) {
    std::mt19937_64 rng(1);
    ParameterStore<float> a(7);
    a.add_normal("w", {3, 4}, 1.0);
    a.add_constant("b", {4}, 0.0f);
    auto b = a.convert<float>();
    Optimizer<float> oa(spec);
    auto grad_step = [&](ParameterStore<float>& s, Optimizer<float>& o, int k) {
      for (const auto& e : s.entries()) {
        auto& g = e.var.node()->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(std::sin(1.0 + i + 3 * k));
      }
      o.step(s, 0.01);
      s.zero_grad();
    };
    for (int k = 0; k < 3; ++k) grad_step(a, oa, k);
    Optimizer<float> ob(spec);
    ob.load_state(oa.state());
    EXPECT_EQ(ob.state(), oa.state());
    restore_parameters(b, a);
    for (int k = 3; k < 6; ++k) {
      grad_step(a, oa, k);
      grad_step(b, ob, k);
    }
    EXPECT_EQ(arrays(a), arrays(b));
    EXPECT_EQ(oa.steps(), 6u);
  }
}

// ---- checkpoints -----------------------------------------------------------------

TEST_F(Fixture, CheckpointRoundTripIsBitExact) {
  const auto r = train(tiny_model(), train_set, val_set, quick(2));
  save_checkpoint(r.best, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back.config, r.best.config);
  EXPECT_EQ(back.epoch, r.best.epoch);
  EXPECT_EQ(back.best_val_loss, r.best.best_val_loss);
  EXPECT_EQ(back.rng_state, r.best.rng_state);
  EXPECT_EQ(back.optimizer, r.best.optimizer);
  ASSERT_EQ(back.parameters.size(), r.best.parameters.size());
  for (std::size_t i = 0; i < back.parameters.size(); ++i) {
    const auto& x = back.parameters.entries()[i];
    const auto& y = r.best.parameters.entries()[i];
    EXPECT_EQ(x.name, y.name);
    EXPECT_EQ(x.shape, y.shape);
    EXPECT_EQ(x.kind, y.kind);
    EXPECT_EQ(0, std::memcmp(x.var.data().data(), y.var.data().data(), x.var.numel() * sizeof(float)));
  }
  EXPECT_EQ(probe_forward(back, val_set[0]), probe_forward(r.best, val_set[0]));
  // Saving the loaded checkpoint reproduces the file byte for byte.
  save_checkpoint(back, dir / "b.ckpt");
  std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(fa), {}), std::string(std::istreambuf_iterator<char>(fb), {}));
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

TEST_F(Fixture, CorruptCheckpointsRejected) {
  const auto r = train(tiny_model(), train_set, val_set, quick(1));
  save_checkpoint(r.best, dir / "good.ckpt");
  const auto bytes = read_bytes(dir / "good.ckpt");
  ASSERT_EQ(bytes.substr(0, 4), "TMCK");

  for (const std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    write_bytes(dir / "cut.ckpt", bytes.substr(0, keep));
    EXPECT_THROW(load_checkpoint(dir / "cut.ckpt"), CheckpointError) << keep;
  }
  auto version = bytes;
  version[4] = static_cast<char>(Checkpoint::kFormatVersion + 1);
  write_bytes(dir / "version.ckpt", version);
  try {
    load_checkpoint(dir / "version.ckpt");
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
  auto magic = bytes;
  magic[0] = 'X';
  write_bytes(dir / "magic.ckpt", magic);
  EXPECT_THROW(load_checkpoint(dir / "magic.ckpt"), CheckpointError);
  write_bytes(dir / "trailing.ckpt", bytes + "x");
  EXPECT_THROW(load_checkpoint(dir / "trailing.ckpt"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
}

TEST_F(Fixture, ResumingFromTheSameFileTwiceGivesIdenticalLogs) {
  const auto first = train(tiny_model(), train_set, val_set, quick(2));
  ASSERT_EQ(first.best.epoch, 1) << "validation loss should still be falling after two epochs";
  save_checkpoint(first.best, dir / "resume.ckpt");

  std::vector<std::vector<EpochLog>> runs;
  std::vector<std::vector<std::vector<float>>> params;
  for (int k = 0; k < 2; ++k) {
    const auto ck = load_checkpoint(dir / "resume.ckpt");
    TrainOptions opts;
    opts.resume = &ck;
    const auto r = train(tiny_model(), train_set, val_set, quick(4), opts);
    runs.push_back(without_time(r.logs));
    params.push_back(arrays(r.best.parameters));
  }
  ASSERT_EQ(runs[0].size(), 2u);
  EXPECT_EQ(runs[0].front().epoch, 2);
  EXPECT_EQ(runs[0], runs[1]);
  EXPECT_EQ(params[0], params[1]);

  // An uninterrupted run logs the same epochs.
  const auto straight = train(tiny_model(), train_set, val_set, quick(4));
  const auto tail = without_time({straight.logs.begin() + 2, straight.logs.end()});
  EXPECT_EQ(runs[0], tail);
}

TEST_F(Fixture, RestoreRejectsMismatchedStores) {
  const auto r = train(tiny_model(), train_set, val_set, quick(1));
  auto other = RunConfig::preset("improved_unet_desk").model;
  auto target = make_model<float>(other)->make_parameters(0);
  EXPECT_THROW(restore_parameters(target, r.best.parameters), CheckpointError);
}

}  // namespace
