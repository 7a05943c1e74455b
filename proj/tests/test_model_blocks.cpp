#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "tilemark/error.hpp"
#include "tilemark/losses.hpp"
#include "tilemark/unet.hpp"

using namespace tilemark;
using namespace tmtest;

namespace {

const ForwardContext kEval{};
const ForwardContext kTrain{true, 0.9, 1e-5};

std::vector<double> param(const ParameterStore<double>& s, const std::string& name) {
  return values(s.get(name));
}

// Eval-mode batch norm with the store's current statistics.
std::vector<double> bn_oracle(const ParameterStore<double>& s, const std::string& name,
                              const std::vector<double>& x, int n, int c, int plane) {
  return naive_bn_eval(x, n, c, plane, param(s, name + ".gamma"), param(s, name + ".beta"),
                       param(s, name + ".running_mean"), param(s, name + ".running_var"), 1e-5);
}

std::vector<double> add(std::vector<double> a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Var<double> sigmoid_dice(const Var<double>& y, const std::vector<double>& target) {
  return dice_loss<double>(ops::sigmoid(y), target);
}

std::vector<double> random_mask(std::size_t n, std::mt19937_64& rng) {
  std::bernoulli_distribution d(0.4);
  std::vector<double> out(n);
  for (auto& v : out) v = d(rng) ? 1.0 : 0.0;
  return out;
}

// ---- residual block ----------------------------------------------------------

TEST(ResidualBlock, PreservesSpatialShape) {
  ResidualBlock<double> block("res", 8, 8);
  ParameterStore<double> store(1);
  block.declare(store);
  std::mt19937_64 rng(3);
  const auto y = block.forward(store, random_var({1, 8, 16, 16}, rng), kEval);
  EXPECT_EQ(y.shape(), (Shape{1, 8, 16, 16}));
}

TEST(ResidualBlock, RandomShapesPreserved) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> side(1, 9), ch(1, 4);
  for (int trial = 0; trial < 10; ++trial) {
    const int in = ch(rng), out = ch(rng), h = side(rng), w = side(rng);
    ResidualBlock<double> block("r", in, out);
    ParameterStore<double> store(trial);
    block.declare(store);
    const auto y = block.forward(store, random_var({2, in, h, w}, rng), kTrain);
    EXPECT_EQ(y.shape(), (Shape{2, out, h, w}));
  }
}

TEST(ResidualBlock, ZeroBranchLeavesShortcut) {
  ResidualBlock<double> block("res", 3, 3);
  ParameterStore<double> store(1);
  block.declare(store);
  for (const auto& e : store.entries()) {
    if (e.name.ends_with(".weight") || e.name.ends_with(".beta")) fill_param(store, e.name, 0.0);
  }
  std::mt19937_64 rng(5);
  const auto x = random_var({1, 3, 5, 5}, rng);
  const auto y = block.forward(store, x, kEval);
  EXPECT_EQ(values(y), naive_relu(values(x)));
}

TEST(ResidualBlock, MatchesHandRolledComposition) {
  for (const int out : {1, 2}) {
    ResidualBlock<double> block("res", 1, out);
    ParameterStore<double> store(7);
    block.declare(store);
    std::mt19937_64 rng(8 + out);
    randomize(store, rng);
    randomize_stats(store, rng);
    const auto x = random_var({1, 1, 4, 4}, rng);
    const auto y = block.forward(store, x, kEval);

    auto h = naive_conv2d(values(x), 1, 1, 4, 4, param(store, "res.conv1.weight"), out, 3, nullptr, 1, 1);
    h = naive_relu(bn_oracle(store, "res.bn1", h, 1, out, 16));
    h = naive_conv2d(h, 1, out, 4, 4, param(store, "res.conv2.weight"), out, 3, nullptr, 1, 1);
    h = bn_oracle(store, "res.bn2", h, 1, out, 16);
    std::vector<double> shortcut = values(x);
    if (out != 1) {
      const auto b = param(store, "res.proj.bias");
      shortcut = naive_conv2d(values(x), 1, 1, 4, 4, param(store, "res.proj.weight"), out, 1, &b, 0, 1);
    }
    const auto expected = naive_relu(add(h, shortcut));
    ASSERT_EQ(y.numel(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y.data()[i], expected[i], 1e-12);
  }
}

TEST(ResidualBlock, MismatchedInputIsConfigError) {
  ResidualBlock<double> block("res", 4, 4);
  ParameterStore<double> store(1);
  block.declare(store);
  std::mt19937_64 rng(1);
  EXPECT_THROW(block.forward(store, random_var({1, 3, 4, 4}, rng), kEval), ConfigError);
}

// ---- parameter counting ------------------------------------------------------

TEST(CountParameters, SingleConvWithBias) {
  ParameterStore<double> store(1);
  Conv2d<double>{"c", 3, 8, 3, 1, true}.declare(store);
  EXPECT_EQ(count_parameters(store), 224u);
}

TEST(CountParameters, EmptyStoreIsZero) {
  EXPECT_EQ(count_parameters(ParameterStore<double>(1)), 0u);
}

TEST(CountParameters, RunningStatisticsExcluded) {
  ParameterStore<double> store(1);
  BatchNorm2d<double>{"bn", 5}.declare(store);
  EXPECT_EQ(count_parameters(store), 10u);
}

// ---- ASPP --------------------------------------------------------------------

TEST(Aspp, PreservesShape) {
  Aspp<double> aspp("aspp", 64, 16, 64, {1, 2, 4, 8});
  ParameterStore<double> store(1);
  aspp.declare(store);
  std::mt19937_64 rng(2);
  const auto y = aspp.forward(store, random_var({1, 64, 16, 16}, rng), kEval);
  EXPECT_EQ(y.shape(), (Shape{1, 64, 16, 16}));
}

TEST(Aspp, EmptyRatesIsConfigError) {
  EXPECT_THROW(Aspp<double>("aspp", 4, 4, 4, {}), ConfigError);
}

TEST(Aspp, DeltaKernelsGiveReluCopy) {
  const int c = 3;
  Aspp<double> aspp("aspp", c, c, c, {1});
  ParameterStore<double> store(1);
  aspp.declare(store);
  std::vector<double> delta(c * c * 9, 0.0), eye(c * c, 0.0);
  for (int i = 0; i < c; ++i) {
    delta[(i * c + i) * 9 + 4] = 1.0;
    eye[i * c + i] = 1.0;
  }
  set_param(store, "aspp.rate1.conv.weight", delta);
  set_param(store, "aspp.fuse.conv.weight", eye);
  // Cancel the eps inside the normalization so the scale is exactly one.
  for (const auto* bn : {"aspp.rate1.bn", "aspp.fuse.bn"}) {
    fill_param(store, std::string(bn) + ".running_var", 1.0 - 1e-5);
  }
  std::mt19937_64 rng(3);
  const auto x = random_var({1, c, 6, 6}, rng);
  const auto y = aspp.forward(store, x, kEval);
  const auto expected = naive_relu(values(x));
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y.data()[i], expected[i], 1e-12);
}

TEST(Aspp, MatchesDilatedConvOracleOnRamp) {
  const int branch = 2, out = 2;
  Aspp<double> aspp("aspp", 1, branch, out, {1, 2});
  ParameterStore<double> store(11);
  aspp.declare(store);
  std::mt19937_64 rng(12);
  randomize(store, rng);
  randomize_stats(store, rng);
  std::vector<double> ramp(25);
  for (int i = 0; i < 25; ++i) ramp[i] = 0.1 * i - 1.0;
  const auto x = Var<double>::leaf({1, 1, 5, 5}, ramp);
  const auto y = aspp.forward(store, x, kEval);

  std::vector<double> stacked;
  for (const int r : {1, 2}) {
    const std::string nm = "aspp.rate" + std::to_string(r);
    auto b = naive_conv2d(ramp, 1, 1, 5, 5, param(store, nm + ".conv.weight"), branch, 3, nullptr, r, r);
    b = naive_relu(bn_oracle(store, nm + ".bn", b, 1, branch, 25));
    stacked.insert(stacked.end(), b.begin(), b.end());
  }
  auto fused = naive_conv2d(stacked, 1, 2 * branch, 5, 5, param(store, "aspp.fuse.conv.weight"), out, 1,
                            nullptr, 0, 1);
  const auto expected = naive_relu(bn_oracle(store, "aspp.fuse.bn", fused, 1, out, 25));
  ASSERT_EQ(y.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y.data()[i], expected[i], 1e-12);
}

// ---- attention gate ----------------------------------------------------------

TEST(AttentionGate, ZeroWeightsHalveSkip) {
  AttentionGate<double> gate("ag", 2, 3, 4);
  ParameterStore<double> store(1);
  gate.declare(store);
  for (const auto& e : store.entries()) fill_param(store, e.name, 0.0);
  std::mt19937_64 rng(2);
  const auto x = random_var({1, 2, 4, 4}, rng);
  const auto out = gate.forward(store, x, random_var({1, 3, 2, 2}, rng));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(out.gated.data()[i], 0.5 * x.data()[i]);
  for (double a : out.alpha.data()) EXPECT_DOUBLE_EQ(a, 0.5);
}

TEST(AttentionGate, ZeroSkipGivesZero) {
  AttentionGate<double> gate("ag", 2, 3, 4);
  ParameterStore<double> store(5);
  gate.declare(store);
  std::mt19937_64 rng(6);
  randomize(store, rng, -2.0, 2.0);
  const auto out = gate.forward(store, Var<double>::zeros({1, 2, 4, 4}), random_var({1, 3, 4, 4}, rng));
  for (double v : out.gated.data()) EXPECT_EQ(v, 0.0);
}

std::vector<double> gate_oracle(const ParameterStore<double>& s, const std::vector<double>& x,
                                const std::vector<double>& g, int cs, int cg, int inter, int h, int w,
                                bool upsample) {
  const int gh = upsample ? h / 2 : h, gw = upsample ? w / 2 : w;
  const auto bx = param(s, "ag.w_x.bias"), bg = param(s, "ag.w_g.bias"), bp = param(s, "ag.psi.bias");
  const auto px = naive_conv2d(x, 1, cs, h, w, param(s, "ag.w_x.weight"), inter, 1, &bx, 0, 1);
  const auto pg = naive_conv2d(g, 1, cg, gh, gw, param(s, "ag.w_g.weight"), inter, 1, &bg, 0, 1);
  const auto wp = param(s, "ag.psi.weight");
  std::vector<double> out(x.size());
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx) {
      const int sy = upsample ? yy / 2 : yy, sx = upsample ? xx / 2 : xx;
      double logit = bp[0];
      for (int k = 0; k < inter; ++k) {
        const double q = px[(k * h + yy) * w + xx] + pg[(k * gh + sy) * gw + sx];
        logit += wp[k] * std::max(q, 0.0);
      }
      const double alpha = 1.0 / (1.0 + std::exp(-logit));
      for (int c = 0; c < cs; ++c) out[(c * h + yy) * w + xx] = alpha * x[(c * h + yy) * w + xx];
    }
  return out;
}

TEST(AttentionGate, MatchesDirectFormula) {
  for (const bool half : {false, true}) {
    AttentionGate<double> gate("ag", 2, 3, 3);
    ParameterStore<double> store(9);
    gate.declare(store);
    std::mt19937_64 rng(10 + half);
    randomize(store, rng, -1.0, 1.0);
    const int gs = half ? 2 : 4;
    const auto x = random_var({1, 2, 4, 4}, rng);
    const auto g = random_var({1, 3, gs, gs}, rng);
    const auto out = gate.forward(store, x, g);
    const auto expected = gate_oracle(store, values(x), values(g), 2, 3, 3, 4, 4, half);
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(out.gated.data()[i], expected[i], 1e-12);
  }
}

TEST(AttentionGate, OutputBoundedBySkip) {
  AttentionGate<double> gate("ag", 3, 5, 4);
  ParameterStore<double> store(13);
  gate.declare(store);
  std::mt19937_64 rng(14);
  randomize(store, rng, -3.0, 3.0);
  const auto x = random_var({2, 3, 8, 8}, rng, false, -5.0, 5.0);
  const auto out = gate.forward(store, x, random_var({2, 5, 16, 16}, rng));
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_LE(std::abs(out.gated.data()[i]), std::abs(x.data()[i]));
  }
  for (double a : out.alpha.data()) {
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
  }
}

TEST(AttentionGate, IncompatibleRatioIsConfigError) {
  AttentionGate<double> gate("ag", 2, 2, 2);
  ParameterStore<double> store(1);
  gate.declare(store);
  std::mt19937_64 rng(1);
  EXPECT_THROW(gate.forward(store, random_var({1, 2, 8, 8}, rng), random_var({1, 2, 3, 3}, rng)),
               ConfigError);
}

// ---- full networks -----------------------------------------------------------

void expect_probabilities(const Var<float>& y) {
  for (float v : y.data()) {
    ASSERT_GT(v, 0.0f);
    ASSERT_LT(v, 1.0f);
  }
}

TEST(ImprovedUNet, DeskShape) {
  ImprovedUNet<float> net(ImprovedUNetConfig::desk());
  const auto store = net.make_parameters(1);
  std::mt19937_64 rng(2);
  NoGradGuard ng;
  const auto y = net.forward(store, random_var<float>({1, 3, 64, 64}, rng, false, 0.0, 1.0), kEval);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 64, 64}));
  expect_probabilities(y);
}

TEST(ImprovedUNet, FullSizeAt256) {
  ImprovedUNet<float> net(ImprovedUNetConfig::full_size());
  const auto store = net.make_parameters(1);
  std::mt19937_64 rng(3);
  NoGradGuard ng;
  const auto y = net.forward(store, random_var<float>({1, 3, 256, 256}, rng, false, 0.0, 1.0), kEval);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 256, 256}));
  expect_probabilities(y);
}

TEST(ImprovedUNet, RejectsSizesNotDivisibleBy16) {
  ImprovedUNet<float> net(ImprovedUNetConfig::desk());
  EXPECT_THROW(net.check_input(100, 100), ShapeError);
  const auto store = net.make_parameters(1);
  std::mt19937_64 rng(1);
  EXPECT_THROW(net.forward(store, random_var<float>({1, 3, 100, 100}, rng), kEval), ShapeError);
}

TEST(ImprovedUNet, DeterministicInSeed) {
  ImprovedUNet<float> net(ImprovedUNetConfig::desk());
  std::mt19937_64 rng(4);
  const auto x = random_var<float>({1, 3, 32, 32}, rng, false, 0.0, 1.0);
  NoGradGuard ng;
  const auto a = values(net.forward(net.make_parameters(5), x, kEval));
  const auto b = values(net.forward(net.make_parameters(5), x, kEval));
  const auto c = values(net.forward(net.make_parameters(6), x, kEval));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(ImprovedUNet, FullSizeParameterWindow) {
  ImprovedUNet<float> net(ImprovedUNetConfig::full_size());
  const auto n = count_parameters(net.make_parameters(0, false));
  EXPECT_GE(n, 700'000u);
  EXPECT_LE(n, 1'300'000u);
}

TEST(BasicUNet, ShapesAndRange) {
  BasicUNet<float> net(BasicUNetConfig::full_size());
  const auto store = net.make_parameters(1);
  std::mt19937_64 rng(5);
  NoGradGuard ng;
  for (const int side : {48, 256}) {
    const auto y = net.forward(store, random_var<float>({1, 3, side, side}, rng, false, 0.0, 1.0), kEval);
    EXPECT_EQ(y.shape(), (Shape{1, 1, side, side}));
    expect_probabilities(y);
  }
  EXPECT_THROW(net.check_input(40, 48), ShapeError);
}

TEST(BasicUNet, FullSizeParameterWindow) {
  BasicUNet<float> net(BasicUNetConfig::full_size());
  const auto n = count_parameters(net.make_parameters(0, false));
  EXPECT_GE(n, 350'000u);
  EXPECT_LE(n, 650'000u);
}

// ---- gradient checks ---------------------------------------------------------

constexpr double kGradTol = 1e-3;

TEST(GradCheck, ResidualBlock) {
  ResidualBlock<double> block("res", 2, 3);
  ParameterStore<double> store(21);
  block.declare(store);
  std::mt19937_64 rng(22);
  randomize(store, rng);
  auto x = random_var({2, 2, 4, 4}, rng, true);
  const auto target = random_mask(2 * 3 * 16, rng);
  auto leaves = trainable_leaves(store);
  leaves.emplace_back("x", x);
  const auto r = gradcheck([&] { return sigmoid_dice(block.forward(store, x, kTrain), target); }, leaves);
  EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(GradCheck, AttentionGate) {
  AttentionGate<double> gate("ag", 2, 3, 2);
  ParameterStore<double> store(23);
  gate.declare(store);
  std::mt19937_64 rng(24);
  randomize(store, rng, -1.0, 1.0);
  auto x = random_var({1, 2, 4, 4}, rng, true);
  auto g = random_var({1, 3, 2, 2}, rng, true);
  const auto target = random_mask(2 * 16, rng);
  auto leaves = trainable_leaves(store);
  leaves.emplace_back("x", x);
  leaves.emplace_back("g", g);
  const auto r = gradcheck([&] { return sigmoid_dice(gate.forward(store, x, g).gated, target); }, leaves);
  EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(GradCheck, Aspp) {
  Aspp<double> aspp("aspp", 2, 2, 2, {1, 2});
  ParameterStore<double> store(25);
  aspp.declare(store);
  std::mt19937_64 rng(26);
  randomize(store, rng);
  auto x = random_var({2, 2, 5, 5}, rng, true);
  const auto target = random_mask(2 * 2 * 25, rng);
  auto leaves = trainable_leaves(store);
  leaves.emplace_back("x", x);
  const auto r = gradcheck([&] { return sigmoid_dice(aspp.forward(store, x, kTrain), target); }, leaves);
  EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(GradCheck, TinyImprovedUNetDiceLoss) {
  ImprovedUNetConfig cfg;
  cfg.base_channels = 2;
  ImprovedUNet<double> net(cfg);
  const auto store = net.make_parameters(27);
  std::mt19937_64 rng(28);
  randomize_stats(store, rng);
  const auto x = random_var({1, 3, 16, 16}, rng, false, 0.0, 1.0);
  const auto target = random_mask(256, rng);
  const auto r = gradcheck([&] { return dice_loss<double>(net.forward(store, x, kEval), target); },
                           trainable_leaves(store));
  EXPECT_GT(r.checked, 1000u);
  EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

}  // namespace
