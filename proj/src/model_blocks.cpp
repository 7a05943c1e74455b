#include "tilemark/model_blocks.hpp"

#include "tilemark/error.hpp"

namespace tilemark {

namespace {

void check_channels(const std::string& block, const Shape& shape, int expected) {
  if (shape.size() != 4 || shape[1] != expected) {
    throw ConfigError(block + ": expected " + std::to_string(expected) +
                      " input channels, got " + shape_string(shape));
  }
}

}  // namespace

template <typename T>
void Conv2d<T>::declare(ParameterStore<T>& store) const {
  store.add_he_normal(name + ".weight", {out_channels, in_channels, kernel, kernel},
                      in_channels * kernel * kernel);
  if (bias) store.add_constant(name + ".bias", {out_channels}, T(0));
}

template <typename T>
Var<T> Conv2d<T>::forward(const ParameterStore<T>& store, const Var<T>& x) const {
  check_channels(name, x.shape(), in_channels);
  const auto& w = store.get(name + ".weight", {out_channels, in_channels, kernel, kernel});
  Var<T> b;
  if (bias) b = store.get(name + ".bias", {out_channels});
  return ops::conv2d(x, w, b, {dilation * (kernel - 1) / 2, dilation});
}

template <typename T>
void BatchNorm2d<T>::declare(ParameterStore<T>& store) const {
  store.add_constant(name + ".gamma", {channels}, T(1));
  store.add_constant(name + ".beta", {channels}, T(0));
  store.add_constant(name + ".running_mean", {channels}, T(0), ParamKind::kBuffer);
  store.add_constant(name + ".running_var", {channels}, T(1), ParamKind::kBuffer);
}

template <typename T>
Var<T> BatchNorm2d<T>::forward(const ParameterStore<T>& store, const Var<T>& x,
                               const ForwardContext& ctx) const {
  check_channels(name, x.shape(), channels);
  // Copies share the underlying buffers, so training-mode updates land in the store.
  Var<T> running_mean = store.get(name + ".running_mean", {channels});
  Var<T> running_var = store.get(name + ".running_var", {channels});
  return ops::batch_norm(x, store.get(name + ".gamma", {channels}),
                         store.get(name + ".beta", {channels}), running_mean, running_var,
                         {ctx.training, ctx.bn_momentum, ctx.bn_eps});
}

template <typename T>
ConvBnRelu<T>::ConvBnRelu(const std::string& name, int in, int out, int kernel, int dilation)
    : conv{name + ".conv", in, out, kernel, dilation, false}, bn{name + ".bn", out} {}

template <typename T>
void ConvBnRelu<T>::declare(ParameterStore<T>& store) const {
  conv.declare(store);
  bn.declare(store);
}

template <typename T>
Var<T> ConvBnRelu<T>::forward(const ParameterStore<T>& store, const Var<T>& x,
                              const ForwardContext& ctx) const {
  return ops::relu(bn.forward(store, conv.forward(store, x), ctx));
}

template <typename T>
ResidualBlock<T>::ResidualBlock(std::string block_name, int in, int out)
    : name(std::move(block_name)),
      in_channels(in),
      out_channels(out),
      conv1_{name + ".conv1", in, out, 3, 1, false},
      conv2_{name + ".conv2", out, out, 3, 1, false},
      proj_{name + ".proj", in, out, 1, 1, true},
      bn1_{name + ".bn1", out},
      bn2_{name + ".bn2", out} {
  if (in < 1 || out < 1) throw ConfigError(name + ": channel counts must be positive");
}

template <typename T>
void ResidualBlock<T>::declare(ParameterStore<T>& store) const {
  conv1_.declare(store);
  bn1_.declare(store);
  conv2_.declare(store);
  bn2_.declare(store);
  if (has_projection()) proj_.declare(store);
}

template <typename T>
Var<T> ResidualBlock<T>::forward(const ParameterStore<T>& store, const Var<T>& x,
                                 const ForwardContext& ctx) const {
  check_channels(name, x.shape(), in_channels);
  auto h = ops::relu(bn1_.forward(store, conv1_.forward(store, x), ctx));
  h = bn2_.forward(store, conv2_.forward(store, h), ctx);
  const Var<T> shortcut = has_projection() ? proj_.forward(store, x) : x;
  return ops::relu(ops::add(h, shortcut));
}

template <typename T>
DoubleConv<T>::DoubleConv(const std::string& name, int in, int out)
    : first(name + ".a", in, out), second(name + ".b", out, out) {}

template <typename T>
void DoubleConv<T>::declare(ParameterStore<T>& store) const {
  first.declare(store);
  second.declare(store);
}

template <typename T>
Var<T> DoubleConv<T>::forward(const ParameterStore<T>& store, const Var<T>& x,
                              const ForwardContext& ctx) const {
  return second.forward(store, first.forward(store, x, ctx), ctx);
}

template <typename T>
Aspp<T>::Aspp(std::string block_name, int in, int branch, int out, std::vector<int> dilations)
    : name(std::move(block_name)),
      in_channels(in),
      branch_channels(branch),
      out_channels(out),
      rates(std::move(dilations)) {
  if (rates.empty()) throw ConfigError(name + ": empty dilation rate list");
  for (int r : rates) {
    if (r < 1) throw ConfigError(name + ": dilation rates must be positive");
    branches_.emplace_back(name + ".rate" + std::to_string(r), in, branch, 3, r);
  }
  fuse_ = ConvBnRelu<T>(name + ".fuse", branch * static_cast<int>(rates.size()), out, 1, 1);
}

template <typename T>
void Aspp<T>::declare(ParameterStore<T>& store) const {
  for (const auto& b : branches_) b.declare(store);
  fuse_.declare(store);
}

template <typename T>
Var<T> Aspp<T>::forward(const ParameterStore<T>& store, const Var<T>& x,
                        const ForwardContext& ctx) const {
  check_channels(name, x.shape(), in_channels);
  Var<T> stacked;
  for (const auto& b : branches_) {
    auto y = b.forward(store, x, ctx);
    stacked = stacked.defined() ? ops::concat_channels(stacked, y) : y;
  }
  return fuse_.forward(store, stacked, ctx);
}

template <typename T>
AttentionGate<T>::AttentionGate(std::string gate_name, int skip, int gate, int inter)
    : name(std::move(gate_name)),
      skip_channels(skip),
      gate_channels(gate),
      inter_channels(inter),
      w_x_{name + ".w_x", skip, inter, 1, 1, true},
      w_g_{name + ".w_g", gate, inter, 1, 1, true},
      psi_{name + ".psi", inter, 1, 1, 1, true} {
  if (skip < 1 || gate < 1 || inter < 1) {
    throw ConfigError(name + ": channel counts must be positive");
  }
}

template <typename T>
void AttentionGate<T>::declare(ParameterStore<T>& store) const {
  w_x_.declare(store);
  w_g_.declare(store);
  psi_.declare(store);
}

template <typename T>
typename AttentionGate<T>::Output AttentionGate<T>::forward(const ParameterStore<T>& store,
                                                            const Var<T>& x_skip,
                                                            const Var<T>& g) const {
  check_channels(name, x_skip.shape(), skip_channels);
  check_channels(name, g.shape(), gate_channels);
  const int sh = x_skip.dim(2), sw = x_skip.dim(3);
  const int gh = g.dim(2), gw = g.dim(3);
  if (g.dim(0) != x_skip.dim(0)) throw ConfigError(name + ": batch size mismatch");

  auto pg = w_g_.forward(store, g);
  if (gh == sh && gw == sw) {
    // already aligned
  } else if (2 * gh == sh && 2 * gw == sw) {
    pg = ops::upsample_nearest2(pg);
  } else if (gh == 2 * sh && gw == 2 * sw) {
    pg = ops::max_pool2(pg);
  } else {
    throw ConfigError(name + ": gating signal " + shape_string(g.shape()) +
                      " cannot be aligned with skip " + shape_string(x_skip.shape()));
  }
  auto px = w_x_.forward(store, x_skip);
  auto alpha = ops::sigmoid(psi_.forward(store, ops::relu(ops::add(px, pg))));
  return {ops::mul_channel_broadcast(x_skip, alpha), alpha};
}

template struct Conv2d<float>;
template struct Conv2d<double>;
template struct BatchNorm2d<float>;
template struct BatchNorm2d<double>;
template struct ConvBnRelu<float>;
template struct ConvBnRelu<double>;
template struct ResidualBlock<float>;
template struct ResidualBlock<double>;
template struct DoubleConv<float>;
template struct DoubleConv<double>;
template struct Aspp<float>;
template struct Aspp<double>;
template struct AttentionGate<float>;
template struct AttentionGate<double>;

}  // namespace tilemark
