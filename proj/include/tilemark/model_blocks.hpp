#pragma once

// Convolutional building blocks shared by the U-Net variants and the
// TransUNet stem/decoder. A block is a small value type naming its
// parameters; declare() registers them in a store and forward() reads them
// back, so forward passes are pure functions of (store, input) apart from
// batch-norm running statistics in training mode.

#include <string>
#include <vector>

#include "tilemark/ops.hpp"
#include "tilemark/parameters.hpp"

namespace tilemark {

struct ForwardContext {
  bool training = false;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
};

// Same-padded stride-1 convolution.
template <typename T>
struct Conv2d {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int dilation = 1;
  bool bias = true;

  void declare(ParameterStore<T>& store) const;
  Var<T> forward(const ParameterStore<T>& store, const Var<T>& x) const;
};

template <typename T>
struct BatchNorm2d {
  std::string name;
  int channels = 0;

  void declare(ParameterStore<T>& store) const;
  Var<T> forward(const ParameterStore<T>& store, const Var<T>& x,
                 const ForwardContext& ctx) const;
};

// conv (no bias) -> batch norm -> ReLU
template <typename T>
struct ConvBnRelu {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;

  ConvBnRelu() = default;
  ConvBnRelu(const std::string& name, int in, int out, int kernel = 3, int dilation = 1);
  void declare(ParameterStore<T>& store) const;
  Var<T> forward(const ParameterStore<T>& store, const Var<T>& x,
                 const ForwardContext& ctx) const;
};

// relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x)); the shortcut is the
// identity when in == out and a biased 1x1 projection otherwise.
template <typename T>
struct ResidualBlock {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;

  ResidualBlock() = default;
  ResidualBlock(std::string name, int in, int out);
  bool has_projection() const { return in_channels != out_channels; }
  void declare(ParameterStore<T>& store) const;
  Var<T> forward(const ParameterStore<T>& store, const Var<T>& x,
                 const ForwardContext& ctx) const;

 private:
  Conv2d<T> conv1_, conv2_, proj_;
  BatchNorm2d<T> bn1_, bn2_;
};

// Plain U-Net stage: two conv-bn-relu layers.
template <typename T>
struct DoubleConv {
  ConvBnRelu<T> first, second;

  DoubleConv() = default;
  DoubleConv(const std::string& name, int in, int out);
  void declare(ParameterStore<T>& store) const;
  Var<T> forward(const ParameterStore<T>& store, const Var<T>& x,
                 const ForwardContext& ctx) const;
};

// Atrous spatial pyramid: one dilated 3x3 conv-bn-relu branch per rate
// (padding = rate), channel concatenation, then a 1x1 conv-bn-relu fusion.
template <typename T>
struct Aspp {
  std::string name;
  int in_channels = 0;
  int branch_channels = 0;
  int out_channels = 0;
  std::vector<int> rates;

  Aspp() = default;
  Aspp(std::string name, int in, int branch, int out, std::vector<int> rates);
  void declare(ParameterStore<T>& store) const;
  Var<T> forward(const ParameterStore<T>& store, const Var<T>& x,
                 const ForwardContext& ctx) const;

 private:
  std::vector<ConvBnRelu<T>> branches_;
  ConvBnRelu<T> fuse_;
};

// Additive attention gate on a skip connection:
//   alpha = sigmoid(psi(relu(W_g g + W_x x_skip))),  out = alpha * x_skip.
// The projected gate is resampled to the skip resolution when g is half
// (nearest 2x up) or double (2x max-pool) its size.
template <typename T>
struct AttentionGate {
  std::string name;
  int skip_channels = 0;
  int gate_channels = 0;
  int inter_channels = 0;

  struct Output {
    Var<T> gated;
    Var<T> alpha;  // N x 1 x H x W
  };

  AttentionGate() = default;
  AttentionGate(std::string name, int skip, int gate, int inter);
  void declare(ParameterStore<T>& store) const;
  Output forward(const ParameterStore<T>& store, const Var<T>& x_skip, const Var<T>& g) const;

 private:
  Conv2d<T> w_x_, w_g_, psi_;
};

}  // namespace tilemark
