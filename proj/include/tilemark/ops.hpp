#pragma once

// Differentiable tensor operations. Feature maps are N x C x H x W, token
// sequences are B x N x D, all row-major.

#include <span>

#include "tilemark/autograd.hpp"

namespace tilemark::ops {

struct ConvGeometry {
  int padding = 0;
  int dilation = 1;
};

// Stride-1 2-D convolution. weight is O x C x k x k; bias (optional) has O
// entries. Output spatial size is H + 2*padding - dilation*(k-1).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              ConvGeometry geometry);

struct BatchNormOptions {
  bool training = false;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;
};

// Per-channel normalization of an N x C x H x W map. In training mode the
// batch statistics are used and the running buffers are updated in place
// (unbiased variance); otherwise the running buffers are used.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Var<T>& running_mean, Var<T>& running_var,
                  const BatchNormOptions& options);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

// x + b where b is repeated over the leading dimensions of x (b's element
// count must divide x's and match its trailing block).
template <typename T>
Var<T> add_trailing(const Var<T>& x, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

// x (N x C x H x W) times a (N x 1 x H x W), broadcast over channels.
template <typename T>
Var<T> mul_channel_broadcast(const Var<T>& x, const Var<T>& a);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

// 2x2 max pooling with stride 2; H and W must be even. Ties pick the first
// element in row-major window order.
template <typename T>
Var<T> max_pool2(const Var<T>& x);

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

// General axis permutation: output axis i is input axis perm[i].
template <typename T>
Var<T> permute(const Var<T>& x, std::span<const int> perm);

// x (... x in) times weight (in x out) plus bias (out), over the last axis.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

// Batched matmul of a (B x M x K) with b (B x K x N), or with b^T when b is
// stored as B x N x K and transpose_b is set.
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b);

template <typename T>
Var<T> softmax_last(const Var<T>& x);

template <typename T>
Var<T> layer_norm_last(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                       double eps);

template <typename T>
Var<T> sum(const Var<T>& x);

template <typename T>
Var<T> mean(const Var<T>& x);

}  // namespace tilemark::ops
