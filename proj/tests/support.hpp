#pragma once

// Shared test helpers: seeded random tensors, brute-force reference
// implementations, and a central finite-difference gradient checker.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tilemark/autograd.hpp"
#include "tilemark/ops.hpp"
#include "tilemark/parameters.hpp"

namespace tmtest {

using tilemark::Shape;
using tilemark::Var;

inline std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                   double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <typename T = double>
Var<T> random_var(const Shape& shape, std::mt19937_64& rng, bool requires_grad = false,
                  double lo = -1.0, double hi = 1.0) {
  const auto v = uniform(tilemark::shape_numel(shape), rng, lo, hi);
  return Var<T>::leaf(shape, std::vector<T>(v.begin(), v.end()), requires_grad);
}

template <typename T>
std::vector<double> values(const Var<T>& v) {
  return {v.data().begin(), v.data().end()};
}

// Overwrites a stored array in place.
template <typename T>
void set_param(const tilemark::ParameterStore<T>& store, const std::string& name,
               const std::vector<double>& vals) {
  Var<T> v = store.get(name);
  auto d = v.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(vals.at(i));
}

template <typename T>
void fill_param(const tilemark::ParameterStore<T>& store, const std::string& name, double value) {
  Var<T> v = store.get(name);
  for (auto& x : v.mutable_data()) x = static_cast<T>(value);
}

// Re-draws every trainable array of a store uniformly in [lo, hi].
template <typename T>
void randomize(const tilemark::ParameterStore<T>& store, std::mt19937_64& rng, double lo = -0.5,
               double hi = 0.5) {
  for (const auto& e : store.entries()) {
    if (e.kind != tilemark::ParamKind::kTrainable) continue;
    set_param(store, e.name, uniform(tilemark::shape_numel(e.shape), rng, lo, hi));
  }
}

// Random positive batch-norm running statistics, so inference-mode
// normalization is non-trivial and no ReLU input sits exactly on its kink.
template <typename T>
void randomize_stats(const tilemark::ParameterStore<T>& store, std::mt19937_64& rng) {
  for (const auto& e : store.entries()) {
    if (e.kind != tilemark::ParamKind::kBuffer) continue;
    const bool is_var = e.name.ends_with("running_var");
    set_param(store, e.name,
              uniform(tilemark::shape_numel(e.shape), rng, is_var ? 0.5 : -0.3, is_var ? 1.5 : 0.3));
  }
}

// Nested-loop stride-1 convolution, x: N x C x H x W, w: O x C x k x k.
inline std::vector<double> naive_conv2d(const std::vector<double>& x, int n, int c, int h, int w,
                                        const std::vector<double>& wt, int o, int k,
                                        const std::vector<double>* bias, int pad, int dil) {
  const int oh = h + 2 * pad - dil * (k - 1), ow = w + 2 * pad - dil * (k - 1);
  std::vector<double> out(static_cast<std::size_t>(n) * o * oh * ow, 0.0);
  for (int b = 0; b < n; ++b)
    for (int oc = 0; oc < o; ++oc)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = bias ? (*bias)[oc] : 0.0;
          for (int ic = 0; ic < c; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int sy = y - pad + ky * dil, sx = xx - pad + kx * dil;
                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                acc += x[((b * c + ic) * h + sy) * w + sx] *
                       wt[((oc * c + ic) * k + ky) * k + kx];
              }
          out[((b * o + oc) * oh + y) * ow + xx] = acc;
        }
  return out;
}

// Inference-mode batch norm over N x C x (plane) data.
inline std::vector<double> naive_bn_eval(std::vector<double> x, int n, int c, int plane,
                                         const std::vector<double>& gamma,
                                         const std::vector<double>& beta,
                                         const std::vector<double>& mean,
                                         const std::vector<double>& var, double eps) {
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < plane; ++i) {
        double& v = x[(static_cast<std::size_t>(b) * c + ch) * plane + i];
        v = (v - mean[ch]) / std::sqrt(var[ch] + eps) * gamma[ch] + beta[ch];
      }
  return x;
}

inline std::vector<double> naive_relu(std::vector<double> x) {
  for (auto& v : x) v = std::max(v, 0.0);
  return x;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// Central differences with step h against the analytic gradient of a
// scalar loss, for every element of every listed leaf. The relative error
// is |a - n| / max(|a|, |n|, floor).
GradCheckResult gradcheck(const std::function<Var<double>()>& loss,
                          const std::vector<std::pair<std::string, Var<double>>>& leaves,
                          double h = 1e-4, double floor = 1e-6);

std::vector<std::pair<std::string, Var<double>>> trainable_leaves(
    const tilemark::ParameterStore<double>& store);

}  // namespace tmtest
