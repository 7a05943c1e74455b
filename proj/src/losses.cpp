#include "tilemark/losses.hpp"

#include <algorithm>
#include <cmath>

#include "tilemark/error.hpp"
#include "tilemark/ops.hpp"

namespace tilemark {

std::string to_string(LossKind kind) {
  return kind == LossKind::kDice ? "dice" : "combined";
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "dice") return LossKind::kDice;
  if (name == "combined") return LossKind::kCombined;
  throw ConfigError("unknown loss '" + name + "'");
}

namespace {

template <typename T>
void check_target(const Var<T>& pred, std::span<const T> target, const char* op) {
  if (pred.rank() < 1 || pred.numel() == 0) throw ShapeError(std::string(op) + ": empty prediction");
  if (pred.numel() != target.size()) {
    throw ShapeError(std::string(op) + ": prediction " + shape_string(pred.shape()) + " has " +
                     std::to_string(pred.numel()) + " values, target has " +
                     std::to_string(target.size()));
  }
}

}  // namespace

template <typename T>
Var<T> dice_loss(const Var<T>& pred, std::span<const T> target, T eps) {
  check_target(pred, target, "dice_loss");
  if (!(eps > T(0))) throw ConfigError("dice_loss: smoothing eps must be positive");
  const int batch = pred.dim(0);
  const std::size_t per = pred.numel() / batch;
  const auto p = pred.data();
  std::vector<double> numer(batch), denom(batch);
  double total = 0.0;
  for (int n = 0; n < batch; ++n) {
    double inter = 0, sp = 0, sg = 0;
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      inter += static_cast<double>(p[i]) * target[i];
      sp += p[i];
      sg += target[i];
    }
    numer[n] = 2.0 * inter + eps;
    denom[n] = sp + sg + eps;
    total += 1.0 - numer[n] / denom[n];
  }
  std::vector<T> tgt(target.begin(), target.end());
  return make_result<T>(
      {1}, {static_cast<T>(total / batch)}, {pred.shared()},
      [batch, per, numer = std::move(numer), denom = std::move(denom),
       tgt = std::move(tgt)](Node<T>& self) {
        auto& dp = self.inputs[0]->grad_buffer();
        const double g = static_cast<double>(self.grad[0]) / batch;
        for (int n = 0; n < batch; ++n) {
          const double d2 = denom[n] * denom[n];
          for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
            dp[i] += static_cast<T>(-g * (2.0 * tgt[i] * denom[n] - numer[n]) / d2);
          }
        }
      });
}

template <typename T>
Var<T> bce_loss(const Var<T>& pred, std::span<const T> target) {
  check_target(pred, target, "bce_loss");
  const double lo = kBceClamp, hi = 1.0 - kBceClamp;
  const auto p = pred.data();
  const std::size_t count = p.size();
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double q = std::clamp(static_cast<double>(p[i]), lo, hi);
    total -= target[i] * std::log(q) + (1.0 - target[i]) * std::log(1.0 - q);
  }
  std::vector<T> tgt(target.begin(), target.end());
  return make_result<T>({1}, {static_cast<T>(total / count)}, {pred.shared()},
                        [count, lo, hi, tgt = std::move(tgt)](Node<T>& self) {
                          auto& in = *self.inputs[0];
                          auto& dp = in.grad_buffer();
                          const double g = static_cast<double>(self.grad[0]) / count;
                          for (std::size_t i = 0; i < count; ++i) {
                            const double v = in.value[i];
                            if (v < lo || v > hi) continue;  // clamped: zero slope
                            dp[i] += static_cast<T>(g * (-tgt[i] / v + (1.0 - tgt[i]) / (1.0 - v)));
                          }
                        });
}

template <typename T>
Var<T> combined_loss(const Var<T>& pred, std::span<const T> target, T eps) {
  return ops::add(ops::scale(dice_loss(pred, target, eps), T(0.5)),
                  ops::scale(bce_loss(pred, target), T(0.5)));
}

template <typename T>
Var<T> segmentation_loss(LossKind kind, const Var<T>& pred, std::span<const T> target) {
  return kind == LossKind::kDice ? dice_loss(pred, target) : combined_loss(pred, target);
}

namespace {

std::pair<Var<double>, std::vector<double>> as_batch(const ProbabilityMap& pred,
                                                     const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("loss: prediction " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " vs mask " + std::to_string(gt.height) + "x" +
                     std::to_string(gt.width));
  }
  std::vector<double> p(pred.values.begin(), pred.values.end());
  std::vector<double> g(gt.values.begin(), gt.values.end());
  return {Var<double>::leaf({1, pred.height, pred.width}, std::move(p)), std::move(g)};
}

}  // namespace

double dice_loss(const ProbabilityMap& pred, const BinaryMask& gt, double eps) {
  auto [p, g] = as_batch(pred, gt);
  return dice_loss<double>(p, g, eps).item();
}

double bce_loss(const ProbabilityMap& pred, const BinaryMask& gt) {
  auto [p, g] = as_batch(pred, gt);
  return bce_loss<double>(p, g).item();
}

double combined_loss(const ProbabilityMap& pred, const BinaryMask& gt) {
  auto [p, g] = as_batch(pred, gt);
  return combined_loss<double>(p, g).item();
}

#define TILEMARK_INSTANTIATE_LOSSES(T)                                          \
  template Var<T> dice_loss(const Var<T>&, std::span<const T>, T);              \
  template Var<T> bce_loss(const Var<T>&, std::span<const T>);                  \
  template Var<T> combined_loss(const Var<T>&, std::span<const T>, T);          \
  template Var<T> segmentation_loss(LossKind, const Var<T>&, std::span<const T>);

TILEMARK_INSTANTIATE_LOSSES(float)
TILEMARK_INSTANTIATE_LOSSES(double)

}  // namespace tilemark
