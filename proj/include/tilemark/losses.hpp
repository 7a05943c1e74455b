#pragma once

#include <span>
#include <string>

#include "tilemark/autograd.hpp"
#include "tilemark/image.hpp"

namespace tilemark {

enum class LossKind { kDice, kCombined };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

// Additive smoothing in numerator and denominator of the dice term.
inline constexpr double kDefaultDiceSmoothing = 1.0;
// Probabilities are clamped to [delta, 1 - delta] before the logarithm.
inline constexpr double kBceClamp = 1e-7;

// Differentiable losses over a batch of predictions (leading axis = sample,
// remaining axes flattened) against {0,1} targets of the same element count.
//
// dice: mean over samples of 1 - (2 sum(p g) + eps) / (sum p + sum g + eps)
// bce:  mean over all pixels of -[g ln p + (1 - g) ln(1 - p)]
template <typename T>
Var<T> dice_loss(const Var<T>& pred, std::span<const T> target, T eps = T(kDefaultDiceSmoothing));

template <typename T>
Var<T> bce_loss(const Var<T>& pred, std::span<const T> target);

// 0.5 * dice + 0.5 * bce
template <typename T>
Var<T> combined_loss(const Var<T>& pred, std::span<const T> target,
                     T eps = T(kDefaultDiceSmoothing));

template <typename T>
Var<T> segmentation_loss(LossKind kind, const Var<T>& pred, std::span<const T> target);

// Single-map conveniences evaluated at double precision.
double dice_loss(const ProbabilityMap& pred, const BinaryMask& gt,
                 double eps = kDefaultDiceSmoothing);
double bce_loss(const ProbabilityMap& pred, const BinaryMask& gt);
double combined_loss(const ProbabilityMap& pred, const BinaryMask& gt);

}  // namespace tilemark
