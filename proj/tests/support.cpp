#include "support.hpp"

#include <algorithm>

namespace tmtest {

GradCheckResult gradcheck(const std::function<Var<double>()>& loss,
                          const std::vector<std::pair<std::string, Var<double>>>& leaves, double h,
                          double floor) {
  for (auto [name, leaf] : leaves) leaf.zero_grad();
  const auto root = loss();
  tilemark::backward(root);

  std::vector<std::vector<double>> analytic;
  for (const auto& [name, leaf] : leaves) {
    if (leaf.has_grad()) {
      analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    } else {
      analytic.emplace_back(leaf.numel(), 0.0);
    }
  }

  GradCheckResult result;
  tilemark::NoGradGuard no_grad;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Var<double> leaf = leaves[li].second;
    auto data = leaf.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss().item();
      data[i] = saved - h;
      const double down = loss().item();
      data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[li][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = leaves[li].first + "[" + std::to_string(i) + "] analytic " +
                       std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return result;
}

std::vector<std::pair<std::string, Var<double>>> trainable_leaves(
    const tilemark::ParameterStore<double>& store) {
  std::vector<std::pair<std::string, Var<double>>> out;
  for (const auto& e : store.entries()) {
    if (e.kind == tilemark::ParamKind::kTrainable) out.emplace_back(e.name, e.var);
  }
  return out;
}

}  // namespace tmtest
