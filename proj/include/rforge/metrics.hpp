#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "rforge/autodiff.hpp"
#include "rforge/error.hpp"

namespace rforge {

inline constexpr double kBceClamp = 1e-7;

// -[y log p + (1-y) log(1-p)], p clamped to [1e-7, 1-1e-7].
inline double bce_loss(double p, int y) {
  const double q = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
  return y ? -std::log(q) : -std::log(1.0 - q);
}

namespace ad {

// Batch-mean binary cross-entropy of probabilities p [N] against labels.
template <class T>
Var<T> bce(const Var<T>& p, std::span<const int> labels) {
  if (p->value.size() != labels.size()) throw DimensionError("bce: label count mismatch");
  const std::size_t n = labels.size();
  const T lo = static_cast<T>(kBceClamp), hi = static_cast<T>(1.0 - kBceClamp);
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T q = std::clamp(p->value[i], lo, hi);
    acc += labels[i] ? -std::log(q) : -std::log(T(1) - q);
  }
  std::vector<int> y(labels.begin(), labels.end());
  return detail::make<T>(Tensor<T>({1}, acc / static_cast<T>(n)), {p},
                         [y = std::move(y), lo, hi](Node<T>& self) {
                           auto& p = *self.parents[0];
                           auto& g = p.ensure_grad();
                           const T scale = self.grad[0] / static_cast<T>(y.size());
                           for (std::size_t i = 0; i < y.size(); ++i) {
                             const T v = p.value[i];
                             if (v <= lo || v >= hi) continue;
                             g[i] += y[i] ? -scale / v : scale / (T(1) - v);
                           }
                         },
                         "bce");
}

}  // namespace ad

// Mann-Whitney AUC: P(score of a positive > score of a negative), ties
// counted half. Rank-based, O(n log n).
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: size mismatch");
  std::size_t pos = 0;
  for (int y : labels) pos += y ? 1 : 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw MetricError("auc needs both classes present");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Midranks over tie groups.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]]) rank_sum += mid;
    i = j;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

}  // namespace rforge
