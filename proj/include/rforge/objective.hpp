#pragma once

// Composite generator objective:
//   perturbation  mean_i log(1 / max(|y_p - y_np|, epsilon_gap))
//   l1            mean over voxels of |MRI_p - MRI_np|
//   indecisive    mean_i (-alpha (y_p - beta)^2 + delta)
// summed without weights. y are post-sigmoid classifier probabilities.

#include <cmath>
#include <ostream>
#include <span>
#include <string>

#include "rforge/autodiff.hpp"
#include "rforge/error.hpp"
#include "rforge/models.hpp"
#include "rforge/volume.hpp"

namespace rforge {

enum class L1Mode { kVoxelMean, kItemSum };

struct LossConfig {
  double alpha = 4.0;
  double beta = 0.5;
  double delta = 1.0;
  double epsilon_gap = 1e-6;
  L1Mode l1_mode = L1Mode::kVoxelMean;
  // Not part of the reference objective; all 1 unless explicitly tuned.
  double weight_perturbation = 1.0;
  double weight_l1 = 1.0;
  double weight_indecisive = 1.0;

  void validate() const {
    if (!(alpha >= 0.0)) throw SpecError("loss.alpha must be >= 0");
    if (!(beta >= 0.0 && beta <= 1.0)) throw SpecError("loss.beta must lie in [0,1]");
    if (!(epsilon_gap > 0.0)) throw SpecError("loss.epsilon_gap must be > 0");
    if (!std::isfinite(delta)) throw SpecError("loss.delta must be finite");
  }
};

struct LossBreakdown {
  double perturbation = 0;
  double l1 = 0;
  double indecisive = 0;
  double total = 0;
  double y_p = 0;   // batch mean
  double y_np = 0;  // batch mean
};

// One TSV row: step, y_np, y_p, perturbation, l1, indecisive, total.
inline void write_breakdown_row(std::ostream& os, std::size_t step, const LossBreakdown& b) {
  os << step << '\t' << b.y_np << '\t' << b.y_p << '\t' << b.perturbation << '\t' << b.l1 << '\t'
     << b.indecisive << '\t' << b.total << '\n';
}
inline constexpr const char* kBreakdownHeader = "step\ty_np\ty_p\tperturbation\tl1\tindecisive\ttotal\n";

// ---------------------------------------------------------------------------
// Scalar forms.

inline double perturbation_loss(double y_p, double y_np, const LossConfig& cfg) {
  return -std::log(std::max(std::abs(y_p - y_np), cfg.epsilon_gap));
}

inline double perturbation_loss(std::span<const double> y_p, std::span<const double> y_np,
                                const LossConfig& cfg) {
  if (y_p.size() != y_np.size() || y_p.empty()) throw DimensionError("perturbation_loss batch mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < y_p.size(); ++i) acc += perturbation_loss(y_p[i], y_np[i], cfg);
  return acc / static_cast<double>(y_p.size());
}

inline double indecisive_penalty(double y_p, const LossConfig& cfg) {
  const double d = y_p - cfg.beta;
  return -cfg.alpha * d * d + cfg.delta;
}

inline double indecisive_penalty(std::span<const double> y_p, const LossConfig& cfg) {
  if (y_p.empty()) throw DimensionError("indecisive_penalty on empty batch");
  double acc = 0;
  for (double y : y_p) acc += indecisive_penalty(y, cfg);
  return acc / static_cast<double>(y_p.size());
}

inline double l1_loss(const Volume& mri_p, const Volume& mri_np, L1Mode mode = L1Mode::kVoxelMean) {
  if (!mri_p.same_shape(mri_np)) throw DimensionError("l1_loss shape mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < mri_p.size(); ++i)
    acc += std::abs(static_cast<double>(mri_p.voxels()[i]) - mri_np.voxels()[i]);
  return mode == L1Mode::kVoxelMean ? acc / static_cast<double>(mri_p.size()) : acc;
}

// ---------------------------------------------------------------------------
// Differentiable forms over batches.

namespace ad {

template <class T>
Var<T> perturbation_term(const Var<T>& y_p, const Var<T>& y_np, const LossConfig& cfg) {
  auto gap = clamp_min(abs(sub(y_p, y_np)), static_cast<T>(cfg.epsilon_gap));
  return affine(mean(log(gap)), T(-1));
}

template <class T>
Var<T> indecisive_term(const Var<T>& y_p, const LossConfig& cfg) {
  auto centered = affine(y_p, T(1), static_cast<T>(-cfg.beta));
  return mean(affine(square(centered), static_cast<T>(-cfg.alpha), static_cast<T>(cfg.delta)));
}

template <class T>
Var<T> l1_term(const Var<T>& mri_p, const Var<T>& mri_np, L1Mode mode) {
  auto diff = abs(sub(mri_p, mri_np));
  if (mode == L1Mode::kVoxelMean) return mean(diff);
  return mean(sum_per_item(diff));
}

}  // namespace ad

template <class T>
struct ObjectiveResult {
  ad::Var<T> total;
  ad::Var<T> y_p;   // [N]
  Tensor<T> y_np;   // [N]
  LossBreakdown breakdown;
};

// Full objective for one batch. `mri_np` is [N,C,D,H,W]; `mask` has the same
// shape. The classifier must be frozen; y_np is evaluated without recording.
template <class T>
ObjectiveResult<T> total_loss(const ModelParams<T>& classifier, const ad::Var<T>& mri_np,
                              const ad::Var<T>& mask, const LossConfig& cfg) {
  for (const auto& p : classifier.params())
    if (p.var->requires_grad) throw UsageError("total_loss requires a frozen classifier");
  if (mri_np->value.shape != mask->value.shape)
    throw DimensionError("mask shape " + to_string(mask->value.shape) + " does not match volume " +
                         to_string(mri_np->value.shape));
  ObjectiveResult<T> r;
  {
    ad::NoGradGuard guard;
    r.y_np = classifier_forward(classifier, ad::constant(mri_np->value))->value;
  }
  auto y_np = ad::constant(r.y_np);
  auto mri_p = ad::mul(mri_np, mask);
  r.y_p = classifier_forward(classifier, mri_p);

  auto pert = ad::perturbation_term(r.y_p, y_np, cfg);
  auto l1 = ad::l1_term(mri_p, mri_np, cfg.l1_mode);
  auto ind = ad::indecisive_term(r.y_p, cfg);
  r.total = ad::add(ad::add(ad::affine(pert, static_cast<T>(cfg.weight_perturbation)),
                            ad::affine(l1, static_cast<T>(cfg.weight_l1))),
                    ad::affine(ind, static_cast<T>(cfg.weight_indecisive)));

  auto& b = r.breakdown;
  b.perturbation = static_cast<double>(pert->value[0]);
  b.l1 = static_cast<double>(l1->value[0]);
  b.indecisive = static_cast<double>(ind->value[0]);
  b.total = static_cast<double>(r.total->value[0]);
  const std::size_t n = r.y_np.size();
  for (std::size_t i = 0; i < n; ++i) {
    b.y_p += static_cast<double>(r.y_p->value[i]) / static_cast<double>(n);
    b.y_np += static_cast<double>(r.y_np[i]) / static_cast<double>(n);
  }
  return r;
}

}  // namespace rforge
