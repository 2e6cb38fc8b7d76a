#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rforge/models.hpp"

namespace rforge {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Parameters without a gradient this step are
// left untouched (their moments do not decay).
template <class T>
class Adam {
 public:
  Adam(ModelParams<T>& model, AdamConfig cfg) : model_(&model), cfg_(cfg) {
    for (const auto& p : model.params()) {
      first_.emplace_back(p.var->value.shape);
      second_.emplace_back(p.var->value.shape);
    }
  }

  void step() {
    ++steps_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    const auto& params = model_->params();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& node = *params[k].var;
      if (!node.has_grad()) continue;
      auto& m = first_[k];
      auto& v = second_[k];
      for (std::size_t i = 0; i < node.value.size(); ++i) {
        const double g = node.grad[i];
        const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = cfg_.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg_.eps);
        node.value[i] = static_cast<T>(node.value[i] - update);
      }
    }
  }

  std::uint64_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return cfg_; }
  const Tensor<T>& first_moment(std::size_t k) const { return first_[k]; }
  const Tensor<T>& second_moment(std::size_t k) const { return second_[k]; }

 private:
  ModelParams<T>* model_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> first_;
  std::vector<Tensor<T>> second_;
  std::uint64_t steps_ = 0;
};

}  // namespace rforge
