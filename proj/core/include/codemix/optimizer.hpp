#pragma once

#include <cstddef>

#include "codemix/tensor.hpp"

namespace codemix {

struct OptimizerConfig {
  double learning_rate = 5e-5;
  double adam_epsilon = 1e-8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
  std::size_t grad_accum_steps = 10;
  double max_grad_norm = 1.0;
  double weight_decay = 0.0;

  void validate() const;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// lr * min(step / warmup, (total - step) / (total - warmup)), floored at 0.
/// Steps are 1-based.
double scheduled_learning_rate(const OptimizerConfig& opt, std::size_t step);

/// Scales gradients so their global L2 norm is at most max_norm. Returns
/// the norm before clipping.
double clip_global_norm(TensorSet& gradients, double max_norm);

struct AdamState {
  TensorSet first_moment;
  TensorSet second_moment;
  std::size_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

AdamState make_adam_state(const TensorSet& params);

/// Clips `gradients` in place, then applies one decoupled-weight-decay Adam
/// update at the given 1-based step. Throws NumericalError on non-finite
/// gradients.
void optimizer_step(AdamState& state, TensorSet& params, TensorSet& gradients, const OptimizerConfig& opt,
                    std::size_t step);

/// Running mean of micro-batch gradients.
class GradientAccumulator {
 public:
  explicit GradientAccumulator(const TensorSet& layout) : sum_(layout.zeros_like()) {}

  void add(const TensorSet& gradients);
  std::size_t count() const noexcept { return count_; }
  /// Mean of the accumulated gradients; resets the accumulator.
  TensorSet take_mean();

 private:
  TensorSet sum_;
  std::size_t count_ = 0;
};

}  // namespace codemix
