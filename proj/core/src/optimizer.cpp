#include "codemix/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "codemix/model.hpp"

namespace codemix {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !(adam_epsilon > 0.0)) {
    throw std::invalid_argument("learning_rate and adam_epsilon must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (warmup_steps > total_steps) throw std::invalid_argument("warmup_steps must not exceed total_steps");
  if (grad_accum_steps < 1) throw std::invalid_argument("grad_accum_steps must be >= 1");
  if (!(max_grad_norm > 0.0)) throw std::invalid_argument("max_grad_norm must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
}

double scheduled_learning_rate(const OptimizerConfig& opt, std::size_t step) {
  const double s = static_cast<double>(step);
  const double warm = opt.warmup_steps == 0 ? std::numeric_limits<double>::infinity()
                                            : s / static_cast<double>(opt.warmup_steps);
  double decay = 0.0;
  if (opt.total_steps > opt.warmup_steps) {
    decay = (static_cast<double>(opt.total_steps) - s) / static_cast<double>(opt.total_steps - opt.warmup_steps);
  } else {
    decay = step <= opt.total_steps ? 1.0 : 0.0;
  }
  return opt.learning_rate * std::max(0.0, std::min(warm, decay));
}

double clip_global_norm(TensorSet& gradients, double max_norm) {
  const double norm = gradients.global_norm();
  if (norm > max_norm) gradients.scale(max_norm / norm);
  return norm;
}

AdamState make_adam_state(const TensorSet& params) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

void optimizer_step(AdamState& state, TensorSet& params, TensorSet& gradients, const OptimizerConfig& opt,
                    std::size_t step) {
  if (step < 1) throw std::invalid_argument("optimizer steps are 1-based");
  if (!gradients.same_layout(params) || !state.first_moment.same_layout(params)) {
    throw std::invalid_argument("optimizer state, gradients and parameters must share a layout");
  }
  if (!gradients.all_finite()) throw NumericalError("non-finite gradients");
  clip_global_norm(gradients, opt.max_grad_norm);

  const double lr = scheduled_learning_rate(opt, step);
  const double bias1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t].data;
    const auto& g = gradients[t].data;
    auto& m = state.first_moment[t].data;
    auto& v = state.second_moment[t].data;
    const double decay = params[t].decay ? opt.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      if (decay != 0.0) p[i] -= lr * decay * p[i];
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + opt.adam_epsilon);
    }
  }
  state.step = step;
}

void GradientAccumulator::add(const TensorSet& gradients) {
  sum_.add_scaled(gradients, 1.0);
  ++count_;
}

TensorSet GradientAccumulator::take_mean() {
  if (count_ == 0) throw std::logic_error("no gradients accumulated");
  TensorSet mean = sum_;
  mean.scale(1.0 / static_cast<double>(count_));
  sum_.fill(0.0);
  count_ = 0;
  return mean;
}

}  // namespace codemix
