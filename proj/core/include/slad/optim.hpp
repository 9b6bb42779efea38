#pragma once

#include <vector>

#include "slad/tensor.hpp"

namespace slad {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// AdamW with decoupled weight decay and a cosine learning-rate schedule,
/// lr(f) = base * 0.5 * (1 + cos(pi * f)) for schedule fraction f in [0, 1].
///
/// One moment slot exists per distinct parameter storage; registering the
/// same storage twice is rejected, which is what keeps shared adapters from
/// being stepped twice.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);

  /// Applies one update using each parameter's accumulated grad. Parameters
  /// whose grad was never populated are skipped. Non-finite grads abort with
  /// a diagnostic naming the parameter index.
  void step(double schedule_fraction);

  void zero_grad();
  double lr_at(double schedule_fraction) const;
  std::size_t step_count() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<Tensor> params_;
  std::vector<Slot> slots_;
  AdamWConfig cfg_;
  std::size_t t_ = 0;
};

std::size_t trainable_param_count(std::span<const Tensor> params);

}  // namespace slad
