#pragma once

#include <span>

#include "slad/ops.hpp"

namespace slad {

/// Temperature and loss weights for the distillation objectives. The KL term
/// is alpha_kl * T^2 * KL(softmax(t/T) || softmax(s/T)); task terms run at
/// T = 1. The teacher side of the KL is detached unless the mutual-learning
/// flag is cleared.
struct DistillConfig {
  double temperature = 2.0;
  double alpha_s = 0.5;
  double alpha_t = 0.0;
  double alpha_kl = 0.5;
  bool detach_teacher_in_kl = true;
  /// KL argument order; true keeps the teacher as the reference
  /// distribution, KL(p_t || p_s).
  bool kl_teacher_ref = true;

  void validate() const;
};

DistillConfig kd_defaults();    // T=2, (alpha_s, alpha_kl) = (0.5, 0.5)
DistillConfig slad_defaults();  // T=2, (alpha_s, alpha_t, alpha_kl) = (1,1,1)

/// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// Batch-mean KL between the softened distributions (no T^2 factor).
Tensor softened_kl(const Tensor& teacher_logits, const Tensor& student_logits,
                   const DistillConfig& cfg);

/// alpha_s * CE(student, labels) + alpha_kl * T^2 * KL.
Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
               std::span<const std::size_t> labels, const DistillConfig& cfg);

/// kd_loss plus alpha_t * CE(teacher, labels); the teacher's task term is
/// what reaches the shared adapters through the teacher path.
Tensor slad_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                 std::span<const std::size_t> labels,
                 const DistillConfig& cfg);

std::size_t argmax_row(std::span<const double> row);
double accuracy(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace slad
