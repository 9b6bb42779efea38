#pragma once

#include <functional>
#include <string>

#include "slad/ops.hpp"

namespace slad {

enum class ModelClass { Student, Teacher };

/// Hidden width of the prediction MLP: the student keeps n_hidden = n_in,
/// the teacher uses round(sqrt(n_in * n_out)).
std::size_t head_sizes(std::size_t n_in, std::size_t n_out, ModelClass mc);

/// Two-layer MLP prediction head (linear, GELU, linear).
class MlpHead {
 public:
  MlpHead(std::size_t n_in, std::size_t n_out, ModelClass mc,
          std::uint64_t seed);

  Tensor forward(const Tensor& features) const;  // [B, n_in] -> [B, n_out]

  std::size_t n_in() const { return n_in_; }
  std::size_t n_hidden() const { return n_hidden_; }
  std::size_t n_out() const { return n_out_; }

  void set_trainable(bool trainable);
  std::vector<Tensor> parameters() const;
  void visit_parameters(
      const std::function<void(const std::string&, Tensor&)>& fn);

 private:
  std::size_t n_in_, n_hidden_, n_out_;
  Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

}  // namespace slad
