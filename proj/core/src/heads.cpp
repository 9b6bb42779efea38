#include "slad/heads.hpp"

#include <cmath>

namespace slad {

std::size_t head_sizes(std::size_t n_in, std::size_t n_out, ModelClass mc) {
  if (n_in == 0 || n_out == 0) {
    throw ValueError("head_sizes: widths must be positive");
  }
  if (mc == ModelClass::Student) return n_in;
  double h = std::sqrt(static_cast<double>(n_in) * static_cast<double>(n_out));
  auto rounded = static_cast<std::size_t>(std::llround(h));
  return std::max<std::size_t>(rounded, 1);
}

MlpHead::MlpHead(std::size_t n_in, std::size_t n_out, ModelClass mc,
                 std::uint64_t seed)
    : n_in_(n_in), n_hidden_(head_sizes(n_in, n_out, mc)), n_out_(n_out) {
  Rng rng(seed);
  fc1_w_ = Tensor::randn({n_in_, n_hidden_}, rng,
                         std::sqrt(2.0 / static_cast<double>(n_in_)), true);
  fc1_b_ = Tensor::zeros({n_hidden_}, true);
  fc2_w_ = Tensor::randn({n_hidden_, n_out_}, rng,
                         std::sqrt(2.0 / static_cast<double>(n_hidden_)), true);
  fc2_b_ = Tensor::zeros({n_out_}, true);
}

Tensor MlpHead::forward(const Tensor& features) const {
  if (features.ndim() != 2 || features.dim(1) != n_in_) {
    throw ShapeError("MlpHead: features " + shape_str(features.shape()) +
                     " do not match n_in " + std::to_string(n_in_));
  }
  return linear(gelu(linear(features, fc1_w_, fc1_b_)), fc2_w_, fc2_b_);
}

void MlpHead::set_trainable(bool trainable) {
  visit_parameters(
      [trainable](const std::string&, Tensor& t) { t.set_requires_grad(trainable); });
}

std::vector<Tensor> MlpHead::parameters() const {
  return {fc1_w_, fc1_b_, fc2_w_, fc2_b_};
}

void MlpHead::visit_parameters(
    const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("fc1.w", fc1_w_);
  fn("fc1.b", fc1_b_);
  fn("fc2.w", fc2_w_);
  fn("fc2.b", fc2_b_);
}

}  // namespace slad
