#pragma once

#include <functional>

#include "slad/tensor.hpp"

namespace slad {

/// Outcome of one finite-difference sweep. `max_rel_err` covers every element
/// of every input; `inputs[i]` pinpoints the worst element per input.
struct GradCheckReport {
  struct PerInput {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
  };
  std::vector<PerInput> inputs;
  double max_rel_err = 0.0;
  bool finite = true;
  std::string diagnostic;

  bool ok(double tol) const { return finite && max_rel_err <= tol; }
};

/// Compares the analytic gradient of the scalar function `f` against central
/// differences (f(x+h*e) - f(x-h*e)) / (2h), element by element. Relative
/// error uses a max(|analytic|, |numeric|, 1e-8) denominator. Inputs are
/// perturbed in place and restored.
GradCheckReport grad_check(
    const std::function<Tensor(std::span<Tensor>)>& f,
    std::span<Tensor> inputs, double h = 1e-5);

}  // namespace slad
