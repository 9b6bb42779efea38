#include "slad/grad_check.hpp"

#include <cmath>

namespace slad {

GradCheckReport grad_check(const std::function<Tensor(std::span<Tensor>)>& f,
                           std::span<Tensor> inputs, double h) {
  GradCheckReport report;
  report.inputs.resize(inputs.size());

  for (Tensor& t : inputs) t.zero_grad();
  Tensor out = f(inputs);
  if (out.size() != 1) {
    throw ValueError("grad_check: f must return a scalar, got shape " +
                     shape_str(out.shape()));
  }
  if (!std::isfinite(out.item())) {
    report.finite = false;
    report.diagnostic = "non-finite function value at the base point";
    return report;
  }
  backward(out);

  std::vector<std::vector<double>> analytic(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].has_grad()) {
      analytic[i].assign(inputs[i].grad().begin(), inputs[i].grad().end());
    } else {
      analytic[i].assign(inputs[i].size(), 0.0);
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    auto vals = inputs[i].data_mut();
    auto& per = report.inputs[i];
    for (std::size_t j = 0; j < vals.size(); ++j) {
      double saved = vals[j];
      vals[j] = saved + h;
      double up = f(inputs).item();
      vals[j] = saved - h;
      double down = f(inputs).item();
      vals[j] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        report.finite = false;
        report.diagnostic = "non-finite probe at input " + std::to_string(i) +
                            " element " + std::to_string(j);
        return report;
      }
      double numeric = (up - down) / (2.0 * h);
      double a = analytic[i][j];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      double rel = std::fabs(a - numeric) / denom;
      if (rel > per.max_rel_err) {
        per.max_rel_err = rel;
        per.worst_index = j;
        per.analytic = a;
        per.numeric = numeric;
      }
      report.max_rel_err = std::max(report.max_rel_err, rel);
    }
  }
  return report;
}

}  // namespace slad
