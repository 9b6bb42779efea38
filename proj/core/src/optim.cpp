#include "slad/optim.hpp"

#include <cmath>
#include <unordered_set>

namespace slad {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  std::unordered_set<const detail::Node*> seen;
  for (const Tensor& p : params_) {
    if (!p.defined()) throw ConfigError("AdamW: undefined parameter");
    if (!seen.insert(p.node()).second) {
      throw ConfigError(
          "AdamW: parameter storage registered twice (shared parameters must "
          "be listed once)");
    }
  }
  slots_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    slots_[i].m.assign(params_[i].size(), 0.0);
    slots_[i].v.assign(params_[i].size(), 0.0);
  }
}

double AdamW::lr_at(double f) const {
  if (f < 0.0) f = 0.0;
  if (f > 1.0) f = 1.0;
  return cfg_.lr * 0.5 * (1.0 + std::cos(M_PI * f));
}

void AdamW::step(double schedule_fraction) {
  ++t_;
  double lr = lr_at(schedule_fraction);
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.data_mut();
    Slot& s = slots_[pi];
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw ValueError("AdamW: non-finite gradient in parameter " +
                         std::to_string(pi) + " at element " +
                         std::to_string(i));
      }
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = s.m[i] / bc1;
      double vhat = s.v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                    cfg_.weight_decay * w[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

std::size_t trainable_param_count(std::span<const Tensor> params) {
  std::size_t n = 0;
  for (const Tensor& p : params) n += p.size();
  return n;
}

}  // namespace slad
