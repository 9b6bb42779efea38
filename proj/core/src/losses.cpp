#include "slad/losses.hpp"

namespace slad {

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) {
    throw ValueError("DistillConfig: temperature must be positive, got " +
                     std::to_string(temperature));
  }
  if (alpha_s < 0.0 || alpha_t < 0.0 || alpha_kl < 0.0) {
    throw ValueError("DistillConfig: loss weights must be non-negative");
  }
  if (alpha_s == 0.0 && alpha_t == 0.0 && alpha_kl == 0.0) {
    throw ValueError("DistillConfig: at least one loss weight must be positive");
  }
}

DistillConfig kd_defaults() { return DistillConfig{}; }

DistillConfig slad_defaults() {
  DistillConfig cfg;
  cfg.alpha_s = 1.0;
  cfg.alpha_t = 1.0;
  cfg.alpha_kl = 1.0;
  return cfg;
}

namespace {

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  std::vector<double> v(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw DataError("label " + std::to_string(labels[i]) +
                      " out of range for " + std::to_string(classes) +
                      " classes");
    }
    v[i * classes + labels[i]] = 1.0;
  }
  return Tensor::from_data({labels.size(), classes}, std::move(v));
}

}  // namespace

Tensor cross_entropy(const Tensor& logits,
                     std::span<const std::size_t> labels) {
  if (logits.ndim() != 2) {
    throw ShapeError("cross_entropy: logits must be [B x C], got " +
                     shape_str(logits.shape()));
  }
  std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch " + std::to_string(batch));
  }
  Tensor picked = mul(log_softmax(logits), one_hot(labels, classes));
  return scale(sum(picked), -1.0 / static_cast<double>(batch));
}

Tensor softened_kl(const Tensor& teacher_logits, const Tensor& student_logits,
                   const DistillConfig& cfg) {
  if (teacher_logits.shape() != student_logits.shape()) {
    throw ShapeError("softened_kl: teacher " +
                     shape_str(teacher_logits.shape()) + " vs student " +
                     shape_str(student_logits.shape()));
  }
  double inv_t = 1.0 / cfg.temperature;
  Tensor t = cfg.detach_teacher_in_kl && teacher_logits.requires_grad()
                 ? teacher_logits.detach()
                 : teacher_logits;
  const Tensor& ref = cfg.kl_teacher_ref ? t : student_logits;
  const Tensor& other = cfg.kl_teacher_ref ? student_logits : t;
  Tensor p_ref = softmax_temperature(ref, cfg.temperature);
  Tensor lp_ref = log_softmax(scale(ref, inv_t));
  Tensor lp_other = log_softmax(scale(other, inv_t));
  std::size_t batch = teacher_logits.dim(0);
  return scale(sum(mul(p_ref, sub(lp_ref, lp_other))),
               1.0 / static_cast<double>(batch));
}

Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
               std::span<const std::size_t> labels, const DistillConfig& cfg) {
  cfg.validate();
  if (student_logits.shape() != teacher_logits.shape()) {
    throw ShapeError("kd_loss: student " + shape_str(student_logits.shape()) +
                     " vs teacher " + shape_str(teacher_logits.shape()));
  }
  Tensor loss;
  if (cfg.alpha_s > 0.0) {
    loss = scale(cross_entropy(student_logits, labels), cfg.alpha_s);
  }
  if (cfg.alpha_kl > 0.0) {
    Tensor kl = scale(softened_kl(teacher_logits, student_logits, cfg),
                      cfg.alpha_kl * cfg.temperature * cfg.temperature);
    loss = loss.defined() ? add(loss, kl) : kl;
  }
  if (!loss.defined()) loss = Tensor::scalar(0.0);
  return loss;
}

Tensor slad_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                 std::span<const std::size_t> labels,
                 const DistillConfig& cfg) {
  cfg.validate();
  if (student_logits.shape() != teacher_logits.shape()) {
    throw ShapeError("slad_loss: student " +
                     shape_str(student_logits.shape()) + " vs teacher " +
                     shape_str(teacher_logits.shape()));
  }
  Tensor loss;
  if (cfg.alpha_s > 0.0) {
    loss = scale(cross_entropy(student_logits, labels), cfg.alpha_s);
  }
  if (cfg.alpha_t > 0.0) {
    Tensor t_task = scale(cross_entropy(teacher_logits, labels), cfg.alpha_t);
    loss = loss.defined() ? add(loss, t_task) : t_task;
  }
  if (cfg.alpha_kl > 0.0) {
    Tensor kl = scale(softened_kl(teacher_logits, student_logits, cfg),
                      cfg.alpha_kl * cfg.temperature * cfg.temperature);
    loss = loss.defined() ? add(loss, kl) : kl;
  }
  if (!loss.defined()) loss = Tensor::scalar(0.0);
  return loss;
}

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

double accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
  std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("accuracy: " + std::to_string(labels.size()) +
                     " labels for batch " + std::to_string(batch));
  }
  std::size_t hits = 0;
  auto data = logits.data();
  for (std::size_t i = 0; i < batch; ++i) {
    if (argmax_row(data.subspan(i * classes, classes)) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(batch);
}

}  // namespace slad
