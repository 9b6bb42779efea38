#include "slad/training.hpp"

#include <chrono>
#include <cmath>

namespace slad {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_s(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// CE and accuracy straight off logits data; no trace involvement.
EvalResult raw_ce_acc(const Tensor& logits,
                      std::span<const std::size_t> labels) {
  std::size_t batch = logits.dim(0), classes = logits.dim(1);
  auto data = logits.data();
  double ce = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = data.data() + i * classes;
    double mx = row[0];
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > mx) {
        mx = row[c];
        best = c;
      }
    }
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(row[c] - mx);
    ce += mx + std::log(total) - row[labels[i]];
    if (best == labels[i]) ++hits;
  }
  return {ce / static_cast<double>(batch),
          static_cast<double>(hits) / static_cast<double>(batch)};
}

// Weighted running mean of per-batch stats.
struct RunningStat {
  double loss_sum = 0.0, acc_sum = 0.0;
  std::size_t n = 0;
  void add(const EvalResult& r, std::size_t batch) {
    loss_sum += r.loss * static_cast<double>(batch);
    acc_sum += r.acc * static_cast<double>(batch);
    n += batch;
  }
  EvalResult mean() const {
    if (n == 0) return {};
    return {loss_sum / static_cast<double>(n),
            acc_sum / static_cast<double>(n)};
  }
};

struct EpochBatches {
  std::vector<std::size_t> order;
  std::size_t batch_size;

  std::size_t batches() const {
    return (order.size() + batch_size - 1) / batch_size;
  }
  std::span<const std::size_t> batch(std::size_t b) const {
    std::size_t lo = b * batch_size;
    std::size_t hi = std::min(order.size(), lo + batch_size);
    return {order.data() + lo, hi - lo};
  }
};

EpochBatches shuffled_epoch(const Dataset& ds, std::size_t batch_size,
                            Rng& rng) {
  EpochBatches eb;
  eb.order = ds.train_idx;
  eb.batch_size = batch_size;
  rng.shuffle(eb.order);
  return eb;
}

std::vector<bool> draw_flips(const Dataset& ds, std::size_t count, Rng& rng) {
  std::vector<bool> flips(count, false);
  if (ds.augment_hflip) {
    for (std::size_t i = 0; i < count; ++i) flips[i] = rng.uniform() < 0.5;
  }
  return flips;
}

void record_epoch(const TrainSchedule& sched, RunMetrics& rm,
                  const std::string& role, std::size_t epoch,
                  const EvalResult& train, const EvalResult* val,
                  const PassCounters& counters) {
  auto push = [&](const std::string& split, const EvalResult& r) {
    MetricsRecord rec;
    rec.run_id = sched.run_id;
    rec.epoch = sched.epoch_offset + epoch;
    rec.split = split;
    rec.role = role;
    rec.loss = r.loss;
    rec.accuracy = r.acc;
    rec.fwd_passes = counters.fwd;
    rec.bwd_passes = counters.bwd;
    rm.records.push_back(rec);
    if (sched.sink) sched.sink->record(rec);
  };
  push("train", train);
  if (val) push("val", *val);
}

void finish_phase(const TrainSchedule& sched, RunMetrics& rm,
                  const std::string& phase, Clock::time_point start) {
  double s = elapsed_s(start);
  rm.phase_seconds[phase] += s;
  if (sched.sink) sched.sink->timing(sched.run_id, phase, s);
}

}  // namespace

TaskModel::TaskModel(EncoderConfig cfg, std::size_t num_classes, ModelClass mc,
                     std::uint64_t seed)
    : encoder(cfg, derive_seed(seed, "encoder")),
      head(3 * cfg.dim, num_classes, mc, derive_seed(seed, "head")),
      cls_blocks(3),
      model_class(mc) {
  if (cfg.depth < cls_blocks) cls_blocks = cfg.depth;
  if (cfg.depth < 3) {
    head = MlpHead(cls_blocks * cfg.dim, num_classes, mc,
                   derive_seed(seed, "head"));
  }
}

Tensor TaskModel::logits(const Tensor& images,
                         const AdapterBindings* bindings) const {
  EncoderForward fwd = encoder.forward(images, bindings);
  Tensor features = extract_cls_concat(fwd.block_tokens, cls_blocks);
  return head.forward(features);
}

void TaskModel::attach_lora(std::size_t rank, std::uint64_t seed) {
  lora = make_encoder_lora(encoder.config().dim, encoder.config().depth, rank,
                           seed);
}

void TaskModel::set_lora_trainable(bool trainable) {
  if (!lora) return;
  for (LoraAdapter& ad : lora->adapters) {
    ad.a.set_requires_grad(trainable);
    ad.b.set_requires_grad(trainable);
  }
}

AdapterBindings TaskModel::own_bindings() const {
  return lora ? lora->bindings() : AdapterBindings{};
}

double RunMetrics::total_seconds() const {
  double s = 0.0;
  for (const auto& [_, v] : phase_seconds) s += v;
  return s;
}

void RunMetrics::merge(const RunMetrics& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
  teacher_passes.fwd += other.teacher_passes.fwd;
  teacher_passes.bwd += other.teacher_passes.bwd;
  student_passes.fwd += other.student_passes.fwd;
  student_passes.bwd += other.student_passes.bwd;
  for (const auto& [k, v] : other.phase_seconds) phase_seconds[k] += v;
}

EvalResult evaluate_split(const TaskModel& model,
                          const AdapterBindings* bindings, const Dataset& ds,
                          std::span<const std::size_t> split,
                          std::size_t batch_size) {
  NoGradGuard no_grad;
  RunningStat stat;
  for (std::size_t lo = 0; lo < split.size(); lo += batch_size) {
    std::size_t hi = std::min(split.size(), lo + batch_size);
    std::span<const std::size_t> idx{split.data() + lo, hi - lo};
    Tensor images = make_image_batch(ds, idx);
    std::vector<std::size_t> labels = gather_labels(ds, idx);
    Tensor logits = model.logits(images, bindings);
    stat.add(raw_ce_acc(logits, labels), idx.size());
  }
  return stat.mean();
}

const char* to_string(AdaptMode mode) {
  return mode == AdaptMode::Full ? "full" : "lora";
}

const char* to_string(TeacherMode mode) {
  switch (mode) {
    case TeacherMode::Probe:
      return "probe";
    case TeacherMode::Lora:
      return "lora";
    case TeacherMode::Full:
      return "full";
  }
  return "?";
}

TeacherMode teacher_mode_from_string(const std::string& name) {
  if (name == "probe") return TeacherMode::Probe;
  if (name == "lora") return TeacherMode::Lora;
  if (name == "full") return TeacherMode::Full;
  throw ConfigError("teacher mode: unknown '" + name +
                    "' (expected probe|lora|full)");
}

RunMetrics train_probing(TaskModel& model, const std::string& role,
                         const Dataset& ds, const TrainSchedule& sched) {
  auto start = Clock::now();
  RunMetrics rm;
  PassCounters& counters =
      role == "teacher" ? rm.teacher_passes : rm.student_passes;

  model.encoder.set_trainable(false);
  model.head.set_trainable(true);
  AdamW opt(model.head.parameters(), sched.optim);
  Rng batch_rng(derive_seed(sched.seed, sched.batch_label));

  std::size_t steps_per_epoch =
      (ds.train_idx.size() + sched.batch_size - 1) / sched.batch_size;
  std::size_t total_steps = std::max<std::size_t>(1, sched.epochs * steps_per_epoch);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < sched.epochs; ++epoch) {
    EpochBatches eb = shuffled_epoch(ds, sched.batch_size, batch_rng);
    RunningStat train_stat;
    for (std::size_t b = 0; b < eb.batches(); ++b) {
      auto idx = eb.batch(b);
      std::vector<bool> flips = draw_flips(ds, idx.size(), batch_rng);
      Tensor images = make_image_batch(ds, idx, &flips);
      std::vector<std::size_t> labels = gather_labels(ds, idx);
      Tensor logits = model.logits(images);
      counters.fwd += idx.size();  // frozen encoder: no encoder backward
      Tensor loss = cross_entropy(logits, labels);
      opt.zero_grad();
      backward(loss);
      opt.step(static_cast<double>(step) / static_cast<double>(total_steps));
      ++step;
      train_stat.add(raw_ce_acc(logits, labels), idx.size());
    }
    if (sched.eval_each_epoch) {
      EvalResult val = evaluate_split(model, nullptr, ds, ds.val_idx,
                                      sched.batch_size);
      record_epoch(sched, rm, role, epoch, train_stat.mean(), &val, counters);
    } else {
      record_epoch(sched, rm, role, epoch, train_stat.mean(), nullptr,
                   counters);
    }
    if (sched.on_epoch_end) sched.on_epoch_end(sched.epoch_offset + epoch);
  }
  finish_phase(sched, rm, "probe-" + role, start);
  return rm;
}

RunMetrics train_adapt(TaskModel& model, AdaptMode mode,
                       const std::string& role, const Dataset& ds,
                       const TrainSchedule& sched) {
  auto start = Clock::now();
  RunMetrics rm;
  PassCounters& counters =
      role == "teacher" ? rm.teacher_passes : rm.student_passes;

  AdapterBindings bindings;
  std::vector<Tensor> params;
  if (mode == AdaptMode::Lora) {
    if (!model.lora) {
      throw ConfigError("train_adapt: lora mode requires attached adapters");
    }
    model.encoder.set_trainable(false);
    model.set_lora_trainable(true);
    bindings = model.own_bindings();
    params = model.lora->parameters();
  } else {
    model.encoder.set_trainable(true);
    params = model.encoder.parameters();
  }
  model.head.set_trainable(true);
  for (const Tensor& t : model.head.parameters()) params.push_back(t);
  AdamW opt(std::move(params), sched.optim);

  const AdapterBindings* bind_ptr = bindings.empty() ? nullptr : &bindings;
  Rng batch_rng(derive_seed(sched.seed, sched.batch_label));
  std::size_t steps_per_epoch =
      (ds.train_idx.size() + sched.batch_size - 1) / sched.batch_size;
  std::size_t total_steps = std::max<std::size_t>(1, sched.epochs * steps_per_epoch);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < sched.epochs; ++epoch) {
    EpochBatches eb = shuffled_epoch(ds, sched.batch_size, batch_rng);
    RunningStat train_stat;
    for (std::size_t b = 0; b < eb.batches(); ++b) {
      auto idx = eb.batch(b);
      std::vector<bool> flips = draw_flips(ds, idx.size(), batch_rng);
      Tensor images = make_image_batch(ds, idx, &flips);
      std::vector<std::size_t> labels = gather_labels(ds, idx);
      Tensor logits = model.logits(images, bind_ptr);
      counters.fwd += idx.size();
      Tensor loss = cross_entropy(logits, labels);
      opt.zero_grad();
      backward(loss);
      counters.bwd += idx.size();
      opt.step(static_cast<double>(step) / static_cast<double>(total_steps));
      ++step;
      train_stat.add(raw_ce_acc(logits, labels), idx.size());
    }
    if (sched.eval_each_epoch) {
      EvalResult val = evaluate_split(model, bind_ptr, ds, ds.val_idx,
                                      sched.batch_size);
      record_epoch(sched, rm, role, epoch, train_stat.mean(), &val, counters);
    } else {
      record_epoch(sched, rm, role, epoch, train_stat.mean(), nullptr,
                   counters);
    }
    if (sched.on_epoch_end) sched.on_epoch_end(sched.epoch_offset + epoch);
  }
  finish_phase(sched, rm, "adapt-" + std::string(to_string(mode)) + "-" + role,
               start);
  return rm;
}

RunMetrics distill_two_step(TaskModel& teacher, TaskModel& student,
                            const Dataset& ds, const TwoStepOptions& opts,
                            const TrainSchedule& sched) {
  if (teacher.head.n_out() != student.head.n_out()) {
    throw ConfigError("distill_two_step: teacher has " +
                      std::to_string(teacher.head.n_out()) +
                      " classes, student " +
                      std::to_string(student.head.n_out()));
  }
  RunMetrics rm;

  // step one: adapt the teacher
  TrainSchedule stage1 = sched;
  stage1.epochs = opts.teacher_epochs;
  stage1.optim = opts.teacher_optim;
  stage1.batch_label = "batches-teacher";
  switch (opts.teacher_mode) {
    case TeacherMode::Probe:
      rm.merge(train_probing(teacher, "teacher", ds, stage1));
      break;
    case TeacherMode::Lora:
      teacher.attach_lora(opts.rank, derive_seed(sched.seed, "lora.teacher"));
      rm.merge(train_adapt(teacher, AdaptMode::Lora, "teacher", ds, stage1));
      break;
    case TeacherMode::Full:
      rm.merge(train_adapt(teacher, AdaptMode::Full, "teacher", ds, stage1));
      break;
  }

  // step two: teacher frozen end to end, student trains on the KD loss
  auto start = Clock::now();
  teacher.encoder.set_trainable(false);
  teacher.head.set_trainable(false);
  teacher.set_lora_trainable(false);
  AdapterBindings teacher_bindings = teacher.own_bindings();
  const AdapterBindings* t_bind =
      teacher_bindings.empty() ? nullptr : &teacher_bindings;

  AdaptMode student_mode = opts.effective_student_mode();
  AdapterBindings student_bindings;
  std::vector<Tensor> params;
  if (student_mode == AdaptMode::Lora) {
    student.attach_lora(opts.rank, derive_seed(sched.seed, "lora.student"));
    student.encoder.set_trainable(false);
    student.set_lora_trainable(true);
    student_bindings = student.own_bindings();
    params = student.lora->parameters();
  } else {
    student.encoder.set_trainable(true);
    params = student.encoder.parameters();
  }
  student.head.set_trainable(true);
  for (const Tensor& t : student.head.parameters()) params.push_back(t);
  AdamW opt(std::move(params), opts.student_optim);
  const AdapterBindings* s_bind =
      student_bindings.empty() ? nullptr : &student_bindings;

  Rng batch_rng(derive_seed(sched.seed, "batches"));
  std::size_t steps_per_epoch =
      (ds.train_idx.size() + sched.batch_size - 1) / sched.batch_size;
  std::size_t total_steps =
      std::max<std::size_t>(1, opts.distill_epochs * steps_per_epoch);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < opts.distill_epochs; ++epoch) {
    EpochBatches eb = shuffled_epoch(ds, sched.batch_size, batch_rng);
    RunningStat s_stat;
    for (std::size_t b = 0; b < eb.batches(); ++b) {
      auto idx = eb.batch(b);
      std::vector<bool> flips = draw_flips(ds, idx.size(), batch_rng);
      // same pixels through both encoders
      Tensor images = make_image_batch(ds, idx, &flips);
      std::vector<std::size_t> labels = gather_labels(ds, idx);
      Tensor teacher_logits;
      if (opts.kd.alpha_kl > 0.0) {
        teacher_logits = teacher.logits(images, t_bind);
        rm.teacher_passes.fwd += idx.size();
      }
      Tensor student_logits = student.logits(images, s_bind);
      rm.student_passes.fwd += idx.size();
      Tensor loss =
          opts.kd.alpha_kl > 0.0
              ? kd_loss(student_logits, teacher_logits, labels, opts.kd)
              : scale(cross_entropy(student_logits, labels), opts.kd.alpha_s);
      opt.zero_grad();
      backward(loss);
      rm.student_passes.bwd += idx.size();
      opt.step(static_cast<double>(step) / static_cast<double>(total_steps));
      ++step;
      s_stat.add(raw_ce_acc(student_logits, labels), idx.size());
    }
    std::size_t epoch_number = opts.teacher_epochs + epoch;
    if (sched.eval_each_epoch) {
      EvalResult val = evaluate_split(student, s_bind, ds, ds.val_idx,
                                      sched.batch_size);
      record_epoch(sched, rm, "student", epoch_number, s_stat.mean(), &val,
                   rm.student_passes);
    } else {
      record_epoch(sched, rm, "student", epoch_number, s_stat.mean(), nullptr,
                   rm.student_passes);
    }
    if (sched.on_epoch_end) sched.on_epoch_end(sched.epoch_offset + epoch_number);
  }
  finish_phase(sched, rm, "distill-student", start);
  return rm;
}

RunMetrics train_slad(TaskModel& teacher, TaskModel& student,
                      const Dataset& ds, const SladOptions& opts,
                      const TrainSchedule& sched) {
  if (teacher.head.n_out() != student.head.n_out()) {
    throw ConfigError("train_slad: class counts disagree");
  }
  auto start = Clock::now();
  RunMetrics rm;

  std::size_t d_t = teacher.encoder.config().dim;
  std::size_t d_s = student.encoder.config().dim;
  BlockMapping mapping = block_mapping(opts.mapping,
                                       student.encoder.config().depth,
                                       teacher.encoder.config().depth);

  teacher.attach_lora(opts.rank, derive_seed(sched.seed, "lora.teacher"));
  teacher.encoder.set_trainable(false);
  student.encoder.set_trainable(false);
  teacher.set_lora_trainable(true);
  teacher.head.set_trainable(true);
  student.head.set_trainable(true);

  AdapterBindings t_bind = teacher.lora->bindings();
  AdapterBindings s_bind = shared_bindings(*teacher.lora, mapping, d_s, d_t);

  // shared adapter storage is registered exactly once
  std::vector<Tensor> params = teacher.lora->parameters();
  for (const Tensor& t : teacher.head.parameters()) params.push_back(t);
  for (const Tensor& t : student.head.parameters()) params.push_back(t);
  AdamW opt(std::move(params), opts.optim);

  Rng batch_rng(derive_seed(sched.seed, sched.batch_label));
  std::size_t steps_per_epoch =
      (ds.train_idx.size() + sched.batch_size - 1) / sched.batch_size;
  std::size_t total_steps = std::max<std::size_t>(1, sched.epochs * steps_per_epoch);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < sched.epochs; ++epoch) {
    EpochBatches eb = shuffled_epoch(ds, sched.batch_size, batch_rng);
    RunningStat t_stat, s_stat;
    for (std::size_t b = 0; b < eb.batches(); ++b) {
      auto idx = eb.batch(b);
      std::vector<bool> flips = draw_flips(ds, idx.size(), batch_rng);
      Tensor images = make_image_batch(ds, idx, &flips);
      std::vector<std::size_t> labels = gather_labels(ds, idx);
      Tensor teacher_logits = teacher.logits(images, &t_bind);
      rm.teacher_passes.fwd += idx.size();
      Tensor student_logits = student.logits(images, &s_bind);
      rm.student_passes.fwd += idx.size();
      Tensor loss = slad_loss(student_logits, teacher_logits, labels,
                              opts.loss);
      opt.zero_grad();
      backward(loss);
      rm.teacher_passes.bwd += idx.size();
      rm.student_passes.bwd += idx.size();
      opt.step(static_cast<double>(step) / static_cast<double>(total_steps));
      ++step;
      t_stat.add(raw_ce_acc(teacher_logits, labels), idx.size());
      s_stat.add(raw_ce_acc(student_logits, labels), idx.size());
    }
    if (sched.eval_each_epoch) {
      EvalResult t_val = evaluate_split(teacher, &t_bind, ds, ds.val_idx,
                                        sched.batch_size);
      EvalResult s_val = evaluate_split(student, &s_bind, ds, ds.val_idx,
                                        sched.batch_size);
      record_epoch(sched, rm, "teacher", epoch, t_stat.mean(), &t_val,
                   rm.teacher_passes);
      record_epoch(sched, rm, "student", epoch, s_stat.mean(), &s_val,
                   rm.student_passes);
    } else {
      record_epoch(sched, rm, "teacher", epoch, t_stat.mean(), nullptr,
                   rm.teacher_passes);
      record_epoch(sched, rm, "student", epoch, s_stat.mean(), nullptr,
                   rm.student_passes);
    }
    if (sched.on_epoch_end) sched.on_epoch_end(sched.epoch_offset + epoch);
  }
  finish_phase(sched, rm, "slad", start);
  return rm;
}

AdapterBindings slad_student_bindings(const TaskModel& teacher,
                                      const TaskModel& student,
                                      MappingKind mapping) {
  if (!teacher.lora) {
    throw ConfigError("slad_student_bindings: teacher has no adapters");
  }
  BlockMapping g = block_mapping(mapping, student.encoder.config().depth,
                                 teacher.encoder.config().depth);
  return shared_bindings(*teacher.lora, g, student.encoder.config().dim,
                         teacher.encoder.config().dim);
}

}  // namespace slad
