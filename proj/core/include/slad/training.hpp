#pragma once

#include <map>
#include <optional>

#include "slad/data.hpp"
#include "slad/encoder.hpp"
#include "slad/heads.hpp"
#include "slad/losses.hpp"
#include "slad/metrics.hpp"
#include "slad/optim.hpp"

namespace slad {

/// Encoder, prediction head over the last-3-block CLS concat, and optional
/// LoRA adapters. Adapter storage is pointer-stable once attached; shared
/// views into it stay valid for the model's lifetime.
struct TaskModel {
  TaskModel(EncoderConfig cfg, std::size_t num_classes, ModelClass mc,
            std::uint64_t seed);

  Encoder encoder;
  MlpHead head;
  std::optional<LoraSet> lora;
  std::size_t cls_blocks;
  ModelClass model_class;

  Tensor logits(const Tensor& images,
                const AdapterBindings* bindings = nullptr) const;
  void attach_lora(std::size_t rank, std::uint64_t seed);
  void set_lora_trainable(bool trainable);
  AdapterBindings own_bindings() const;  // empty when no adapters
};

struct PassCounters {
  std::uint64_t fwd = 0, bwd = 0;
  std::uint64_t total() const { return fwd + bwd; }
};

struct RunMetrics {
  std::vector<MetricsRecord> records;
  PassCounters teacher_passes, student_passes;
  std::map<std::string, double> phase_seconds;

  double total_seconds() const;
  void merge(const RunMetrics& other);
};

struct TrainSchedule {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  AdamWConfig optim;
  std::uint64_t seed = 0;
  std::string run_id = "run";
  /// Stream label for batch order and augmentation draws; the student-facing
  /// stage of every strategy uses "batches" so equal seeds reproduce equal
  /// streams across strategies.
  std::string batch_label = "batches";
  MetricsSink* sink = nullptr;
  std::function<void(std::size_t epoch)> on_epoch_end;
  std::size_t epoch_offset = 0;
  bool eval_each_epoch = true;
};

struct EvalResult {
  double loss = 0.0;
  double acc = 0.0;
};

EvalResult evaluate_split(const TaskModel& model,
                          const AdapterBindings* bindings, const Dataset& ds,
                          std::span<const std::size_t> split,
                          std::size_t batch_size);

enum class AdaptMode { Full, Lora };
enum class TeacherMode { Probe, Lora, Full };

const char* to_string(AdaptMode mode);
const char* to_string(TeacherMode mode);
TeacherMode teacher_mode_from_string(const std::string& name);

/// Trains only the head on frozen encoder features; encoder weights are
/// bitwise untouched.
RunMetrics train_probing(TaskModel& model, const std::string& role,
                         const Dataset& ds, const TrainSchedule& sched);

/// Full fine-tuning or LoRA adaptation (adapters + head, base frozen).
/// Lora mode requires adapters to be attached already.
RunMetrics train_adapt(TaskModel& model, AdaptMode mode,
                       const std::string& role, const Dataset& ds,
                       const TrainSchedule& sched);

struct TwoStepOptions {
  TeacherMode teacher_mode = TeacherMode::Lora;
  /// Student adaptation during distillation; defaults to Lora for a LoRA
  /// teacher and Full otherwise.
  std::optional<AdaptMode> student_mode;
  std::size_t teacher_epochs = 10;
  std::size_t distill_epochs = 10;
  std::size_t rank = 16;
  DistillConfig kd = kd_defaults();
  AdamWConfig teacher_optim;
  AdamWConfig student_optim;

  AdaptMode effective_student_mode() const {
    if (student_mode) return *student_mode;
    return teacher_mode == TeacherMode::Lora ? AdaptMode::Lora
                                             : AdaptMode::Full;
  }
};

/// Adapts the teacher, freezes it, then trains the student against it with
/// the KD loss. Teacher and student see identical batches and augmentations.
RunMetrics distill_two_step(TaskModel& teacher, TaskModel& student,
                            const Dataset& ds, const TwoStepOptions& opts,
                            const TrainSchedule& sched);

struct SladOptions {
  MappingKind mapping = MappingKind::Even;
  std::size_t rank = 16;
  DistillConfig loss = slad_defaults();
  AdamWConfig optim;
};

/// Joint single-stage training: adapters live on the teacher, the student
/// runs through width-sliced views of them, both heads train, and the shared
/// storage accumulates gradients from both paths in one step.
RunMetrics train_slad(TaskModel& teacher, TaskModel& student,
                      const Dataset& ds, const SladOptions& opts,
                      const TrainSchedule& sched);

/// Student bindings for a SLAD pair, rebuilt on demand from the teacher's
/// adapters (used for evaluation and feature collection after training).
AdapterBindings slad_student_bindings(const TaskModel& teacher,
                                      const TaskModel& student,
                                      MappingKind mapping);

}  // namespace slad
