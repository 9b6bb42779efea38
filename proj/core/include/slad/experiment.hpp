#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "slad/cka.hpp"
#include "slad/training.hpp"

namespace slad {

inline constexpr const char* kCodeVersion = "sladlab 0.1.0";

enum class Strategy { Probe, Finetune, Lora, DistillTwoStep, Slad };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);

/// Everything one run needs. Paper-default hyperparameters are pre-filled;
/// unset distillation weights resolve per strategy (KD 0.5/0.5 at T=2, SLAD
/// 1/1/1). The seed is mandatory.
struct ExperimentConfig {
  Strategy strategy = Strategy::Slad;
  std::optional<std::uint64_t> seed;
  std::string run_name;  // default: strategy[-teacher_mode]
  std::string out_dir;   // default: $SLADLAB_OUT or "runs"

  EncoderConfig teacher = teacher_config_default();
  EncoderConfig student = student_config_default();

  std::size_t epochs = 30;
  std::size_t distill_epochs = 0;  // 0: 80 for a probed teacher, else epochs
  std::size_t batch_size = 64;
  std::size_t rank = 16;
  MappingKind mapping = MappingKind::Even;

  std::optional<double> temperature;  // default 2
  std::optional<double> alpha_s, alpha_t, alpha_kl;
  bool detach_teacher_in_kl = true;
  bool kl_teacher_ref = true;
  double lora_scale_alpha = 0.0;  // conventional alpha/r scaling; 0 = off

  double lr = 1e-3;        // heads and adapters
  double lr_full = 1e-4;   // full fine-tuning
  double weight_decay = 0.05;

  std::string model_role = "student";  // probe | finetune | lora
  std::string teacher_mode = "lora";   // two-step: probe | lora | full
  std::string student_mode = "auto";   // two-step: auto | full | lora
  /// Two-model runs: "sliced" derives the student's initial weights from the
  /// teacher's (the pretrained-pair emulation); "random" keeps independent
  /// seeds.
  std::string student_init = "sliced";
  /// Optional checkpoint whose encoder weights replace the seeded init; this
  /// is how a separately produced "pretrained" pair enters a run.
  std::string init_checkpoint;
  /// Also write merged.ckpt with adapter deltas folded into the base QKV
  /// weights (the student merges its shared views), for use as a later
  /// run's init_checkpoint.
  bool export_merged = false;

  bool emit_cka = false;
  CkaFeature cka_feature = CkaFeature::ClsToken;
  std::size_t cka_probe_samples = 256;

  std::size_t checkpoint_interval = 0;  // epochs; 0 = final only
  bool eval_each_epoch = true;

  std::string dataset_kind = "synthetic";  // synthetic | image-folder
  std::string dataset_path;
  SynthConfig synth;
  bool synth_seed_set = false;

  void validate() const;
  DistillConfig distill_config() const;
  std::size_t resolved_distill_epochs() const;
  std::string resolved_run_name() const;
  std::filesystem::path resolved_out_dir() const;

  std::vector<std::pair<std::string, std::string>> to_key_values() const;
};

ExperimentConfig parse_config_file(const std::filesystem::path& path);
/// Applies one `key = value` override; unknown keys raise ConfigError naming
/// the key.
void apply_override(ExperimentConfig& cfg, const std::string& key,
                    const std::string& value);
void write_config_snapshot(const ExperimentConfig& cfg,
                           const std::filesystem::path& path);

Dataset build_dataset(const ExperimentConfig& cfg);

/// Per-run artifact summary; persisted as summary.json in the run directory.
struct RunSummary {
  std::string run_id;
  std::string method;
  std::string student_desc, teacher_desc;
  std::string dataset;
  std::uint64_t seed = 0;
  double student_test_acc = -1.0, teacher_test_acc = -1.0;
  double student_val_acc = -1.0, teacher_val_acc = -1.0;
  std::uint64_t fwd_passes = 0, bwd_passes = 0;
  double wall_seconds = 0.0;
  double cka_before = -1.0, cka_after = -1.0, cka_delta = 0.0;
};

struct RunResult {
  int exit_code = 0;
  std::filesystem::path run_dir;
  RunMetrics metrics;
  RunSummary summary;
};

/// Executes one strategy end to end: config snapshot, dataset, training,
/// metrics/timing files, checkpoints, optional CKA CSVs, summary.json.
/// A non-finite loss aborts with the last written checkpoint retained.
RunResult run(const ExperimentConfig& cfg);

struct MultiRunResult {
  std::vector<RunResult> runs;
  RunSummary mean;  // accuracies, passes and wall-clock averaged over seeds
};

/// The three-seed protocol: one run per seed plus a seed-mean summary row
/// written alongside the run directories.
MultiRunResult run_seeds(const ExperimentConfig& cfg,
                         std::span<const std::uint64_t> seeds);

/// Comparison table over finished run directories, sorted by method then run
/// id. Missing directories become `absent` rows; the exit code stays 0.
int report(std::span<const std::filesystem::path> run_dirs, std::ostream& os);

RunSummary load_summary(const std::filesystem::path& run_dir);

/// Recomputes CKA artifacts (before/after/delta CSVs and the aligned-mean
/// summary) for a finished two-model run directory.
void emit_cka_for_run(const std::filesystem::path& run_dir,
                      std::optional<CkaFeature> feature_override = {});

}  // namespace slad
