#include "slad/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "slad/checkpoint.hpp"

namespace slad {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Probe:
      return "probe";
    case Strategy::Finetune:
      return "finetune";
    case Strategy::Lora:
      return "lora";
    case Strategy::DistillTwoStep:
      return "distill-two-step";
    case Strategy::Slad:
      return "slad";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "probe") return Strategy::Probe;
  if (name == "finetune") return Strategy::Finetune;
  if (name == "lora") return Strategy::Lora;
  if (name == "distill-two-step") return Strategy::DistillTwoStep;
  if (name == "slad") return Strategy::Slad;
  throw ConfigError(
      "strategy: unknown '" + name +
      "' (expected probe|finetune|lora|distill-two-step|slad)");
}

void ExperimentConfig::validate() const {
  if (!seed) throw ConfigError("seed: required but not set");
  teacher.validate();
  student.validate();
  if (teacher.image_size != student.image_size) {
    throw ConfigError("image_size: teacher and student must agree");
  }
  if (epochs == 0) throw ConfigError("epochs: must be positive");
  if (batch_size == 0) throw ConfigError("batch_size: must be positive");
  if (rank == 0) throw ConfigError("rank: must be positive");
  if (model_role != "student" && model_role != "teacher") {
    throw ConfigError("model_role: expected student|teacher, got '" +
                      model_role + "'");
  }
  if (student_mode != "auto" && student_mode != "full" &&
      student_mode != "lora") {
    throw ConfigError("student_mode: expected auto|full|lora, got '" +
                      student_mode + "'");
  }
  if (student_init != "sliced" && student_init != "random") {
    throw ConfigError("student_init: expected sliced|random, got '" +
                      student_init + "'");
  }
  teacher_mode_from_string(teacher_mode);  // throws on bad value
  if (strategy == Strategy::Slad && student.depth > teacher.depth) {
    throw ConfigError("slad: student depth exceeds teacher depth");
  }
  if (dataset_kind != "synthetic" && dataset_kind != "image-folder") {
    throw ConfigError("dataset.kind: expected synthetic|image-folder, got '" +
                      dataset_kind + "'");
  }
  if (dataset_kind == "image-folder" && dataset_path.empty()) {
    throw ConfigError("dataset.path: required for image-folder datasets");
  }
  distill_config().validate();
}

DistillConfig ExperimentConfig::distill_config() const {
  DistillConfig d =
      strategy == Strategy::Slad ? slad_defaults() : kd_defaults();
  if (temperature) d.temperature = *temperature;
  if (alpha_s) d.alpha_s = *alpha_s;
  if (alpha_t) d.alpha_t = *alpha_t;
  if (alpha_kl) d.alpha_kl = *alpha_kl;
  d.detach_teacher_in_kl = detach_teacher_in_kl;
  d.kl_teacher_ref = kl_teacher_ref;
  return d;
}

std::size_t ExperimentConfig::resolved_distill_epochs() const {
  if (distill_epochs > 0) return distill_epochs;
  // probed teachers distill longer, 80 epochs against the default 30
  if (teacher_mode == "probe") return epochs * 8 / 3;
  return epochs;
}

std::string ExperimentConfig::resolved_run_name() const {
  if (!run_name.empty()) return run_name;
  std::string name = to_string(strategy);
  if (strategy == Strategy::DistillTwoStep) name += "-" + teacher_mode;
  return name;
}

fs::path ExperimentConfig::resolved_out_dir() const {
  if (!out_dir.empty()) return out_dir;
  if (const char* env = std::getenv("SLADLAB_OUT")) return env;
  return "runs";
}

std::vector<std::pair<std::string, std::string>>
ExperimentConfig::to_key_values() const {
  DistillConfig d = distill_config();
  auto b = [](bool v) { return v ? "true" : "false"; };
  auto f = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  std::vector<std::pair<std::string, std::string>> kv = {
      {"code_version", kCodeVersion},
      {"strategy", to_string(strategy)},
      {"seed", std::to_string(seed.value_or(0))},
      {"run_name", resolved_run_name()},
      {"epochs", std::to_string(epochs)},
      {"distill_epochs", std::to_string(resolved_distill_epochs())},
      {"batch_size", std::to_string(batch_size)},
      {"rank", std::to_string(rank)},
      {"mapping", to_string(mapping)},
      {"temperature", f(d.temperature)},
      {"alpha_s", f(d.alpha_s)},
      {"alpha_t", f(d.alpha_t)},
      {"alpha_kl", f(d.alpha_kl)},
      {"detach_teacher_in_kl", b(d.detach_teacher_in_kl)},
      {"kl_teacher_ref", b(d.kl_teacher_ref)},
      {"lora_scale_alpha", f(lora_scale_alpha)},
      {"lr", f(lr)},
      {"lr_full", f(lr_full)},
      {"weight_decay", f(weight_decay)},
      {"model_role", model_role},
      {"teacher_mode", teacher_mode},
      {"student_mode", student_mode},
      {"student_init", student_init},
      {"init_checkpoint", init_checkpoint},
      {"export_merged", b(export_merged)},
      {"emit_cka", b(emit_cka)},
      {"cka_feature",
       cka_feature == CkaFeature::ClsToken ? "cls" : "meanpatch"},
      {"cka_probe_samples", std::to_string(cka_probe_samples)},
      {"checkpoint_interval", std::to_string(checkpoint_interval)},
      {"eval_each_epoch", b(eval_each_epoch)},
      {"teacher.depth", std::to_string(teacher.depth)},
      {"teacher.dim", std::to_string(teacher.dim)},
      {"teacher.heads", std::to_string(teacher.heads)},
      {"student.depth", std::to_string(student.depth)},
      {"student.dim", std::to_string(student.dim)},
      {"student.heads", std::to_string(student.heads)},
      {"patch_size", std::to_string(teacher.patch_size)},
      {"image_size", std::to_string(teacher.image_size)},
      {"mlp_ratio", std::to_string(teacher.mlp_ratio)},
      {"dataset.kind", dataset_kind},
      {"dataset.path", dataset_path},
      {"dataset.classes", std::to_string(synth.classes)},
      {"dataset.train_per_class", std::to_string(synth.train_per_class)},
      {"dataset.test_per_class", std::to_string(synth.test_per_class)},
      {"dataset.noise", f(synth.noise)},
      {"dataset.freq_base", f(synth.freq_base)},
      {"dataset.freq_step", f(synth.freq_step)},
      {"dataset.phase_jitter", f(synth.phase_jitter)},
      {"dataset.seed", std::to_string(synth.seed)},
  };
  return kv;
}

namespace {

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    std::uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v +
                      "'");
  }
}

double to_f64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true|false, got '" + v + "'");
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void apply_override(ExperimentConfig& cfg, const std::string& key,
                    const std::string& value) {
  if (key == "code_version") return;  // informational in snapshots
  if (key == "strategy") {
    cfg.strategy = strategy_from_string(value);
  } else if (key == "seed") {
    cfg.seed = to_u64(key, value);
  } else if (key == "run_name") {
    cfg.run_name = value;
  } else if (key == "out_dir") {
    cfg.out_dir = value;
  } else if (key == "epochs") {
    cfg.epochs = to_u64(key, value);
  } else if (key == "distill_epochs") {
    cfg.distill_epochs = to_u64(key, value);
  } else if (key == "batch_size") {
    cfg.batch_size = to_u64(key, value);
  } else if (key == "rank") {
    cfg.rank = to_u64(key, value);
  } else if (key == "mapping") {
    cfg.mapping = mapping_from_string(value);
  } else if (key == "temperature") {
    cfg.temperature = to_f64(key, value);
  } else if (key == "alpha_s") {
    cfg.alpha_s = to_f64(key, value);
  } else if (key == "alpha_t") {
    cfg.alpha_t = to_f64(key, value);
  } else if (key == "alpha_kl") {
    cfg.alpha_kl = to_f64(key, value);
  } else if (key == "detach_teacher_in_kl") {
    cfg.detach_teacher_in_kl = to_bool(key, value);
  } else if (key == "kl_teacher_ref") {
    cfg.kl_teacher_ref = to_bool(key, value);
  } else if (key == "lora_scale_alpha") {
    cfg.lora_scale_alpha = to_f64(key, value);
  } else if (key == "lr") {
    cfg.lr = to_f64(key, value);
  } else if (key == "lr_full") {
    cfg.lr_full = to_f64(key, value);
  } else if (key == "weight_decay") {
    cfg.weight_decay = to_f64(key, value);
  } else if (key == "model_role") {
    cfg.model_role = value;
  } else if (key == "teacher_mode") {
    cfg.teacher_mode = value;
  } else if (key == "student_mode") {
    cfg.student_mode = value;
  } else if (key == "student_init") {
    cfg.student_init = value;
  } else if (key == "init_checkpoint") {
    cfg.init_checkpoint = value;
  } else if (key == "export_merged") {
    cfg.export_merged = to_bool(key, value);
  } else if (key == "emit_cka") {
    cfg.emit_cka = to_bool(key, value);
  } else if (key == "cka_feature") {
    if (value == "cls") {
      cfg.cka_feature = CkaFeature::ClsToken;
    } else if (value == "meanpatch") {
      cfg.cka_feature = CkaFeature::MeanPatch;
    } else {
      throw ConfigError("cka_feature: expected cls|meanpatch, got '" + value +
                        "'");
    }
  } else if (key == "cka_probe_samples") {
    cfg.cka_probe_samples = to_u64(key, value);
  } else if (key == "checkpoint_interval") {
    cfg.checkpoint_interval = to_u64(key, value);
  } else if (key == "eval_each_epoch") {
    cfg.eval_each_epoch = to_bool(key, value);
  } else if (key == "teacher.depth") {
    cfg.teacher.depth = to_u64(key, value);
  } else if (key == "teacher.dim") {
    cfg.teacher.dim = to_u64(key, value);
  } else if (key == "teacher.heads") {
    cfg.teacher.heads = to_u64(key, value);
  } else if (key == "student.depth") {
    cfg.student.depth = to_u64(key, value);
  } else if (key == "student.dim") {
    cfg.student.dim = to_u64(key, value);
  } else if (key == "student.heads") {
    cfg.student.heads = to_u64(key, value);
  } else if (key == "patch_size") {
    cfg.teacher.patch_size = cfg.student.patch_size = to_u64(key, value);
  } else if (key == "image_size") {
    std::size_t s = to_u64(key, value);
    cfg.teacher.image_size = cfg.student.image_size = s;
    cfg.synth.image_size = s;
  } else if (key == "mlp_ratio") {
    cfg.teacher.mlp_ratio = cfg.student.mlp_ratio = to_u64(key, value);
  } else if (key == "dataset.kind") {
    cfg.dataset_kind = value;
  } else if (key == "dataset.path") {
    cfg.dataset_path = value;
  } else if (key == "dataset.classes") {
    cfg.synth.classes = to_u64(key, value);
  } else if (key == "dataset.train_per_class") {
    cfg.synth.train_per_class = to_u64(key, value);
  } else if (key == "dataset.test_per_class") {
    cfg.synth.test_per_class = to_u64(key, value);
  } else if (key == "dataset.noise") {
    cfg.synth.noise = to_f64(key, value);
  } else if (key == "dataset.freq_base") {
    cfg.synth.freq_base = to_f64(key, value);
  } else if (key == "dataset.freq_step") {
    cfg.synth.freq_step = to_f64(key, value);
  } else if (key == "dataset.phase_jitter") {
    cfg.synth.phase_jitter = to_f64(key, value);
  } else if (key == "dataset.seed") {
    cfg.synth.seed = to_u64(key, value);
    cfg.synth_seed_set = true;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

ExperimentConfig parse_config_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  ExperimentConfig cfg;
  cfg.synth.seed = 1234;  // dataset fixed across run seeds unless overridden
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    std::size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + s + "'");
    }
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    try {
      apply_override(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
  return cfg;
}

void write_config_snapshot(const ExperimentConfig& cfg, const fs::path& path) {
  auto kv = cfg.to_key_values();
  std::sort(kv.begin(), kv.end());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write config snapshot " + path.string());
  for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
}

namespace {

// Encoder copy with adapter deltas folded into the fused QKV weights;
// bindings may be the model's own adapters or shared views.
void save_merged_encoder(Checkpoint& ck, const std::string& prefix,
                         Encoder& enc, const AdapterBindings& bindings) {
  NoGradGuard no_grad;
  enc.visit_parameters([&](const std::string& name, Tensor& t) {
    std::string full = prefix + "." + name;
    if (!bindings.empty() && name.size() > 6 && name.rfind("block", 0) == 0 &&
        name.find(".qkv.w") != std::string::npos) {
      std::size_t block = std::stoul(name.substr(5));
      if (block < bindings.size() && bindings[block].has_value()) {
        Tensor merged = merge_weights(t, *bindings[block]);
        ck.put_raw(full, merged.shape(),
                   std::vector<double>(merged.data().begin(),
                                       merged.data().end()));
        return;
      }
    }
    ck.put(full, t);
  });
}

// Replaces seeded encoder weights with the pretrained pair stored by an
// earlier run. Heads and adapters stay task-local.
void load_pretrained_encoders(const ExperimentConfig& cfg, TaskModel* teacher,
                              TaskModel* student, TaskModel* single) {
  if (cfg.init_checkpoint.empty()) return;
  Checkpoint ck = Checkpoint::load(cfg.init_checkpoint);
  auto load_role = [&ck](const char* role, TaskModel& model) {
    const std::string prefix =
        ck.has(std::string(role) + ".patch.w") ? role : "model";
    load_encoder(ck, prefix, model.encoder);
  };
  if (teacher) load_role("teacher", *teacher);
  if (student) load_role("student", *student);
  if (single) {
    load_role(single->model_class == ModelClass::Teacher ? "teacher"
                                                         : "student",
              *single);
  }
}

}  // namespace

Dataset build_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset_kind == "synthetic") {
    SynthConfig sc = cfg.synth;
    sc.image_size = cfg.teacher.image_size;
    return synth_dataset(sc);
  }
  ImageFolderConfig fc;
  fc.path = cfg.dataset_path;
  fc.image_size = cfg.teacher.image_size;
  return load_image_folder(fc);
}

namespace {

Tensor probe_batch(const Dataset& ds, std::size_t max_samples,
                   std::string& probe_id) {
  const std::vector<std::size_t>& val = ds.val_idx;
  if (val.empty()) throw DataError("cka probe: dataset has no val split");
  std::size_t n = std::min(max_samples, val.size());
  std::span<const std::size_t> idx{val.data(), n};
  probe_id = ds.id + ":val" + std::to_string(n);
  return make_image_batch(ds, idx);  // no augmentation on probes
}

struct CkaArtifacts {
  CkaMatrix before, after;
  double mean_before = -1.0, mean_after = -1.0;
};

void write_cka_artifacts(const fs::path& dir, const CkaArtifacts& art,
                         const BlockMapping& mapping) {
  write_grid_csv(art.before.grid, dir / "cka_before.csv");
  write_grid_csv(art.after.grid, dir / "cka_after.csv");
  Grid delta = delta_cka(art.before, art.after);
  write_grid_csv(delta, dir / "cka_delta.csv");
  std::ofstream os(dir / "cka_summary.csv", std::ios::trunc);
  os << "mapping,mean_aligned_before,mean_aligned_after,mean_aligned_delta\n";
  os << to_string(mapping.kind) << ',' << std::fixed << std::setprecision(6)
     << art.mean_before << ',' << art.mean_after << ','
     << (art.mean_before - art.mean_after) << '\n';
}

json summary_to_json(const RunSummary& s) {
  return json{{"run", s.run_id},
              {"method", s.method},
              {"student", s.student_desc},
              {"teacher", s.teacher_desc},
              {"dataset", s.dataset},
              {"seed", s.seed},
              {"student_test_acc", s.student_test_acc},
              {"teacher_test_acc", s.teacher_test_acc},
              {"student_val_acc", s.student_val_acc},
              {"teacher_val_acc", s.teacher_val_acc},
              {"fwd_passes", s.fwd_passes},
              {"bwd_passes", s.bwd_passes},
              {"wall_seconds", s.wall_seconds},
              {"cka_before", s.cka_before},
              {"cka_after", s.cka_after},
              {"cka_delta", s.cka_delta}};
}

RunSummary summary_from_json(const json& j) {
  RunSummary s;
  s.run_id = j.at("run").get<std::string>();
  s.method = j.at("method").get<std::string>();
  s.student_desc = j.at("student").get<std::string>();
  s.teacher_desc = j.at("teacher").get<std::string>();
  s.dataset = j.at("dataset").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.student_test_acc = j.at("student_test_acc").get<double>();
  s.teacher_test_acc = j.at("teacher_test_acc").get<double>();
  s.student_val_acc = j.at("student_val_acc").get<double>();
  s.teacher_val_acc = j.at("teacher_val_acc").get<double>();
  s.fwd_passes = j.at("fwd_passes").get<std::uint64_t>();
  s.bwd_passes = j.at("bwd_passes").get<std::uint64_t>();
  s.wall_seconds = j.at("wall_seconds").get<double>();
  s.cka_before = j.at("cka_before").get<double>();
  s.cka_after = j.at("cka_after").get<double>();
  s.cka_delta = j.at("cka_delta").get<double>();
  return s;
}

void record_test_eval(const ExperimentConfig& cfg, const std::string& run_id,
                      MetricsSink& sink, RunMetrics& rm, TaskModel& model,
                      const AdapterBindings* bindings, const std::string& role,
                      const Dataset& ds, std::size_t epoch, double& acc_out,
                      double& val_out) {
  EvalResult test = evaluate_split(model, bindings, ds, ds.eval_split(),
                                   cfg.batch_size);
  EvalResult val =
      evaluate_split(model, bindings, ds, ds.val_idx, cfg.batch_size);
  MetricsRecord rec;
  rec.run_id = run_id;
  rec.epoch = epoch;
  rec.split = "test";
  rec.role = role;
  rec.loss = test.loss;
  rec.accuracy = test.acc;
  const PassCounters& pc =
      role == "teacher" ? rm.teacher_passes : rm.student_passes;
  rec.fwd_passes = pc.fwd;
  rec.bwd_passes = pc.bwd;
  rm.records.push_back(rec);
  sink.record(rec);
  acc_out = test.acc;
  val_out = val.acc;
}

}  // namespace

RunResult run(const ExperimentConfig& cfg) {
  cfg.validate();
  auto wall_start = std::chrono::steady_clock::now();
  std::uint64_t seed = *cfg.seed;
  std::string run_id = cfg.resolved_run_name() + "-s" + std::to_string(seed);

  RunResult result;
  result.run_dir = cfg.resolved_out_dir() / run_id;
  fs::create_directories(result.run_dir);
  // truncate run files so reruns are byte-comparable
  for (const char* f : {"metrics.jsonl", "timing.jsonl"}) {
    std::ofstream trunc(result.run_dir / f, std::ios::trunc);
  }
  write_config_snapshot(cfg, result.run_dir / "config.snapshot");

  Dataset ds = build_dataset(cfg);
  MetricsSink sink(result.run_dir / "metrics.jsonl",
                   result.run_dir / "timing.jsonl");

  RunSummary& summary = result.summary;
  summary.run_id = run_id;
  summary.method = cfg.resolved_run_name();
  summary.dataset = ds.id;
  summary.seed = seed;

  DistillConfig distill = cfg.distill_config();
  bool two_model = cfg.strategy == Strategy::DistillTwoStep ||
                   cfg.strategy == Strategy::Slad;

  // single-model strategies train the configured role
  EncoderConfig role_cfg =
      cfg.model_role == "teacher" ? cfg.teacher : cfg.student;
  ModelClass role_class = cfg.model_role == "teacher" ? ModelClass::Teacher
                                                      : ModelClass::Student;

  std::optional<TaskModel> teacher, student, single;
  if (two_model) {
    teacher.emplace(cfg.teacher, ds.num_classes, ModelClass::Teacher,
                    derive_seed(seed, "teacher"));
    student.emplace(cfg.student, ds.num_classes, ModelClass::Student,
                    derive_seed(seed, "student"));
    if (cfg.student_init == "sliced") {
      student->encoder = Encoder::sliced_from(
          teacher->encoder, cfg.student,
          block_mapping(cfg.mapping, cfg.student.depth, cfg.teacher.depth));
    }
    summary.teacher_desc = cfg.teacher.describe();
    summary.student_desc = cfg.student.describe();
  } else {
    single.emplace(role_cfg, ds.num_classes, role_class,
                   derive_seed(seed, cfg.model_role));
    (cfg.model_role == "teacher" ? summary.teacher_desc
                                 : summary.student_desc) =
        role_cfg.describe();
  }
  load_pretrained_encoders(cfg, teacher ? &*teacher : nullptr,
                           student ? &*student : nullptr,
                           single ? &*single : nullptr);

  // pre-adaptation CKA snapshot
  CkaArtifacts cka_art;
  std::string probe_id;
  Tensor probe_images;
  BlockMapping cka_mapping =
      two_model ? block_mapping(cfg.mapping, cfg.student.depth,
                                cfg.teacher.depth)
                : block_mapping(MappingKind::First, role_cfg.depth,
                                role_cfg.depth);
  if (cfg.emit_cka) {
    probe_images = probe_batch(ds, cfg.cka_probe_samples, probe_id);
    if (two_model) {
      auto t_feat = collect_block_features(teacher->encoder, nullptr,
                                           probe_images, cfg.cka_feature,
                                           "teacher", probe_id);
      auto s_feat = collect_block_features(student->encoder, nullptr,
                                           probe_images, cfg.cka_feature,
                                           "student", probe_id);
      cka_art.before = cka_matrix(t_feat, s_feat);
    } else {
      auto feat = collect_block_features(single->encoder, nullptr,
                                         probe_images, cfg.cka_feature,
                                         cfg.model_role, probe_id);
      cka_art.before = cka_matrix(feat, feat);
    }
    cka_art.mean_before = mean_aligned_cka(cka_art.before, cka_mapping);
  }

  TrainSchedule sched;
  sched.epochs = cfg.epochs;
  sched.batch_size = cfg.batch_size;
  sched.seed = seed;
  sched.run_id = run_id;
  sched.sink = &sink;
  sched.eval_each_epoch = cfg.eval_each_epoch;
  sched.optim.lr = cfg.lr;
  sched.optim.weight_decay = cfg.weight_decay;

  // interval checkpoints capture whichever models exist
  auto save_models = [&](const fs::path& path) {
    Checkpoint ck;
    if (two_model) {
      save_encoder(ck, "teacher", teacher->encoder);
      save_head(ck, "teacher.head", teacher->head);
      if (teacher->lora) save_lora(ck, "teacher.lora", *teacher->lora);
      save_encoder(ck, "student", student->encoder);
      save_head(ck, "student.head", student->head);
      if (student->lora) save_lora(ck, "student.lora", *student->lora);
    } else {
      save_encoder(ck, "model", single->encoder);
      save_head(ck, "model.head", single->head);
      if (single->lora) save_lora(ck, "model.lora", *single->lora);
    }
    ck.save(path);
  };
  if (cfg.checkpoint_interval > 0) {
    sched.on_epoch_end = [&, interval = cfg.checkpoint_interval](
                             std::size_t epoch) {
      if ((epoch + 1) % interval == 0) {
        save_models(result.run_dir /
                    ("epoch_" + std::to_string(epoch + 1) + ".ckpt"));
      }
    };
  }

  int exit_code = 0;
  try {
    switch (cfg.strategy) {
      case Strategy::Probe:
        result.metrics =
            train_probing(*single, cfg.model_role, ds, sched);
        break;
      case Strategy::Finetune: {
        sched.optim.lr = cfg.lr_full;
        result.metrics =
            train_adapt(*single, AdaptMode::Full, cfg.model_role, ds, sched);
        break;
      }
      case Strategy::Lora: {
        single->attach_lora(cfg.rank,
                            derive_seed(seed, "lora." + cfg.model_role));
        if (cfg.lora_scale_alpha > 0.0) {
          single->lora->delta_scale =
              cfg.lora_scale_alpha / static_cast<double>(cfg.rank);
        }
        result.metrics =
            train_adapt(*single, AdaptMode::Lora, cfg.model_role, ds, sched);
        break;
      }
      case Strategy::DistillTwoStep: {
        TwoStepOptions opts;
        opts.teacher_mode = teacher_mode_from_string(cfg.teacher_mode);
        if (cfg.student_mode == "full") opts.student_mode = AdaptMode::Full;
        if (cfg.student_mode == "lora") opts.student_mode = AdaptMode::Lora;
        opts.teacher_epochs = cfg.epochs;
        opts.distill_epochs = cfg.resolved_distill_epochs();
        opts.rank = cfg.rank;
        opts.kd = distill;
        opts.teacher_optim = sched.optim;
        if (opts.teacher_mode == TeacherMode::Full) {
          opts.teacher_optim.lr = cfg.lr_full;
        }
        opts.student_optim = sched.optim;
        if (opts.effective_student_mode() == AdaptMode::Full) {
          opts.student_optim.lr = cfg.lr_full;
        }
        result.metrics = distill_two_step(*teacher, *student, ds, opts, sched);
        break;
      }
      case Strategy::Slad: {
        SladOptions opts;
        opts.mapping = cfg.mapping;
        opts.rank = cfg.rank;
        opts.loss = distill;
        opts.optim = sched.optim;
        result.metrics = train_slad(*teacher, *student, ds, opts, sched);
        break;
      }
    }
  } catch (const ValueError& e) {
    // non-finite loss or gradient: stop, keep the last written checkpoint
    std::cerr << "run aborted: " << e.what() << "\n";
    result.exit_code = 3;
    return result;
  }

  // final evaluation on the test split
  std::size_t last_epoch = cfg.strategy == Strategy::DistillTwoStep
                               ? cfg.epochs + cfg.resolved_distill_epochs() - 1
                               : cfg.epochs - 1;
  if (two_model) {
    AdapterBindings t_bind = teacher->own_bindings();
    AdapterBindings s_bind;
    if (cfg.strategy == Strategy::Slad) {
      s_bind = slad_student_bindings(*teacher, *student, cfg.mapping);
    } else {
      s_bind = student->own_bindings();
    }
    record_test_eval(cfg, run_id, sink, result.metrics, *teacher,
                     t_bind.empty() ? nullptr : &t_bind, "teacher", ds,
                     last_epoch, summary.teacher_test_acc,
                     summary.teacher_val_acc);
    record_test_eval(cfg, run_id, sink, result.metrics, *student,
                     s_bind.empty() ? nullptr : &s_bind, "student", ds,
                     last_epoch, summary.student_test_acc,
                     summary.student_val_acc);
  } else {
    AdapterBindings bind = single->own_bindings();
    double& acc = cfg.model_role == "teacher" ? summary.teacher_test_acc
                                              : summary.student_test_acc;
    double& val = cfg.model_role == "teacher" ? summary.teacher_val_acc
                                              : summary.student_val_acc;
    record_test_eval(cfg, run_id, sink, result.metrics, *single,
                     bind.empty() ? nullptr : &bind, cfg.model_role, ds,
                     last_epoch, acc, val);
  }

  // post-adaptation CKA
  if (cfg.emit_cka) {
    if (two_model) {
      AdapterBindings t_bind = teacher->own_bindings();
      AdapterBindings s_bind;
      if (cfg.strategy == Strategy::Slad) {
        s_bind = slad_student_bindings(*teacher, *student, cfg.mapping);
      } else {
        s_bind = student->own_bindings();
      }
      auto t_feat = collect_block_features(
          teacher->encoder, t_bind.empty() ? nullptr : &t_bind, probe_images,
          cfg.cka_feature, "teacher", probe_id);
      auto s_feat = collect_block_features(
          student->encoder, s_bind.empty() ? nullptr : &s_bind, probe_images,
          cfg.cka_feature, "student", probe_id);
      cka_art.after = cka_matrix(t_feat, s_feat);
    } else {
      // reference is the pristine model, rebuilt from the same seed
      TaskModel reference(role_cfg, ds.num_classes, role_class,
                          derive_seed(seed, cfg.model_role));
      AdapterBindings bind = single->own_bindings();
      auto ref_feat = collect_block_features(reference.encoder, nullptr,
                                             probe_images, cfg.cka_feature,
                                             cfg.model_role + "-init",
                                             probe_id);
      auto cur_feat = collect_block_features(
          single->encoder, bind.empty() ? nullptr : &bind, probe_images,
          cfg.cka_feature, cfg.model_role, probe_id);
      cka_art.after = cka_matrix(ref_feat, cur_feat);
    }
    cka_art.mean_after = mean_aligned_cka(cka_art.after, cka_mapping);
    write_cka_artifacts(result.run_dir, cka_art, cka_mapping);
    summary.cka_before = cka_art.mean_before;
    summary.cka_after = cka_art.mean_after;
    summary.cka_delta = cka_art.mean_before - cka_art.mean_after;
  }

  save_models(result.run_dir / "final.ckpt");
  if (cfg.export_merged) {
    Checkpoint merged;
    if (two_model) {
      AdapterBindings t_bind = teacher->own_bindings();
      AdapterBindings s_bind;
      if (cfg.strategy == Strategy::Slad) {
        s_bind = slad_student_bindings(*teacher, *student, cfg.mapping);
      } else {
        s_bind = student->own_bindings();
      }
      save_merged_encoder(merged, "teacher", teacher->encoder, t_bind);
      save_merged_encoder(merged, "student", student->encoder, s_bind);
      save_head(merged, "teacher.head", teacher->head);
      save_head(merged, "student.head", student->head);
    } else {
      save_merged_encoder(merged, "model", single->encoder,
                          single->own_bindings());
      save_head(merged, "model.head", single->head);
    }
    merged.save(result.run_dir / "merged.ckpt");
  }

  summary.fwd_passes = result.metrics.teacher_passes.fwd +
                       result.metrics.student_passes.fwd;
  summary.bwd_passes = result.metrics.teacher_passes.bwd +
                       result.metrics.student_passes.bwd;
  summary.wall_seconds = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - wall_start)
                             .count();
  sink.timing(run_id, "total", summary.wall_seconds);
  {
    std::ofstream os(result.run_dir / "summary.json", std::ios::trunc);
    os << summary_to_json(summary).dump(2) << '\n';
  }
  result.exit_code = exit_code;
  return result;
}

MultiRunResult run_seeds(const ExperimentConfig& cfg,
                         std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("run_seeds: no seeds given");
  MultiRunResult out;
  for (std::uint64_t s : seeds) {
    ExperimentConfig c = cfg;
    c.seed = s;
    out.runs.push_back(run(c));
    if (out.runs.back().exit_code != 0) {
      throw Error("run_seeds: seed " + std::to_string(s) + " failed");
    }
  }
  RunSummary& m = out.mean;
  m = out.runs.front().summary;
  m.run_id = cfg.resolved_run_name() + "-seedmean";
  double n = static_cast<double>(out.runs.size());
  auto avg = [&](auto get) {
    double s = 0.0;
    for (const RunResult& r : out.runs) s += get(r.summary);
    return s / n;
  };
  m.student_test_acc = avg([](const RunSummary& s) { return s.student_test_acc; });
  m.teacher_test_acc = avg([](const RunSummary& s) { return s.teacher_test_acc; });
  m.student_val_acc = avg([](const RunSummary& s) { return s.student_val_acc; });
  m.teacher_val_acc = avg([](const RunSummary& s) { return s.teacher_val_acc; });
  m.wall_seconds = avg([](const RunSummary& s) { return s.wall_seconds; });
  m.cka_before = avg([](const RunSummary& s) { return s.cka_before; });
  m.cka_after = avg([](const RunSummary& s) { return s.cka_after; });
  m.cka_delta = avg([](const RunSummary& s) { return s.cka_delta; });
  // pass counts are identical across seeds by construction
  m.fwd_passes = out.runs.front().summary.fwd_passes;
  m.bwd_passes = out.runs.front().summary.bwd_passes;

  fs::path mean_path = cfg.resolved_out_dir() /
                       (cfg.resolved_run_name() + "-seedmean.json");
  std::ofstream os(mean_path, std::ios::trunc);
  os << summary_to_json(m).dump(2) << '\n';
  return out;
}

RunSummary load_summary(const fs::path& run_dir) {
  std::ifstream is(run_dir / "summary.json");
  if (!is) throw IoError("no summary.json under " + run_dir.string());
  json j = json::parse(is);
  return summary_from_json(j);
}

int report(std::span<const fs::path> run_dirs, std::ostream& os) {
  struct Row {
    std::string method, run;
    std::string line;
  };
  std::vector<Row> rows;
  for (const fs::path& dir : run_dirs) {
    std::ostringstream line;
    try {
      RunSummary s = load_summary(dir);
      line << s.run_id << ',' << s.method << ',' << s.student_desc << ','
           << s.teacher_desc << ',' << s.dataset << ',' << s.seed << ','
           << std::fixed << std::setprecision(4) << s.student_test_acc << ','
           << s.teacher_test_acc << ',' << s.fwd_passes << ',' << s.bwd_passes
           << ',' << std::setprecision(2) << s.wall_seconds << ','
           << std::setprecision(6) << s.cka_before << ',' << s.cka_after
           << ',' << s.cka_delta;
      rows.push_back({s.method, s.run_id, line.str()});
    } catch (const Error&) {
      line << dir.filename().string() << ",absent,,,,,,,,,,,,";
      rows.push_back({"~absent", dir.filename().string(), line.str()});
    }
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.method, a.run) < std::tie(b.method, b.run);
  });
  os << "run,method,student,teacher,dataset,seed,student_test_acc,"
        "teacher_test_acc,fwd_passes,bwd_passes,wall_clock_s,cka_before,"
        "cka_after,cka_delta\n";
  for (const Row& r : rows) os << r.line << '\n';
  return 0;
}

void emit_cka_for_run(const fs::path& run_dir,
                      std::optional<CkaFeature> feature_override) {
  ExperimentConfig cfg = parse_config_file(run_dir / "config.snapshot");
  if (feature_override) cfg.cka_feature = *feature_override;
  bool two_model = cfg.strategy == Strategy::DistillTwoStep ||
                   cfg.strategy == Strategy::Slad;
  if (!two_model) {
    throw ConfigError(
        "cka: run '" + run_dir.string() +
        "' is a single-model run; CKA artifacts need teacher and student");
  }
  std::uint64_t seed = *cfg.seed;
  Dataset ds = build_dataset(cfg);
  Checkpoint ck = Checkpoint::load(run_dir / "final.ckpt");

  TaskModel teacher(cfg.teacher, ds.num_classes, ModelClass::Teacher,
                    derive_seed(seed, "teacher"));
  TaskModel student(cfg.student, ds.num_classes, ModelClass::Student,
                    derive_seed(seed, "student"));
  if (cfg.student_init == "sliced") {
    student.encoder = Encoder::sliced_from(
        teacher.encoder, cfg.student,
        block_mapping(cfg.mapping, cfg.student.depth, cfg.teacher.depth));
  }
  load_pretrained_encoders(cfg, &teacher, &student, nullptr);

  std::string probe_id;
  Tensor probe_images = probe_batch(ds, cfg.cka_probe_samples, probe_id);
  BlockMapping mapping =
      block_mapping(cfg.mapping, cfg.student.depth, cfg.teacher.depth);

  CkaArtifacts art;
  {
    auto t_feat = collect_block_features(teacher.encoder, nullptr,
                                         probe_images, cfg.cka_feature,
                                         "teacher", probe_id);
    auto s_feat = collect_block_features(student.encoder, nullptr,
                                         probe_images, cfg.cka_feature,
                                         "student", probe_id);
    art.before = cka_matrix(t_feat, s_feat);
    art.mean_before = mean_aligned_cka(art.before, mapping);
  }
  load_encoder(ck, "teacher", teacher.encoder);
  load_head(ck, "teacher.head", teacher.head);
  load_encoder(ck, "student", student.encoder);
  load_head(ck, "student.head", student.head);
  AdapterBindings t_bind, s_bind;
  if (ck.has("teacher.lora.qkv.block0.a")) {
    teacher.attach_lora(cfg.rank, 0);
    load_lora(ck, "teacher.lora", *teacher.lora);
    t_bind = teacher.lora->bindings();
    if (cfg.strategy == Strategy::Slad) {
      s_bind = slad_student_bindings(teacher, student, cfg.mapping);
    }
  }
  if (ck.has("student.lora.qkv.block0.a")) {
    student.attach_lora(cfg.rank, 0);
    load_lora(ck, "student.lora", *student.lora);
    s_bind = student.lora->bindings();
  }
  auto t_feat = collect_block_features(teacher.encoder,
                                       t_bind.empty() ? nullptr : &t_bind,
                                       probe_images, cfg.cka_feature,
                                       "teacher", probe_id);
  auto s_feat = collect_block_features(student.encoder,
                                       s_bind.empty() ? nullptr : &s_bind,
                                       probe_images, cfg.cka_feature,
                                       "student", probe_id);
  art.after = cka_matrix(t_feat, s_feat);
  art.mean_after = mean_aligned_cka(art.after, mapping);
  write_cka_artifacts(run_dir, art, mapping);
}

}  // namespace slad
