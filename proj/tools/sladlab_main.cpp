// Experiment driver for the task-specific distillation lab: runs training
// strategies, compares finished runs, recomputes CKA artifacts and
// synthesizes datasets.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "slad/experiment.hpp"

namespace fs = std::filesystem;

namespace {

struct RunArgs {
  std::string config;
  std::string strategy, mapping, out, run_name, teacher_mode, student_mode;
  std::string seeds;
  std::int64_t seed = -1;
  std::int64_t epochs = -1, distill_epochs = -1, rank = -1, batch = -1;
  double temperature = -1.0;
  bool emit_cka = false;
};

slad::ExperimentConfig build_config(const RunArgs& a) {
  slad::ExperimentConfig cfg;
  if (!a.config.empty()) {
    cfg = slad::parse_config_file(a.config);
  } else {
    cfg.synth.seed = 1234;
  }
  auto setq = [&cfg](const std::string& k, const std::string& v) {
    slad::apply_override(cfg, k, v);
  };
  if (!a.strategy.empty()) setq("strategy", a.strategy);
  if (a.seed >= 0) setq("seed", std::to_string(a.seed));
  if (a.epochs >= 0) setq("epochs", std::to_string(a.epochs));
  if (a.distill_epochs >= 0)
    setq("distill_epochs", std::to_string(a.distill_epochs));
  if (a.rank >= 0) setq("rank", std::to_string(a.rank));
  if (a.batch >= 0) setq("batch_size", std::to_string(a.batch));
  if (a.temperature >= 0.0) setq("temperature", std::to_string(a.temperature));
  if (!a.mapping.empty()) setq("mapping", a.mapping);
  if (!a.out.empty()) setq("out_dir", a.out);
  if (!a.run_name.empty()) setq("run_name", a.run_name);
  if (!a.teacher_mode.empty()) setq("teacher_mode", a.teacher_mode);
  if (!a.student_mode.empty()) setq("student_mode", a.student_mode);
  if (a.emit_cka) setq("emit_cka", "true");
  return cfg;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    std::string tok = s.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!tok.empty()) seeds.push_back(std::stoull(tok));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (seeds.empty()) throw slad::ConfigError("--seeds: empty list");
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sladlab: teacher-student adaptation lab for small ViTs"};
  app.require_subcommand(1);

  RunArgs ra;
  CLI::App* run_cmd =
      app.add_subcommand("run", "execute one experiment (or a seed sweep)");
  run_cmd->add_option("--config", ra.config, "key = value config file");
  run_cmd->add_option("--strategy", ra.strategy,
                      "probe|finetune|lora|distill-two-step|slad");
  run_cmd->add_option("--seed", ra.seed, "run seed (required unless in config)");
  run_cmd->add_option("--seeds", ra.seeds,
                      "comma-separated seed sweep, e.g. 0,1,2; reports means");
  run_cmd->add_option("--epochs", ra.epochs, "training epochs");
  run_cmd->add_option("--distill-epochs", ra.distill_epochs,
                      "distillation epochs (two-step)");
  run_cmd->add_option("--rank", ra.rank, "LoRA rank");
  run_cmd->add_option("--batch-size", ra.batch, "batch size");
  run_cmd->add_option("--temperature", ra.temperature, "KD temperature");
  run_cmd->add_option("--mapping", ra.mapping, "first|last|even");
  run_cmd->add_option("--teacher-mode", ra.teacher_mode,
                      "two-step teacher adaptation: probe|lora|full");
  run_cmd->add_option("--student-mode", ra.student_mode,
                      "two-step student adaptation: auto|full|lora");
  run_cmd->add_option("--out", ra.out, "output root (default $SLADLAB_OUT)");
  run_cmd->add_option("--run-name", ra.run_name, "run directory base name");
  run_cmd->add_flag("--cka", ra.emit_cka, "emit CKA CSVs before/after");

  std::vector<std::string> report_dirs;
  std::string report_out;
  CLI::App* report_cmd =
      app.add_subcommand("report", "comparison table over finished runs");
  report_cmd->add_option("dirs", report_dirs, "run directories")->required();
  report_cmd->add_option("--out", report_out, "write CSV here (default stdout)");

  std::string cka_dir, cka_feature;
  CLI::App* cka_cmd = app.add_subcommand(
      "cka", "recompute CKA before/after/delta CSVs for a finished run");
  cka_cmd->add_option("dir", cka_dir, "run directory")->required();
  cka_cmd->add_option("--feature", cka_feature, "cls|meanpatch");

  std::string synth_out;
  std::int64_t synth_classes = 10, synth_per_class = 200, synth_test = 40,
               synth_size = 32, synth_seed = 1234;
  double synth_noise = -1.0;
  CLI::App* synth_cmd = app.add_subcommand(
      "synth", "generate the synthetic dataset as PPM folders");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--classes", synth_classes, "class count");
  synth_cmd->add_option("--per-class", synth_per_class,
                        "training samples per class");
  synth_cmd->add_option("--test-per-class", synth_test,
                        "test samples per class");
  synth_cmd->add_option("--size", synth_size, "image size in pixels");
  synth_cmd->add_option("--seed", synth_seed, "dataset seed");
  synth_cmd->add_option("--noise", synth_noise, "pixel noise sigma");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      slad::ExperimentConfig cfg = build_config(ra);
      if (!ra.seeds.empty()) {
        auto seeds = parse_seed_list(ra.seeds);
        if (!cfg.seed) cfg.seed = seeds.front();
        slad::MultiRunResult mr = slad::run_seeds(cfg, seeds);
        std::cout << "seed-mean over " << mr.runs.size()
                  << " runs: student_test_acc=" << mr.mean.student_test_acc;
        if (mr.mean.teacher_test_acc >= 0.0) {
          std::cout << " teacher_test_acc=" << mr.mean.teacher_test_acc;
        }
        std::cout << "\n";
        for (const auto& r : mr.runs) {
          std::cout << "  " << r.run_dir.string() << "\n";
        }
        return 0;
      }
      slad::RunResult r = slad::run(cfg);
      if (r.exit_code == 0) {
        std::cout << "run complete: " << r.run_dir.string() << "\n";
      }
      return r.exit_code;
    }
    if (*report_cmd) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      if (report_out.empty()) {
        return slad::report(dirs, std::cout);
      }
      std::ofstream os(report_out, std::ios::trunc);
      if (!os) throw slad::IoError("cannot write " + report_out);
      return slad::report(dirs, os);
    }
    if (*cka_cmd) {
      std::optional<slad::CkaFeature> feature;
      if (cka_feature == "cls") feature = slad::CkaFeature::ClsToken;
      if (cka_feature == "meanpatch") feature = slad::CkaFeature::MeanPatch;
      slad::emit_cka_for_run(cka_dir, feature);
      std::cout << "cka artifacts written under " << cka_dir << "\n";
      return 0;
    }
    if (*synth_cmd) {
      slad::SynthConfig sc;
      sc.classes = static_cast<std::size_t>(synth_classes);
      sc.train_per_class = static_cast<std::size_t>(synth_per_class);
      sc.test_per_class = static_cast<std::size_t>(synth_test);
      sc.image_size = static_cast<std::size_t>(synth_size);
      sc.seed = static_cast<std::uint64_t>(synth_seed);
      if (synth_noise >= 0.0) sc.noise = synth_noise;
      slad::Dataset ds = slad::synth_dataset(sc);
      slad::export_ppm_folder(ds, synth_out);
      std::vector<std::size_t> hist(ds.num_classes, 0);
      for (std::size_t idx : ds.train_idx) ++hist[ds.labels[idx]];
      for (std::size_t idx : ds.val_idx) ++hist[ds.labels[idx]];
      std::cout << "dataset " << ds.id << ": " << ds.sample_count()
                << " samples, " << ds.num_classes << " classes\n";
      std::cout << "train+val per class:";
      for (std::size_t h : hist) std::cout << ' ' << h;
      std::cout << "\nnearest-centroid oracle accuracy: "
                << slad::nearest_centroid_accuracy(ds) << "\n";
      return 0;
    }
  } catch (const slad::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
