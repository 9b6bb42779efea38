#include <benchmark/benchmark.h>

#include "slad/cka.hpp"
#include "slad/linalg.hpp"
#include "slad/losses.hpp"
#include "slad/optim.hpp"
#include "slad/training.hpp"

using namespace slad;

static void BM_GemmNN(benchmark::State& state) {
  std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  std::vector<double> a(n * n), b(n * n), c(n * n);
  for (double& v : a) v = rng.normal();
  for (double& v : b) v = rng.normal();
  for (auto _ : state) {
    gemm_nn(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_GemmNN)->Arg(64)->Arg(128)->Arg(256);

static void BM_EncoderForward(benchmark::State& state) {
  EncoderConfig cfg = teacher_config_default();
  Encoder enc(cfg, 7);
  Rng rng(2);
  Tensor images = Tensor::randn(
      {static_cast<std::size_t>(state.range(0)), cfg.image_size,
       cfg.image_size, cfg.channels},
      rng, 1.0, false);
  NoGradGuard no_grad;
  for (auto _ : state) {
    EncoderForward out = enc.forward(images);
    benchmark::DoNotOptimize(out.final_tokens.data().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForward)->Arg(16)->Arg(64);

static void BM_EncoderForwardBackward(benchmark::State& state) {
  EncoderConfig cfg = teacher_config_default();
  TaskModel model(cfg, 10, ModelClass::Teacher, 7);
  Rng rng(3);
  Tensor images =
      Tensor::randn({32, cfg.image_size, cfg.image_size, cfg.channels}, rng,
                    1.0, false);
  std::vector<std::size_t> labels(32);
  for (std::size_t i = 0; i < 32; ++i) labels[i] = i % 10;
  std::vector<Tensor> params = model.encoder.parameters();
  for (const Tensor& t : model.head.parameters()) params.push_back(t);
  for (auto _ : state) {
    Tensor loss = cross_entropy(model.logits(images), labels);
    backward(loss);
    for (Tensor& p : params) p.zero_grad();
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_EncoderForwardBackward);

static void BM_SladStep(benchmark::State& state) {
  EncoderConfig tc = teacher_config_default();
  EncoderConfig sc = student_config_default();
  TaskModel teacher(tc, 10, ModelClass::Teacher, 1);
  TaskModel student(sc, 10, ModelClass::Student, 2);
  teacher.attach_lora(16, 3);
  teacher.encoder.set_trainable(false);
  student.encoder.set_trainable(false);
  AdapterBindings t_bind = teacher.lora->bindings();
  AdapterBindings s_bind =
      slad_student_bindings(teacher, student, MappingKind::Even);
  std::vector<Tensor> params = teacher.lora->parameters();
  for (const Tensor& t : teacher.head.parameters()) params.push_back(t);
  for (const Tensor& t : student.head.parameters()) params.push_back(t);
  AdamW opt(params, AdamWConfig{});
  Rng rng(4);
  Tensor images = Tensor::randn({32, 32, 32, 3}, rng, 1.0, false);
  std::vector<std::size_t> labels(32);
  for (std::size_t i = 0; i < 32; ++i) labels[i] = i % 10;
  DistillConfig cfg = slad_defaults();
  std::size_t step = 0;
  for (auto _ : state) {
    Tensor t_logits = teacher.logits(images, &t_bind);
    Tensor s_logits = student.logits(images, &s_bind);
    Tensor loss = slad_loss(s_logits, t_logits, labels, cfg);
    opt.zero_grad();
    backward(loss);
    opt.step(static_cast<double>(step % 100) / 100.0);
    ++step;
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_SladStep);

static void BM_LinearCka(benchmark::State& state) {
  Rng rng(5);
  FeatureMatrix x, y;
  x.n = y.n = 256;
  x.p = 64;
  y.p = 32;
  x.values.resize(x.n * x.p);
  y.values.resize(y.n * y.p);
  for (double& v : x.values) v = rng.normal();
  for (double& v : y.values) v = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(linear_cka(x, y));
  }
}
BENCHMARK(BM_LinearCka);

BENCHMARK_MAIN();
