#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "slad/encoder.hpp"
#include "slad/grad_check.hpp"
#include "slad/heads.hpp"
#include "slad/losses.hpp"
#include "slad/optim.hpp"
#include "test_util.hpp"

using namespace slad;
using testutil::bitwise_equal;
using testutil::random_tensor;

namespace {

EncoderConfig tiny_config(std::size_t depth = 2, std::size_t dim = 16,
                          std::size_t heads = 2) {
  EncoderConfig cfg;
  cfg.depth = depth;
  cfg.dim = dim;
  cfg.heads = heads;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.mlp_ratio = 2;
  return cfg;
}

Tensor random_images(const EncoderConfig& cfg, std::size_t batch, Rng& rng) {
  return Tensor::randn({batch, cfg.image_size, cfg.image_size, cfg.channels},
                       rng, 1.0, false);
}

}  // namespace

TEST_CASE("encoder config validation") {
  EncoderConfig bad = tiny_config();
  bad.heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.patch_size = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("patch_embed: token count and zero-weight behavior") {
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.image_size = 32;
  cfg.patch_size = 8;
  Encoder enc(cfg, 42);
  Rng rng(1);
  Tensor images = random_images(cfg, 3, rng);
  Tensor tokens = enc.patch_embed(images);
  CHECK(tokens.shape() == Shape{3, 17, 8});  // 16 patches + CLS

  // zero images + zero projection: tokens equal positional embedding with
  // the CLS token added at position 0
  enc.visit_parameters([](const std::string& name, Tensor& t) {
    if (name == "patch.w" || name == "patch.b") {
      std::fill(t.data_mut().begin(), t.data_mut().end(), 0.0);
    }
  });
  Tensor zero_images = Tensor::zeros({2, 32, 32, 3});
  Tensor zt = enc.patch_embed(zero_images);
  std::vector<double> cls, pos;
  enc.visit_parameters([&](const std::string& name, Tensor& t) {
    if (name == "cls") cls.assign(t.data().begin(), t.data().end());
    if (name == "pos") pos.assign(t.data().begin(), t.data().end());
  });
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 17; ++t) {
      for (std::size_t j = 0; j < 8; ++j) {
        double expect = pos[t * 8 + j] + (t == 0 ? cls[j] : 0.0);
        CHECK(zt.data()[(b * 17 + t) * 8 + j] == doctest::Approx(expect));
      }
    }
  }
}

TEST_CASE("patch_embed: gradient check") {
  EncoderConfig cfg = tiny_config(1, 8, 2);
  Encoder enc(cfg, 7);
  Rng rng(2);
  Tensor images = Tensor::randn(
      {2, cfg.image_size, cfg.image_size, cfg.channels}, rng, 1.0, true);
  std::vector<Tensor> inputs{images};
  auto f = [&](std::span<Tensor> in) {
    Rng wr(50);
    Tensor w = Tensor::randn({2, cfg.tokens(), cfg.dim}, wr, 1.0, false);
    return sum(mul(enc.patch_embed(in[0]), w));
  };
  CHECK(grad_check(f, inputs, 1e-5).ok(1e-4));
}

TEST_CASE("encoder block: zero weights reduce to the residual path") {
  EncoderConfig cfg = tiny_config(1, 8, 2);
  Encoder enc(cfg, 3);
  // zero the block's projection weights; norms stay at gamma=1 beta=0
  enc.visit_parameters([](const std::string& name, Tensor& t) {
    if (name.find("qkv.") != std::string::npos ||
        name.find("proj.") != std::string::npos ||
        name.find("fc") != std::string::npos) {
      std::fill(t.data_mut().begin(), t.data_mut().end(), 0.0);
    }
  });
  Rng rng(4);
  Tensor images = random_images(cfg, 2, rng);
  Tensor embedded = enc.patch_embed(images);
  EncoderForward out = enc.forward(images);
  CHECK(bitwise_equal(out.block_tokens[0].data(), embedded.data()));
}

TEST_CASE("encoder forward: shapes and attention row sums") {
  EncoderConfig cfg = tiny_config(3, 16, 4);
  Encoder enc(cfg, 11);
  Rng rng(5);
  Tensor images = random_images(cfg, 2, rng);
  EncoderForward out = enc.forward(images, nullptr, true);
  CHECK(out.block_tokens.size() == 3);
  for (const Tensor& t : out.block_tokens) {
    CHECK(t.shape() == Shape{2, cfg.tokens(), 16});
  }
  CHECK(out.attention.size() == 3);
  for (const Tensor& a : out.attention) {
    CHECK(a.shape() == Shape{2, 4, cfg.tokens(), cfg.tokens()});
    std::size_t t = cfg.tokens();
    for (std::size_t row = 0; row < a.size() / t; ++row) {
      double s = 0.0;
      for (std::size_t c = 0; c < t; ++c) s += a.data()[row * t + c];
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("encoder: depth-2 grad check through final CLS") {
  EncoderConfig cfg = tiny_config(2, 16, 2);
  Encoder enc(cfg, 19);
  Rng rng(6);
  Tensor images = random_images(cfg, 2, rng);
  std::vector<Tensor> params = enc.parameters();
  // the 0.01 probe scale keeps FD noise on near-zero gradient entries
  // under the relative-error floor; h from a 60-seed sweep
  auto f = [&](std::span<Tensor>) {
    EncoderForward out = enc.forward(images);
    Tensor cls = reshape(slice(out.final_tokens, 1, 0, 1), {2, 16});
    Rng wr(77);
    Tensor w = Tensor::randn({2, 16}, wr, 1.0, false);
    return scale(sum(mul(cls, w)), 0.01);
  };
  GradCheckReport rep = grad_check(f, params, 7e-6);
  INFO("max rel err " << rep.max_rel_err);
  CHECK(rep.ok(1e-4));
}

TEST_CASE("extract_cls_concat: widths, order, bounds") {
  EncoderConfig cfg = tiny_config(3, 4, 2);
  Encoder enc(cfg, 8);
  Rng rng(9);
  Tensor images = random_images(cfg, 2, rng);
  EncoderForward out = enc.forward(images);
  Tensor feats = extract_cls_concat(out.block_tokens, 3);
  CHECK(feats.shape() == Shape{2, 12});

  Tensor last = extract_cls_concat(out.block_tokens, 1);
  CHECK(last.shape() == Shape{2, 4});
  // k=1 equals the final block's CLS row
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(last.data()[b * 4 + j] ==
            out.block_tokens[2].data()[b * cfg.tokens() * 4 + j]);
    }
  }
  CHECK_THROWS_AS(extract_cls_concat(out.block_tokens, 4), ValueError);
  CHECK_THROWS_AS(extract_cls_concat(out.block_tokens, 0), ValueError);

  // perturbing the last block's CLS changes only the last d coordinates
  std::vector<Tensor> tokens = out.block_tokens;
  Tensor bumped = tokens[2].detach();
  bumped.data_mut()[0] += 10.0;  // CLS of sample 0
  tokens[2] = bumped;
  Tensor feats2 = extract_cls_concat(tokens, 3);
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(feats2.data()[j] == feats.data()[j]);
  }
  CHECK(feats2.data()[8] != feats.data()[8]);
}

TEST_CASE("lora: init bound, zero delta, rank validation") {
  Rng rng(10);
  LoraAdapter ad = init_lora(64, 192, 16, rng);
  double bound = std::sqrt(6.0 / 64.0);
  CHECK(bound == doctest::Approx(0.3062).epsilon(1e-3));
  double max_abs = 0.0;
  for (double v : ad.a.data()) max_abs = std::max(max_abs, std::fabs(v));
  CHECK(max_abs <= bound);
  CHECK(max_abs > 0.5 * bound);  // actually spread over the range
  for (double v : ad.b.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(init_lora(4, 8, 0, rng), ValueError);
  CHECK_THROWS_AS(init_lora(4, 8, 5, rng), ValueError);
}

TEST_CASE("lora_linear_forward: identity at init, hand product, dense oracle") {
  Rng rng(12);
  Tensor x = random_tensor({5, 6}, rng, false);
  Tensor w0 = random_tensor({6, 9}, rng, false);
  LoraAdapter ad = init_lora(6, 9, 2, rng);
  // B = 0: exact equality with the plain product
  Tensor plain = matmul(x, w0);
  Tensor with = lora_linear_forward(x, w0, QkvAdapterRef(ad));
  CHECK(bitwise_equal(plain.data(), with.data()));

  // hand product: x=[1,0], W0=0, A=[[1],[0]], B=[[2,3]]
  LoraAdapter hand;
  hand.rank = 1;
  hand.a = Tensor::from_data({2, 1}, {1, 0});
  hand.b = Tensor::from_data({1, 2}, {2, 3});
  Tensor hx = Tensor::from_data({1, 2}, {1, 0});
  Tensor hw = Tensor::zeros({2, 2});
  Tensor hout = lora_linear_forward(hx, hw, QkvAdapterRef(hand));
  CHECK(hout.data()[0] == 2.0);
  CHECK(hout.data()[1] == 3.0);

  // factored forward vs materialized W0 + AB
  for (double& v : ad.b.data_mut()) v = rng.normal();
  Tensor merged = merge_weights(w0, QkvAdapterRef(ad));
  Tensor dense = matmul(x, merged);
  Tensor fact = lora_linear_forward(x, w0, QkvAdapterRef(ad));
  CHECK(testutil::max_abs_diff(dense.data(), fact.data()) <= 1e-12);

  Tensor bad_x = random_tensor({5, 7}, rng, false);
  CHECK_THROWS_AS(lora_linear_forward(bad_x, w0, QkvAdapterRef(ad)),
                  ShapeError);
}

TEST_CASE("merge_weights: zero delta returns W0, rank-1 ones") {
  Rng rng(13);
  Tensor w0 = random_tensor({3, 4}, rng, false);
  LoraAdapter ad = init_lora(3, 4, 2, rng);
  Tensor merged = merge_weights(w0, QkvAdapterRef(ad));
  CHECK(bitwise_equal(merged.data(), w0.data()));

  LoraAdapter ones;
  ones.rank = 1;
  ones.a = Tensor::from_data({2, 1}, {1, 1});
  ones.b = Tensor::from_data({1, 2}, {1, 1});
  Tensor z = Tensor::zeros({2, 2});
  Tensor m = merge_weights(z, QkvAdapterRef(ones));
  for (double v : m.data()) CHECK(v == 1.0);
}

TEST_CASE("shared view: column selection, aliasing, errors") {
  Rng rng(14);
  std::size_t d_t = 4, d_s = 2, r = 2;
  LoraAdapter ad = init_lora(d_t, 3 * d_t, r, rng);
  ad.site = AdapterSite{0, AdapterSiteKind::FusedQkv};
  for (double& v : ad.b.data_mut()) v = rng.normal();
  SharedAdapterView view = make_shared_view(ad, d_s, d_t);

  CHECK(view.b_column_indices() ==
        std::vector<std::size_t>{0, 1, 4, 5, 8, 9});
  Tensor vb = view.b();
  CHECK(vb.shape() == Shape{r, 3 * d_s});
  for (std::size_t row = 0; row < r; ++row) {
    std::size_t col = 0;
    for (std::size_t src : view.b_column_indices()) {
      CHECK(vb.data()[row * 6 + col] == ad.b.data()[row * 12 + src]);
      ++col;
    }
  }

  // full-width view covers the whole adapter
  SharedAdapterView full = make_shared_view(ad, d_t, d_t);
  CHECK(bitwise_equal(full.a().data(), ad.a.data()));
  CHECK(bitwise_equal(full.b().data(), ad.b.data()));

  // aliasing: parent mutations show up, rows beyond d_s are invisible
  double before = view.a().data()[0];
  ad.a.data_mut()[0] += 1.0;
  CHECK(view.a().data()[0] == doctest::Approx(before + 1.0));
  Tensor va = view.a();
  ad.a.data_mut()[d_s * r] += 5.0;  // row d_s, outside the view
  CHECK(bitwise_equal(view.a().data(), va.data()));

  CHECK_THROWS_AS(make_shared_view(ad, 5, 4), ShapeError);
  LoraAdapter not_qkv = init_lora(4, 8, 2, rng);
  CHECK_THROWS_AS(make_shared_view(not_qkv, 2, 4), BindingError);
}

TEST_CASE("shared view: gradient routing hits exactly the view offsets") {
  Rng rng(15);
  std::size_t d_t = 4, d_s = 2, r = 2;
  LoraAdapter ad = init_lora(d_t, 3 * d_t, r, rng);
  for (double& v : ad.b.data_mut()) v = rng.normal();
  SharedAdapterView view = make_shared_view(ad, d_s, d_t);

  Tensor x = random_tensor({3, d_s}, rng, false);
  Tensor w0 = Tensor::zeros({d_s, 3 * d_s});
  Tensor out = lora_linear_forward(x, w0, QkvAdapterRef(view));
  backward(sum(out));

  // rows of A beyond d_s and B columns outside the view stay at zero grad
  auto ga = ad.a.grad();
  for (std::size_t row = 0; row < d_t; ++row) {
    for (std::size_t c = 0; c < r; ++c) {
      bool inside = row < d_s;
      CHECK((ga[row * r + c] != 0.0) == inside);
    }
  }
  auto gb = ad.b.grad();
  std::vector<std::size_t> cols = view.b_column_indices();
  for (std::size_t row = 0; row < r; ++row) {
    for (std::size_t c = 0; c < 3 * d_t; ++c) {
      bool inside = std::find(cols.begin(), cols.end(), c) != cols.end();
      if (!inside) CHECK(gb[row * 3 * d_t + c] == 0.0);
    }
  }

  // scatter oracle: same loss through explicit slices of copied factors
  Tensor a_copy = ad.a.detach();
  a_copy.set_requires_grad(true);
  Tensor b_copy = ad.b.detach();
  b_copy.set_requires_grad(true);
  Tensor a_eff = slice(a_copy, 0, 0, d_s);
  Tensor parts[3] = {slice(b_copy, 1, 0, d_s),
                     slice(b_copy, 1, d_t, d_t + d_s),
                     slice(b_copy, 1, 2 * d_t, 2 * d_t + d_s)};
  Tensor b_eff = concat(parts, 1);
  backward(sum(add(matmul(x, w0), matmul(matmul(x, a_eff), b_eff))));
  CHECK(testutil::max_abs_diff(ad.a.grad(), a_copy.grad()) == 0.0);
  CHECK(testutil::max_abs_diff(ad.b.grad(), b_copy.grad()) == 0.0);
}

TEST_CASE("encoder + adapters: zero-init B leaves activations bitwise equal") {
  EncoderConfig cfg = tiny_config(2, 8, 2);
  Encoder enc(cfg, 21);
  Rng rng(16);
  Tensor images = random_images(cfg, 2, rng);
  EncoderForward plain = enc.forward(images);
  LoraSet lora = make_encoder_lora(cfg.dim, cfg.depth, 4, 99);
  AdapterBindings bindings = lora.bindings();
  EncoderForward bound = enc.forward(images, &bindings);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    CHECK(bitwise_equal(plain.block_tokens[i].data(),
                        bound.block_tokens[i].data()));
  }
  CHECK(bitwise_equal(plain.final_tokens.data(), bound.final_tokens.data()));

  // rank property: singular values of A*B vanish beyond the rank
  for (LoraAdapter& ad : lora.adapters) {
    Rng r2(5);
    for (double& v : ad.b.data_mut()) v = r2.normal();
    Tensor delta = matmul(ad.a, ad.b);
    auto sv = testutil::singular_values(
        std::vector<double>(delta.data().begin(), delta.data().end()),
        delta.dim(0), delta.dim(1));
    for (std::size_t i = ad.rank; i < sv.size(); ++i) CHECK(sv[i] <= 1e-10);
    CHECK(sv[0] > 1e-3);
  }
}

TEST_CASE("encoder + adapters: binding count and width are validated") {
  EncoderConfig cfg = tiny_config(2, 8, 2);
  Encoder enc(cfg, 22);
  Rng rng(17);
  Tensor images = random_images(cfg, 1, rng);
  LoraSet wrong_depth = make_encoder_lora(cfg.dim, 3, 2, 1);
  AdapterBindings b1 = wrong_depth.bindings();
  CHECK_THROWS_AS(enc.forward(images, &b1), BindingError);
  LoraSet wrong_width = make_encoder_lora(16, 2, 2, 1);
  AdapterBindings b2 = wrong_width.bindings();
  CHECK_THROWS_AS(enc.forward(images, &b2), BindingError);
}

TEST_CASE("head_sizes: sizing rules per model class") {
  CHECK(head_sizes(96, 12, ModelClass::Student) == 96);
  CHECK(head_sizes(192, 12, ModelClass::Teacher) == 48);  // round(sqrt(2304))
  CHECK(head_sizes(40, 40, ModelClass::Teacher) == 40);
  CHECK_THROWS_AS(head_sizes(0, 4, ModelClass::Student), ValueError);
}

TEST_CASE("mlp head: forward shape and grad check") {
  MlpHead head(12, 5, ModelClass::Teacher, 7);
  CHECK(head.n_hidden() == 8);  // round(sqrt(60))
  Rng rng(18);
  Tensor features = random_tensor({3, 12}, rng, false);
  Tensor logits = head.forward(features);
  CHECK(logits.shape() == Shape{3, 5});

  std::vector<Tensor> params = head.parameters();
  auto f = [&](std::span<Tensor>) {
    Rng wr(55);
    Tensor w = Tensor::randn({3, 5}, wr, 1.0, false);
    return sum(mul(head.forward(features), w));
  };
  CHECK(grad_check(f, params, 1e-5).ok(1e-4));
}

TEST_CASE("cross_entropy: uniform, confident, hand value, bad labels") {
  Tensor uniform = Tensor::zeros({4, 10});
  std::vector<std::size_t> labels{1, 3, 5, 9};
  CHECK(cross_entropy(uniform, labels).item() ==
        doctest::Approx(std::log(10.0)).epsilon(1e-10));

  Tensor confident = Tensor::zeros({2, 3});
  confident.data_mut()[0] = 60.0;  // row 0 class 0
  confident.data_mut()[4] = 60.0;  // row 1 class 1
  std::vector<std::size_t> lab2{0, 1};
  CHECK(cross_entropy(confident, lab2).item() <= 1e-10);

  Tensor two = Tensor::from_data({1, 2}, {2, 0});
  std::vector<std::size_t> lab3{0};
  CHECK(cross_entropy(two, lab3).item() ==
        doctest::Approx(0.126928).epsilon(1e-5));

  std::vector<std::size_t> bad{7};
  CHECK_THROWS_AS(cross_entropy(two, bad), DataError);
}

TEST_CASE("cross_entropy: grad check on a 3-class linear head") {
  Rng rng(31);
  Tensor x = random_tensor({4, 5}, rng, false);
  Tensor w = random_tensor({5, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  std::vector<std::size_t> labels{0, 2, 1, 2};
  std::vector<Tensor> params{w, b};
  auto f = [&](std::span<Tensor> in) {
    return cross_entropy(linear(x, in[0], in[1]), labels);
  };
  CHECK(grad_check(f, params, 1e-5).ok(1e-5));
}

TEST_CASE("kd_loss: worked example, identical logits, reductions") {
  std::vector<std::size_t> labels{0};
  Tensor teacher = Tensor::from_data({1, 2}, {2, 0});
  Tensor student = Tensor::from_data({1, 2}, {0, 2});

  DistillConfig cfg = kd_defaults();
  CHECK(cfg.temperature == 2.0);
  CHECK(cfg.alpha_s == 0.5);
  CHECK(cfg.alpha_kl == 0.5);

  cfg.alpha_s = 0.0;
  cfg.alpha_kl = 1.0;
  CHECK(kd_loss(student, teacher, labels, cfg).item() ==
        doctest::Approx(1.848468).epsilon(1e-5));

  // identical logits: the KL term vanishes
  CHECK(kd_loss(teacher, teacher, labels, cfg).item() <= 1e-12);

  // alpha_kl = 0 equals plain cross entropy bit for bit
  DistillConfig ce_only = kd_defaults();
  ce_only.alpha_s = 1.0;
  ce_only.alpha_kl = 0.0;
  CHECK(kd_loss(student, teacher, labels, ce_only).item() ==
        cross_entropy(student, labels).item());

  DistillConfig bad = kd_defaults();
  bad.temperature = 0.0;
  CHECK_THROWS_AS(kd_loss(student, teacher, labels, bad), ValueError);
  bad = kd_defaults();
  bad.alpha_s = bad.alpha_kl = bad.alpha_t = 0.0;
  CHECK_THROWS_AS(kd_loss(student, teacher, labels, bad), ValueError);

  Tensor mismatched = Tensor::zeros({1, 3});
  CHECK_THROWS_AS(kd_loss(student, mismatched, labels, kd_defaults()),
                  ShapeError);
}

TEST_CASE("slad_loss: defaults, reduction to kd, additive task terms") {
  DistillConfig cfg = slad_defaults();
  CHECK(cfg.alpha_s == 1.0);
  CHECK(cfg.alpha_t == 1.0);
  CHECK(cfg.alpha_kl == 1.0);

  Rng rng(19);
  Tensor teacher = random_tensor({4, 6}, rng, false);
  Tensor student = random_tensor({4, 6}, rng, false);
  std::vector<std::size_t> labels{0, 2, 4, 5};

  DistillConfig kd_cfg = cfg;
  kd_cfg.alpha_t = 0.0;
  CHECK(slad_loss(student, teacher, labels, kd_cfg).item() ==
        kd_loss(student, teacher, labels, kd_cfg).item());

  // identical logits with equal CE values c and weights (1,1,1) give 2c
  double c = cross_entropy(teacher, labels).item();
  CHECK(slad_loss(teacher, teacher, labels, cfg).item() ==
        doctest::Approx(2.0 * c).epsilon(1e-12));
}

TEST_CASE("softened KL: non-negative, zero iff equal, detach control") {
  Rng rng(20);
  DistillConfig cfg = kd_defaults();
  for (int trial = 0; trial < 25; ++trial) {
    Tensor t = random_tensor({3, 5}, rng, false, 2.0);
    Tensor s = random_tensor({3, 5}, rng, false, 2.0);
    cfg.temperature = rng.uniform(0.5, 6.0);
    double kl = softened_kl(t, s, cfg).item();
    CHECK(kl >= 0.0);
  }
  Tensor t = random_tensor({3, 5}, rng, false);
  CHECK(softened_kl(t, t, cfg).item() <= 1e-12);

  // teacher gradient is blocked by default, flows in mutual mode
  Tensor tg = random_tensor({2, 4}, rng, true);
  Tensor sg = random_tensor({2, 4}, rng, true);
  backward(softened_kl(tg, sg, cfg));
  CHECK(!tg.has_grad());
  CHECK(sg.has_grad());
  DistillConfig mutual = cfg;
  mutual.detach_teacher_in_kl = false;
  backward(softened_kl(tg, sg, mutual));
  CHECK(tg.has_grad());
}

TEST_CASE("KL gradient: T^2 compensation keeps magnitudes bounded") {
  Tensor teacher = Tensor::from_data({1, 3}, {2.0, 0.0, -1.0});
  std::vector<double> norms;
  for (double temp : {1.0, 2.0, 4.0, 8.0}) {
    Tensor student = Tensor::from_data({1, 3}, {0.0, 1.0, 0.5}, true);
    DistillConfig cfg = kd_defaults();
    cfg.temperature = temp;
    cfg.alpha_s = 0.0;
    cfg.alpha_kl = 1.0;
    std::vector<std::size_t> labels{0};
    backward(kd_loss(student, teacher, labels, cfg));
    double norm = 0.0;
    for (double g : student.grad()) norm = std::max(norm, std::fabs(g));
    norms.push_back(norm);
  }
  double lo = *std::min_element(norms.begin(), norms.end());
  double hi = *std::max_element(norms.begin(), norms.end());
  CHECK(lo > 0.0);
  CHECK(hi / lo <= 3.0);  // no T^2 blow-up across T in {1,2,4,8}
}

TEST_CASE("KL argmin: gradient descent recovers the teacher distribution") {
  Tensor teacher = Tensor::from_data({1, 3}, {1.5, -0.5, 0.25});
  Tensor student = Tensor::from_data({1, 3}, {0.0, 0.0, 0.0}, true);
  DistillConfig cfg = kd_defaults();
  cfg.alpha_s = 0.0;
  cfg.alpha_kl = 1.0;
  std::vector<std::size_t> labels{0};
  for (int it = 0; it < 400; ++it) {
    student.zero_grad();
    backward(kd_loss(student, teacher, labels, cfg));
    auto g = student.grad();
    auto v = student.data_mut();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= 0.5 * g[i];
  }
  Tensor pt = softmax_temperature(teacher, cfg.temperature);
  Tensor ps = softmax_temperature(student, cfg.temperature);
  CHECK(testutil::max_abs_diff(pt.data(), ps.data()) <= 1e-6);
}

TEST_CASE("block_mapping: closed forms and validation") {
  BlockMapping even = block_mapping(MappingKind::Even, 12, 24);
  for (std::size_t i = 0; i < 12; ++i) CHECK(even(i) == 2 * i);

  BlockMapping first = block_mapping(MappingKind::First, 6, 12);
  BlockMapping last = block_mapping(MappingKind::Last, 6, 12);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(first(i) == i);
    CHECK(last(i) == 6 + i);
  }
  CHECK_THROWS_AS(block_mapping(MappingKind::Even, 8, 4), ConfigError);
  CHECK(mapping_from_string("even") == MappingKind::Even);
  CHECK_THROWS_AS(mapping_from_string("zigzag"), ConfigError);
}

TEST_CASE("block_mapping: injective and in range for all depths up to 32") {
  for (std::size_t n_s = 1; n_s <= 32; ++n_s) {
    for (std::size_t n_t = n_s; n_t <= 32; ++n_t) {
      for (MappingKind kind :
           {MappingKind::First, MappingKind::Last, MappingKind::Even}) {
        BlockMapping m = block_mapping(kind, n_s, n_t);
        for (std::size_t i = 0; i < n_s; ++i) {
          CHECK(m(i) < n_t);
          if (i > 0) CHECK(m(i) > m(i - 1));
        }
      }
    }
  }
}

TEST_CASE("adamw: no-op on zero grads, cosine endpoints, hand-checked step") {
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  Tensor p = Tensor::from_data({2}, {1.0, -2.0}, true);
  AdamW opt({p}, cfg);
  p.grad_mut();  // zeros
  opt.step(0.0);
  CHECK(p.data()[0] == 1.0);
  CHECK(p.data()[1] == -2.0);

  CHECK(opt.lr_at(0.0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(opt.lr_at(1.0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(opt.lr_at(0.5) == doctest::Approx(0.05).epsilon(1e-12));

  // one step on a scalar against the written-out update rule
  AdamWConfig c2;
  c2.lr = 0.01;
  c2.weight_decay = 0.1;
  Tensor w = Tensor::from_data({1}, {0.5}, true);
  AdamW opt2({w}, c2);
  w.grad_mut()[0] = 0.3;
  opt2.step(0.0);
  double m = (1 - c2.beta1) * 0.3;
  double v = (1 - c2.beta2) * 0.3 * 0.3;
  double mhat = m / (1 - c2.beta1);
  double vhat = v / (1 - c2.beta2);
  double expect = 0.5 - c2.lr * (mhat / (std::sqrt(vhat) + c2.eps) + 0.1 * 0.5);
  CHECK(std::fabs(w.data()[0] - expect) <= 1e-12);
}

TEST_CASE("adamw: duplicate storage is rejected, NaN grads abort") {
  Tensor p = Tensor::zeros({2}, true);
  CHECK_THROWS_AS(AdamW({p, p}, AdamWConfig{}), ConfigError);

  Tensor q = Tensor::zeros({2}, true);
  AdamW opt({q}, AdamWConfig{});
  q.grad_mut()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(0.0), ValueError);
}

TEST_CASE("adamw: params without grads are skipped") {
  Tensor p = Tensor::from_data({1}, {3.0}, true);
  AdamW opt({p}, AdamWConfig{});
  opt.step(0.0);  // no grad populated yet
  CHECK(p.data()[0] == 3.0);
}
