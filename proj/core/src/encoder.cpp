#include "slad/encoder.hpp"

#include <cmath>
#include <sstream>

namespace slad {

void EncoderConfig::validate() const {
  if (depth == 0 || dim == 0 || heads == 0) {
    throw ConfigError("encoder: depth, dim and heads must be positive");
  }
  if (dim % heads != 0) {
    throw ConfigError("encoder: dim " + std::to_string(dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (patch_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("encoder: image size " + std::to_string(image_size) +
                      " not divisible by patch size " +
                      std::to_string(patch_size));
  }
}

std::string EncoderConfig::describe() const {
  std::ostringstream os;
  os << "vit(d=" << dim << ",L=" << depth << ",h=" << heads << ")";
  return os.str();
}

EncoderConfig teacher_config_default() {
  EncoderConfig cfg;
  cfg.depth = 6;
  cfg.dim = 64;
  cfg.heads = 4;
  return cfg;
}

EncoderConfig student_config_default() {
  EncoderConfig cfg;
  cfg.depth = 6;
  cfg.dim = 32;
  cfg.heads = 2;
  return cfg;
}

namespace {

// Xavier-normal keeps activations O(1) through the blocks, which is what the
// emulated "pretrained" state needs: random but healthy features.
double xavier_std(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
}

constexpr double kTokenInitStd = 0.1;

}  // namespace

Encoder::Encoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  std::size_t d = cfg_.dim;
  std::size_t mlp = cfg_.mlp_dim();
  patch_w_ = Tensor::randn({cfg_.patch_dim(), d}, rng,
                           xavier_std(cfg_.patch_dim(), d), true);
  patch_b_ = Tensor::zeros({d}, true);
  cls_ = Tensor::randn({d}, rng, kTokenInitStd, true);
  pos_ = Tensor::randn({cfg_.tokens(), d}, rng, kTokenInitStd, true);
  blocks_.resize(cfg_.depth);
  for (auto& blk : blocks_) {
    blk.norm1_g = Tensor::full({d}, 1.0, true);
    blk.norm1_b = Tensor::zeros({d}, true);
    blk.qkv_w = Tensor::randn({d, 3 * d}, rng, xavier_std(d, 3 * d), true);
    blk.q_bias = Tensor::zeros({d}, true);
    blk.v_bias = Tensor::zeros({d}, true);
    blk.proj_w = Tensor::randn({d, d}, rng, xavier_std(d, d), true);
    blk.proj_b = Tensor::zeros({d}, true);
    blk.norm2_g = Tensor::full({d}, 1.0, true);
    blk.norm2_b = Tensor::zeros({d}, true);
    blk.fc1_w = Tensor::randn({d, mlp}, rng, xavier_std(d, mlp), true);
    blk.fc1_b = Tensor::zeros({mlp}, true);
    blk.fc2_w = Tensor::randn({mlp, d}, rng, xavier_std(mlp, d), true);
    blk.fc2_b = Tensor::zeros({d}, true);
  }
  norm_g_ = Tensor::full({d}, 1.0, true);
  norm_b_ = Tensor::zeros({d}, true);
}

namespace {

// leading-block slice of a row-major matrix, with the column range taken
// once per segment (Q/K/V use three segments, plain weights one)
std::vector<double> slice_matrix(std::span<const double> src,
                                 std::size_t src_rows, std::size_t src_cols,
                                 std::size_t dst_rows, std::size_t dst_cols,
                                 std::size_t segments = 1) {
  std::size_t src_seg = src_cols / segments;
  std::size_t dst_seg = dst_cols / segments;
  std::vector<double> out(dst_rows * dst_cols);
  for (std::size_t i = 0; i < dst_rows; ++i) {
    for (std::size_t s = 0; s < segments; ++s) {
      for (std::size_t j = 0; j < dst_seg; ++j) {
        out[i * dst_cols + s * dst_seg + j] =
            src[i * src_cols + s * src_seg + j];
      }
    }
  }
  (void)src_rows;
  return out;
}

void overwrite(Tensor& t, std::vector<double> values) {
  auto dst = t.data_mut();
  std::copy(values.begin(), values.end(), dst.begin());
}

}  // namespace

Encoder Encoder::sliced_from(const Encoder& parent, EncoderConfig cfg,
                             const BlockMapping& mapping) {
  const EncoderConfig& pc = parent.config();
  cfg.validate();
  if (cfg.dim > pc.dim || cfg.head_dim() != pc.head_dim() ||
      cfg.image_size != pc.image_size || cfg.patch_size != pc.patch_size ||
      cfg.channels != pc.channels || cfg.mlp_ratio != pc.mlp_ratio ||
      mapping.student_depth() != cfg.depth ||
      mapping.teacher_depth != pc.depth) {
    throw ConfigError(
        "sliced_from: student " + cfg.describe() +
        " is not a width slice of teacher " + pc.describe() +
        " (head width, geometry and mapping depths must line up)");
  }
  Encoder enc(cfg, 0);
  std::size_t ds = cfg.dim, dt = pc.dim;
  std::size_t ms = cfg.mlp_dim(), mt = pc.mlp_dim();
  auto row = [&](const Tensor& src, std::size_t cols_src, std::size_t cols_dst,
                 std::size_t rows_dst, std::size_t segments = 1) {
    return slice_matrix(src.data(), src.size() / cols_src, cols_src, rows_dst,
                        cols_dst, segments);
  };
  overwrite(enc.patch_w_,
            row(parent.patch_w_, dt, ds, cfg.patch_dim()));
  overwrite(enc.patch_b_, row(parent.patch_b_, dt, ds, 1));
  overwrite(enc.cls_, row(parent.cls_, dt, ds, 1));
  overwrite(enc.pos_, row(parent.pos_, dt, ds, cfg.tokens()));
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const EncoderBlockParams& src = parent.blocks_[mapping(b)];
    EncoderBlockParams& dst = enc.blocks_[b];
    overwrite(dst.norm1_g, row(src.norm1_g, dt, ds, 1));
    overwrite(dst.norm1_b, row(src.norm1_b, dt, ds, 1));
    overwrite(dst.qkv_w,
              slice_matrix(src.qkv_w.data(), dt, 3 * dt, ds, 3 * ds, 3));
    overwrite(dst.q_bias, row(src.q_bias, dt, ds, 1));
    overwrite(dst.v_bias, row(src.v_bias, dt, ds, 1));
    overwrite(dst.proj_w, slice_matrix(src.proj_w.data(), dt, dt, ds, ds));
    overwrite(dst.proj_b, row(src.proj_b, dt, ds, 1));
    overwrite(dst.norm2_g, row(src.norm2_g, dt, ds, 1));
    overwrite(dst.norm2_b, row(src.norm2_b, dt, ds, 1));
    overwrite(dst.fc1_w, slice_matrix(src.fc1_w.data(), dt, mt, ds, ms));
    overwrite(dst.fc1_b, row(src.fc1_b, mt, ms, 1));
    overwrite(dst.fc2_w, slice_matrix(src.fc2_w.data(), mt, dt, ms, ds));
    overwrite(dst.fc2_b, row(src.fc2_b, dt, ds, 1));
  }
  overwrite(enc.norm_g_, row(parent.norm_g_, dt, ds, 1));
  overwrite(enc.norm_b_, row(parent.norm_b_, dt, ds, 1));
  return enc;
}

Tensor Encoder::patch_embed(const Tensor& images) const {
  const Shape& s = images.shape();
  std::size_t S = cfg_.image_size, C = cfg_.channels;
  if (s.size() != 4 || s[1] != S || s[2] != S || s[3] != C) {
    throw ConfigError("patch_embed: expected images [B x " +
                      std::to_string(S) + " x " + std::to_string(S) + " x " +
                      std::to_string(C) + "], got " + shape_str(s));
  }
  std::size_t B = s[0];
  std::size_t g = cfg_.patches_per_side(), p = cfg_.patch_size;
  // [B,S,S,C] -> [B,g,p,g,p,C] -> [B,g,g,p,p,C] -> [B,P,patch_dim]
  Tensor x = reshape(images, {B, g, p, g, p, C});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  x = reshape(x, {B, cfg_.num_patches(), cfg_.patch_dim()});
  Tensor patches = linear(x, patch_w_, patch_b_);  // [B,P,d]
  Tensor cls = add_bias(Tensor::zeros({B, 1, cfg_.dim}), cls_);
  Tensor parts[2] = {cls, patches};
  Tensor tokens = concat(parts, 1);  // [B,T,d]
  return add_bias(tokens, pos_);
}

EncoderForward Encoder::forward(const Tensor& images,
                                const AdapterBindings* adapters,
                                bool keep_attention) const {
  if (adapters && adapters->size() != cfg_.depth) {
    throw BindingError("encoder_forward: " +
                       std::to_string(adapters->size()) +
                       " adapter bindings for depth " +
                       std::to_string(cfg_.depth));
  }
  EncoderForward out;
  out.block_tokens.reserve(cfg_.depth);
  Tensor x = patch_embed(images);
  std::size_t B = images.dim(0);
  std::size_t T = cfg_.tokens(), d = cfg_.dim, H = cfg_.heads,
              dh = cfg_.head_dim();
  double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t bi = 0; bi < cfg_.depth; ++bi) {
    const EncoderBlockParams& blk = blocks_[bi];
    Tensor h = layernorm(x, blk.norm1_g, blk.norm1_b, eps_);
    Tensor qkv;
    if (adapters && (*adapters)[bi].has_value()) {
      qkv = lora_linear_forward(h, blk.qkv_w, *(*adapters)[bi]);
    } else {
      qkv = matmul(h, blk.qkv_w);
    }
    Tensor q = permute(reshape(add_bias(slice(qkv, 2, 0, d), blk.q_bias),
                               {B, T, H, dh}),
                       {0, 2, 1, 3});
    Tensor k = permute(reshape(slice(qkv, 2, d, 2 * d), {B, T, H, dh}),
                       {0, 2, 1, 3});
    Tensor v = permute(reshape(add_bias(slice(qkv, 2, 2 * d, 3 * d),
                                        blk.v_bias),
                               {B, T, H, dh}),
                       {0, 2, 1, 3});
    Tensor attn =
        softmax_temperature(scale(matmul_nt(q, k), attn_scale), 1.0);
    if (keep_attention) out.attention.push_back(attn);
    Tensor ctx = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {B, T, d});
    x = add(x, linear(ctx, blk.proj_w, blk.proj_b));
    Tensor h2 = layernorm(x, blk.norm2_g, blk.norm2_b, eps_);
    Tensor mlp = linear(gelu(linear(h2, blk.fc1_w, blk.fc1_b)), blk.fc2_w,
                        blk.fc2_b);
    x = add(x, mlp);
    out.block_tokens.push_back(x);
  }
  out.final_tokens = layernorm(x, norm_g_, norm_b_, eps_);
  return out;
}

void Encoder::set_trainable(bool trainable) {
  visit_parameters(
      [trainable](const std::string&, Tensor& t) { t.set_requires_grad(trainable); });
}

std::vector<Tensor> Encoder::parameters() const {
  std::vector<Tensor> out;
  const_cast<Encoder*>(this)->visit_parameters(
      [&out](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

void Encoder::visit_parameters(
    const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("patch.w", patch_w_);
  fn("patch.b", patch_b_);
  fn("cls", cls_);
  fn("pos", pos_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    std::string p = "block" + std::to_string(i) + ".";
    EncoderBlockParams& blk = blocks_[i];
    fn(p + "norm1.g", blk.norm1_g);
    fn(p + "norm1.b", blk.norm1_b);
    fn(p + "qkv.w", blk.qkv_w);
    fn(p + "qkv.q_bias", blk.q_bias);
    fn(p + "qkv.v_bias", blk.v_bias);
    fn(p + "proj.w", blk.proj_w);
    fn(p + "proj.b", blk.proj_b);
    fn(p + "norm2.g", blk.norm2_g);
    fn(p + "norm2.b", blk.norm2_b);
    fn(p + "fc1.w", blk.fc1_w);
    fn(p + "fc1.b", blk.fc1_b);
    fn(p + "fc2.w", blk.fc2_w);
    fn(p + "fc2.b", blk.fc2_b);
  }
  fn("norm.g", norm_g_);
  fn("norm.b", norm_b_);
}

std::uint64_t Encoder::weight_checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  const_cast<Encoder*>(this)->visit_parameters(
      [&h](const std::string&, Tensor& t) {
        h = fnv1a(t.data().data(), t.data().size_bytes(), h);
      });
  return h;
}

Tensor extract_cls_concat(std::span<const Tensor> block_tokens,
                          std::size_t k) {
  if (k == 0 || k > block_tokens.size()) {
    throw ValueError("extract_cls_concat: k = " + std::to_string(k) +
                     " with " + std::to_string(block_tokens.size()) +
                     " blocks");
  }
  std::vector<Tensor> parts;
  parts.reserve(k);
  for (std::size_t i = block_tokens.size() - k; i < block_tokens.size(); ++i) {
    const Tensor& tokens = block_tokens[i];
    std::size_t B = tokens.dim(0), d = tokens.dim(2);
    parts.push_back(reshape(slice(tokens, 1, 0, 1), {B, d}));
  }
  return concat(parts, 1);
}

}  // namespace slad
