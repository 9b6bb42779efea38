#pragma once

#include <functional>
#include <string>

#include "slad/lora.hpp"

namespace slad {

struct EncoderConfig {
  std::size_t depth = 6;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t patch_size = 8;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t mlp_ratio = 4;

  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const {
    return patches_per_side() * patches_per_side();
  }
  std::size_t tokens() const { return 1 + num_patches(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t mlp_dim() const { return dim * mlp_ratio; }

  void validate() const;
  std::string describe() const;  // e.g. "vit(d=64,L=6,h=4)"
};

/// Desk-scale defaults used across the experiments.
EncoderConfig teacher_config_default();  // depth 6, dim 64, heads 4
EncoderConfig student_config_default();  // depth 6, dim 32, heads 2

struct EncoderBlockParams {
  Tensor norm1_g, norm1_b;
  Tensor qkv_w;         // [d, 3d] fused, ordered Q then K then V
  Tensor q_bias, v_bias;  // keys take no bias: softmax cancels it exactly
  Tensor proj_w, proj_b;
  Tensor norm2_g, norm2_b;
  Tensor fc1_w, fc1_b;
  Tensor fc2_w, fc2_b;
};

struct EncoderForward {
  std::vector<Tensor> block_tokens;  // depth entries, each [B, T, d]
  Tensor final_tokens;               // [B, T, d] after the last norm
  std::vector<Tensor> attention;     // per block [B, H, T, T] when requested
};

/// Pre-norm ViT encoder with per-block feature taps. LoRA bindings, when
/// present, modify only the fused QKV projection.
class Encoder {
 public:
  Encoder(EncoderConfig cfg, std::uint64_t seed);

  /// The smaller sibling of `parent`: every weight is the leading slice of
  /// the corresponding parent weight (per Q/K/V segment for the fused
  /// projection), block b taking parent block `mapping(b)`. This stands in
  /// for a pretrained pair derived from one model family, so the two start
  /// with aligned features. Head width and geometry must match.
  static Encoder sliced_from(const Encoder& parent, EncoderConfig cfg,
                             const BlockMapping& mapping);

  const EncoderConfig& config() const { return cfg_; }

  Tensor patch_embed(const Tensor& images) const;  // [B,H,W,C] -> [B,T,d]
  EncoderForward forward(const Tensor& images,
                         const AdapterBindings* adapters = nullptr,
                         bool keep_attention = false) const;

  void set_trainable(bool trainable);
  std::vector<Tensor> parameters() const;
  void visit_parameters(
      const std::function<void(const std::string&, Tensor&)>& fn);
  std::uint64_t weight_checksum() const;

 private:
  EncoderConfig cfg_;
  Tensor patch_w_, patch_b_;  // [patch_dim, d], [d]
  Tensor cls_;                // [d]
  Tensor pos_;                // [T, d]
  std::vector<EncoderBlockParams> blocks_;
  Tensor norm_g_, norm_b_;
  double eps_ = 1e-6;
};

/// CLS vectors of the last k blocks concatenated in block order; the final
/// block's CLS lands in the last d coordinates.
Tensor extract_cls_concat(std::span<const Tensor> block_tokens, std::size_t k);

}  // namespace slad
