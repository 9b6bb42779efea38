#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "slad/mapping.hpp"
#include "slad/ops.hpp"

namespace slad {

enum class AdapterSiteKind { FusedQkv };

struct AdapterSite {
  std::size_t block = 0;
  AdapterSiteKind kind = AdapterSiteKind::FusedQkv;
};

/// Low-rank pair (A, B) added to a frozen weight as W0 + A*B. A is Kaiming
/// uniform, B starts at zero so a fresh adapter is an exact no-op.
struct LoraAdapter {
  Tensor a;  // [m, r]
  Tensor b;  // [r, n]
  std::size_t rank = 0;
  AdapterSite site{};

  std::size_t in_dim() const { return a.dim(0); }
  std::size_t out_dim() const { return b.dim(1); }
};

LoraAdapter init_lora(std::size_t m, std::size_t n, std::size_t r, Rng& rng);
LoraAdapter init_lora(std::size_t m, std::size_t n, std::size_t r,
                      std::uint64_t seed);

/// Width-restricted window into a teacher adapter at a fused-QKV site. Reads
/// slice the parent's storage at call time and gradients scatter back into
/// it, so the "student copy" can never diverge from the teacher's weights.
///
/// A keeps its first d_s rows; B keeps the first d_s columns of each of the
/// Q, K and V segments of its 3*d_t output.
struct SharedAdapterView {
  const LoraAdapter* parent = nullptr;
  std::size_t d_s = 0, d_t = 0;

  Tensor a() const;  // [d_s, r]
  Tensor b() const;  // [r, 3*d_s]
  std::size_t rank() const { return parent->rank; }
  /// Flat column indices of the parent's B selected by the view.
  std::vector<std::size_t> b_column_indices() const;
};

SharedAdapterView make_shared_view(const LoraAdapter& teacher_adapter,
                                   std::size_t d_s, std::size_t d_t);

/// Uniform handle the encoder binds per block: either a model's own adapter
/// or a shared view of another model's.
class QkvAdapterRef {
 public:
  QkvAdapterRef(const LoraAdapter& own) : ref_(&own) {}
  QkvAdapterRef(SharedAdapterView view) : ref_(view) {}

  Tensor a() const;
  Tensor b() const;
  std::size_t in_dim() const;
  std::size_t out_dim() const;
  /// Conventional alpha/r multiplier on the delta; 1.0 (off) keeps the
  /// plain W0 + A*B form.
  double delta_scale = 1.0;

 private:
  std::variant<const LoraAdapter*, SharedAdapterView> ref_;
};

using AdapterBindings = std::vector<std::optional<QkvAdapterRef>>;

/// x*W0 + (x*A)*B without materializing W0 + A*B.
Tensor lora_linear_forward(const Tensor& x, const Tensor& w0,
                           const QkvAdapterRef& adapter);

/// Dense W0 + A*B for export or adapter-free inference.
Tensor merge_weights(const Tensor& w0, const QkvAdapterRef& adapter);

/// One adapter per encoder block at the fused QKV projection.
struct LoraSet {
  std::vector<LoraAdapter> adapters;  // index == block
  double delta_scale = 1.0;

  AdapterBindings bindings() const;
  std::vector<Tensor> parameters() const;
  std::size_t rank() const {
    return adapters.empty() ? 0 : adapters.front().rank;
  }
};

LoraSet make_encoder_lora(std::size_t dim, std::size_t depth, std::size_t rank,
                          std::uint64_t seed);

/// Student bindings backed by the teacher's adapters through mapping g.
AdapterBindings shared_bindings(const LoraSet& teacher_lora,
                                const BlockMapping& mapping, std::size_t d_s,
                                std::size_t d_t);

}  // namespace slad
