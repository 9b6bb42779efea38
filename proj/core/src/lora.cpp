#include "slad/lora.hpp"

#include <cmath>

namespace slad {

LoraAdapter init_lora(std::size_t m, std::size_t n, std::size_t r, Rng& rng) {
  if (r < 1 || r > std::min(m, n)) {
    throw ValueError("init_lora: rank " + std::to_string(r) +
                     " out of range for " + std::to_string(m) + "x" +
                     std::to_string(n));
  }
  LoraAdapter ad;
  ad.rank = r;
  // Kaiming uniform, gain sqrt(2), fan_in = m: bound = sqrt(6/m)
  double bound = std::sqrt(6.0 / static_cast<double>(m));
  ad.a = Tensor::rand_uniform({m, r}, rng, -bound, bound, true);
  ad.b = Tensor::zeros({r, n}, true);
  return ad;
}

LoraAdapter init_lora(std::size_t m, std::size_t n, std::size_t r,
                      std::uint64_t seed) {
  Rng rng(seed);
  return init_lora(m, n, r, rng);
}

Tensor SharedAdapterView::a() const { return slice(parent->a, 0, 0, d_s); }

Tensor SharedAdapterView::b() const {
  Tensor parts[3] = {
      slice(parent->b, 1, 0, d_s),
      slice(parent->b, 1, d_t, d_t + d_s),
      slice(parent->b, 1, 2 * d_t, 2 * d_t + d_s),
  };
  return concat(parts, 1);
}

std::vector<std::size_t> SharedAdapterView::b_column_indices() const {
  std::vector<std::size_t> cols;
  cols.reserve(3 * d_s);
  for (std::size_t seg = 0; seg < 3; ++seg) {
    for (std::size_t j = 0; j < d_s; ++j) cols.push_back(seg * d_t + j);
  }
  return cols;
}

SharedAdapterView make_shared_view(const LoraAdapter& teacher_adapter,
                                   std::size_t d_s, std::size_t d_t) {
  if (d_s > d_t) {
    throw ShapeError("make_shared_view: student width " + std::to_string(d_s) +
                     " exceeds teacher width " + std::to_string(d_t));
  }
  if (teacher_adapter.site.kind != AdapterSiteKind::FusedQkv ||
      teacher_adapter.out_dim() != 3 * d_t ||
      teacher_adapter.in_dim() != d_t) {
    throw BindingError(
        "make_shared_view: adapter is not a fused QKV site of width " +
        std::to_string(d_t) + " (A " + shape_str(teacher_adapter.a.shape()) +
        ", B " + shape_str(teacher_adapter.b.shape()) + ")");
  }
  SharedAdapterView view;
  view.parent = &teacher_adapter;
  view.d_s = d_s;
  view.d_t = d_t;
  return view;
}

Tensor QkvAdapterRef::a() const {
  if (const auto* own = std::get_if<const LoraAdapter*>(&ref_)) {
    return (*own)->a;
  }
  return std::get<SharedAdapterView>(ref_).a();
}

Tensor QkvAdapterRef::b() const {
  if (const auto* own = std::get_if<const LoraAdapter*>(&ref_)) {
    return (*own)->b;
  }
  return std::get<SharedAdapterView>(ref_).b();
}

std::size_t QkvAdapterRef::in_dim() const {
  if (const auto* own = std::get_if<const LoraAdapter*>(&ref_)) {
    return (*own)->in_dim();
  }
  return std::get<SharedAdapterView>(ref_).d_s;
}

std::size_t QkvAdapterRef::out_dim() const {
  if (const auto* own = std::get_if<const LoraAdapter*>(&ref_)) {
    return (*own)->out_dim();
  }
  return 3 * std::get<SharedAdapterView>(ref_).d_s;
}

Tensor lora_linear_forward(const Tensor& x, const Tensor& w0,
                           const QkvAdapterRef& adapter) {
  if (w0.ndim() != 2 || x.shape().back() != w0.dim(0)) {
    throw ShapeError("lora_linear_forward: x " + shape_str(x.shape()) +
                     " does not match W0 " + shape_str(w0.shape()));
  }
  if (adapter.in_dim() != w0.dim(0) || adapter.out_dim() != w0.dim(1)) {
    throw BindingError("lora_linear_forward: adapter " +
                       std::to_string(adapter.in_dim()) + "->" +
                       std::to_string(adapter.out_dim()) +
                       " does not match W0 " + shape_str(w0.shape()));
  }
  Tensor delta = matmul(matmul(x, adapter.a()), adapter.b());
  if (adapter.delta_scale != 1.0) delta = scale(delta, adapter.delta_scale);
  return add(matmul(x, w0), delta);
}

Tensor merge_weights(const Tensor& w0, const QkvAdapterRef& adapter) {
  if (w0.ndim() != 2 || adapter.in_dim() != w0.dim(0) ||
      adapter.out_dim() != w0.dim(1)) {
    throw ShapeError("merge_weights: adapter does not match W0 " +
                     shape_str(w0.shape()));
  }
  Tensor delta = matmul(adapter.a(), adapter.b());
  if (adapter.delta_scale != 1.0) delta = scale(delta, adapter.delta_scale);
  return add(w0, delta);
}

AdapterBindings LoraSet::bindings() const {
  AdapterBindings out(adapters.size());
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    QkvAdapterRef ref(adapters[i]);
    ref.delta_scale = delta_scale;
    out[i] = ref;
  }
  return out;
}

std::vector<Tensor> LoraSet::parameters() const {
  std::vector<Tensor> out;
  out.reserve(2 * adapters.size());
  for (const LoraAdapter& ad : adapters) {
    out.push_back(ad.a);
    out.push_back(ad.b);
  }
  return out;
}

LoraSet make_encoder_lora(std::size_t dim, std::size_t depth, std::size_t rank,
                          std::uint64_t seed) {
  Rng rng(seed);
  LoraSet set;
  set.adapters.reserve(depth);
  for (std::size_t i = 0; i < depth; ++i) {
    LoraAdapter ad = init_lora(dim, 3 * dim, rank, rng);
    ad.site = AdapterSite{i, AdapterSiteKind::FusedQkv};
    set.adapters.push_back(std::move(ad));
  }
  return set;
}

AdapterBindings shared_bindings(const LoraSet& teacher_lora,
                                const BlockMapping& mapping, std::size_t d_s,
                                std::size_t d_t) {
  AdapterBindings out(mapping.student_depth());
  for (std::size_t i = 0; i < mapping.student_depth(); ++i) {
    std::size_t tb = mapping(i);
    if (tb >= teacher_lora.adapters.size()) {
      throw ConfigError("shared_bindings: mapping targets block " +
                        std::to_string(tb) + " but the teacher has " +
                        std::to_string(teacher_lora.adapters.size()) +
                        " adapters");
    }
    QkvAdapterRef ref(make_shared_view(teacher_lora.adapters[tb], d_s, d_t));
    ref.delta_scale = teacher_lora.delta_scale;
    out[i] = ref;
  }
  return out;
}

}  // namespace slad
