#include "slad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "slad/linalg.hpp"

namespace slad {

using detail::adj_claim;
using detail::Adjoints;
using detail::GradVec;
using detail::make_op;
using detail::Node;
using detail::NodePtr;

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// [outer, axis_dim, inner] decomposition for axis-wise block copies.
struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// dst (+)= src elementwise; assign when the buffer is freshly claimed
void spread(double* dst, const double* src, std::size_t n, bool fresh) {
  if (fresh) {
    std::memcpy(dst, src, n * sizeof(double));
  } else {
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
  }
}

template <typename Fn>
void spread_fn(double* dst, std::size_t n, bool fresh, const Fn& fn) {
  if (fresh) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = fn(i);
  } else {
    for (std::size_t i = 0; i < n; ++i) dst[i] += fn(i);
  }
}

// Distributes independent per-item matrix products across threads; item
// outputs are disjoint so chunking is bitwise-neutral.
template <typename Fn>
void batched_gemm(std::size_t batch, std::size_t item_flops, const Fn& fn) {
  if (batch > 1 && batch * item_flops >= gemm_parallel_threshold()) {
    parallel_for(0, batch, 16, [&](std::size_t b0, std::size_t b1) {
      for (std::size_t i = b0; i < b1; ++i) fn(i);
    });
  } else {
    for (std::size_t i = 0; i < batch; ++i) fn(i);
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> v(a.size());
  std::span<const double> av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
  return make_op(
      "add", a.shape(), std::move(v), {a.node_ptr(), b.node_ptr()},
      [](const Node& self, const GradVec& g, Adjoints& adj) {
        for (int side = 0; side < 2; ++side) {
          const NodePtr& in = self.inputs[side];
          if (!in->requires_grad) continue;
          auto [buf, fresh] = adj_claim(adj, in);
          spread(buf->data(), g.data(), g.size(), fresh);
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> v(a.size());
  std::span<const double> av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
  return make_op(
      "sub", a.shape(), std::move(v), {a.node_ptr(), b.node_ptr()},
      [](const Node& self, const GradVec& g, Adjoints& adj) {
        if (self.inputs[0]->requires_grad) {
          auto [buf, fresh] = adj_claim(adj, self.inputs[0]);
          spread(buf->data(), g.data(), g.size(), fresh);
        }
        if (self.inputs[1]->requires_grad) {
          auto [buf, fresh] = adj_claim(adj, self.inputs[1]);
          spread_fn(buf->data(), g.size(), fresh,
                    [&](std::size_t i) { return -g[i]; });
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> v(a.size());
  std::span<const double> av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
  return make_op(
      "mul", a.shape(), std::move(v), {a.node_ptr(), b.node_ptr()},
      [](const Node& self, const GradVec& g, Adjoints& adj) {
        const NodePtr& na = self.inputs[0];
        const NodePtr& nb = self.inputs[1];
        if (na->requires_grad) {
          auto [buf, fresh] = adj_claim(adj, na);
          spread_fn(buf->data(), g.size(), fresh,
                    [&](std::size_t i) { return g[i] * nb->value[i]; });
        }
        if (nb->requires_grad) {
          auto [buf, fresh] = adj_claim(adj, nb);
          spread_fn(buf->data(), g.size(), fresh,
                    [&](std::size_t i) { return g[i] * na->value[i]; });
        }
      });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> v(a.size());
  std::span<const double> av = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * s;
  return make_op(
      "scale", a.shape(), std::move(v), {a.node_ptr()},
      [s](const Node& self, const GradVec& g, Adjoints& adj) {
        auto [buf, fresh] = adj_claim(adj, self.inputs[0]);
        spread_fn(buf->data(), g.size(), fresh,
                  [&](std::size_t i) { return g[i] * s; });
      });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> v(x.size());
  std::span<const double> xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
  }
  return make_op(
      "gelu", x.shape(), std::move(v), {x.node_ptr()},
      [](const Node& self, const GradVec& g, Adjoints& adj) {
        const NodePtr& in = self.inputs[0];
        auto [buf, fresh] = adj_claim(adj, in);
        spread_fn(buf->data(), g.size(), fresh, [&](std::size_t i) {
          double xi = in->value[i];
          double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
          double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
          return g[i] * (cdf + xi * pdf);
        });
      });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const Shape& xs = x.shape();
  const Shape& bs = bias.shape();
  if (bs.size() > xs.size() ||
      !std::equal(bs.rbegin(), bs.rend(), xs.rbegin())) {
    throw ShapeError("add_bias: bias " + shape_str(bs) +
                     " is not a trailing sub-shape of " + shape_str(xs));
  }
  std::size_t stride = shape_numel(bs);
  std::size_t repeats = x.size() / std::max<std::size_t>(stride, 1);
  std::vector<double> v(x.size());
  std::span<const double> xv = x.data(), bv = bias.data();
  for (std::size_t r = 0; r < repeats; ++r) {
    const double* xp = xv.data() + r * stride;
    double* vp = v.data() + r * stride;
    for (std::size_t i = 0; i < stride; ++i) vp[i] = xp[i] + bv[i];
  }
  return make_op(
      "add_bias", xs, std::move(v), {x.node_ptr(), bias.node_ptr()},
      [stride, repeats](const Node& self, const GradVec& g, Adjoints& adj) {
        if (self.inputs[0]->requires_grad) {
          auto [buf, fresh] = adj_claim(adj, self.inputs[0]);
          spread(buf->data(), g.data(), g.size(), fresh);
        }
        if (self.inputs[1]->requires_grad) {
          auto& buf = adj_buffer(adj, self.inputs[1]);
          for (std::size_t r = 0; r < repeats; ++r) {
            const double* gp = g.data() + r * stride;
            for (std::size_t i = 0; i < stride; ++i) buf[i] += gp[i];
          }
        }
      });
}

namespace {

struct MatmulDims {
  std::size_t batch = 1;  // product of leading axes
  std::size_t m = 0, k = 0, n = 0;
  bool b_is_2d = false;
};

MatmulDims matmul_dims(const char* op, const Tensor& a, const Tensor& b,
                       bool b_transposed) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.empty() || bs.size() < 2) {
    throw ShapeError(std::string(op) + ": unsupported shapes " +
                     shape_str(as) + " vs " + shape_str(bs));
  }
  MatmulDims d;
  if (bs.size() == 2 && !b_transposed) {
    d.b_is_2d = true;
    d.k = bs[0];
    d.n = bs[1];
    if (as.back() != d.k) {
      throw ShapeError(std::string(op) + ": inner dimensions disagree, " +
                       shape_str(as) + " vs " + shape_str(bs));
    }
    d.m = a.size() / d.k;
    return d;
  }
  if (as.size() != bs.size() || as.size() < 2) {
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(as) +
                     " vs " + shape_str(bs));
  }
  for (std::size_t i = 0; i + 2 < as.size(); ++i) {
    if (as[i] != bs[i]) {
      throw ShapeError(std::string(op) + ": batch dims disagree, " +
                       shape_str(as) + " vs " + shape_str(bs));
    }
    d.batch *= as[i];
  }
  d.m = as[as.size() - 2];
  d.k = as.back();
  if (b_transposed) {
    d.n = bs[bs.size() - 2];
    if (bs.back() != d.k) {
      throw ShapeError(std::string(op) + ": inner dimensions disagree, " +
                       shape_str(as) + " vs " + shape_str(bs));
    }
  } else {
    d.n = bs.back();
    if (bs[bs.size() - 2] != d.k) {
      throw ShapeError(std::string(op) + ": inner dimensions disagree, " +
                       shape_str(as) + " vs " + shape_str(bs));
    }
  }
  return d;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  MatmulDims d = matmul_dims("matmul", a, b, false);
  Shape out_shape = a.shape();
  out_shape.back() = d.n;
  std::vector<double> v(shape_numel(out_shape));
  if (d.b_is_2d) {
    gemm_nn(d.m, d.k, d.n, a.data().data(), b.data().data(), v.data(), false);
  } else {
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    double* vp = v.data();
    batched_gemm(d.batch, d.m * d.k * d.n, [=](std::size_t i) {
      gemm_nn(d.m, d.k, d.n, ap + i * d.m * d.k, bp + i * d.k * d.n,
              vp + i * d.m * d.n, false);
    });
  }
  return make_op(
      "matmul", std::move(out_shape), std::move(v),
      {a.node_ptr(), b.node_ptr()},
      [d](const Node& self, const GradVec& g, Adjoints& adj) {
        const NodePtr& na = self.inputs[0];
        const NodePtr& nb = self.inputs[1];
        if (d.b_is_2d) {
          if (na->requires_grad) {
            auto [da, fresh] = adj_claim(adj, na);
            gemm_nt(d.m, d.n, d.k, g.data(), nb->value.data(), da->data(),
                    !fresh);
          }
          if (nb->requires_grad) {
            auto [db, fresh] = adj_claim(adj, nb);
            gemm_tn(d.m, d.k, d.n, na->value.data(), g.data(), db->data(),
                    !fresh);
          }
          return;
        }
        if (na->requires_grad) {
          auto [da, fresh] = adj_claim(adj, na);
          double* dap = da->data();
          batched_gemm(d.batch, d.m * d.n * d.k, [&, dap](std::size_t i) {
            gemm_nt(d.m, d.n, d.k, g.data() + i * d.m * d.n,
                    nb->value.data() + i * d.k * d.n, dap + i * d.m * d.k,
                    !fresh);
          });
        }
        if (nb->requires_grad) {
          auto [db, fresh] = adj_claim(adj, nb);
          double* dbp = db->data();
          batched_gemm(d.batch, d.m * d.k * d.n, [&, dbp](std::size_t i) {
            gemm_tn(d.m, d.k, d.n, na->value.data() + i * d.m * d.k,
                    g.data() + i * d.m * d.n, dbp + i * d.k * d.n, !fresh);
          });
        }
      });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  MatmulDims d = matmul_dims("matmul_nt", a, b, true);
  Shape out_shape = a.shape();
  out_shape.back() = d.n;
  std::vector<double> v(shape_numel(out_shape));
  {
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    double* vp = v.data();
    batched_gemm(d.batch, d.m * d.k * d.n, [=](std::size_t i) {
      gemm_nt(d.m, d.k, d.n, ap + i * d.m * d.k, bp + i * d.n * d.k,
              vp + i * d.m * d.n, false);
    });
  }
  return make_op(
      "matmul_nt", std::move(out_shape), std::move(v),
      {a.node_ptr(), b.node_ptr()},
      [d](const Node& self, const GradVec& g, Adjoints& adj) {
        const NodePtr& na = self.inputs[0];
        const NodePtr& nb = self.inputs[1];
        if (na->requires_grad) {
          auto [da, fresh] = adj_claim(adj, na);
          double* dap = da->data();
          batched_gemm(d.batch, d.m * d.n * d.k, [&, dap](std::size_t i) {
            gemm_nn(d.m, d.n, d.k, g.data() + i * d.m * d.n,
                    nb->value.data() + i * d.n * d.k, dap + i * d.m * d.k,
                    !fresh);
          });
        }
        if (nb->requires_grad) {
          auto [db, fresh] = adj_claim(adj, nb);
          double* dbp = db->data();
          batched_gemm(d.batch, d.m * d.n * d.k, [&, dbp](std::size_t i) {
            gemm_tn(d.m, d.n, d.k, g.data() + i * d.m * d.n,
                    na->value.data() + i * d.m * d.k, dbp + i * d.n * d.k,
                    !fresh);
          });
        }
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<double> v(x.data().begin(), x.data().end());
  return make_op(
      "reshape", std::move(shape), std::move(v), {x.node_ptr()},
      [](const Node& self, const GradVec& g, Adjoints& adj) {
        auto [buf, fresh] = adj_claim(adj, self.inputs[0]);
        spread(buf->data(), g.data(), g.size(), fresh);
      });
}

namespace {

// dst[perm(idx)] = src[idx] realized as a strided copy.
void permute_raw(const Shape& in_shape, const std::vector<std::size_t>& perm,
                 const double* src, double* dst, bool accumulate) {
  std::size_t nd = in_shape.size();
  Shape out_shape(nd);
  for (std::size_t i = 0; i < nd; ++i) out_shape[i] = in_shape[perm[i]];
  std::vector<std::size_t> in_strides(nd, 1);
  for (std::size_t i = nd; i-- > 1;) {
    in_strides[i - 1] = in_strides[i] * in_shape[i];
  }
  // walk the output in order; map each output index back to the input
  std::vector<std::size_t> src_stride_for_out(nd);
  for (std::size_t i = 0; i < nd; ++i)
    src_stride_for_out[i] = in_strides[perm[i]];
  std::size_t total = shape_numel(in_shape);
  std::vector<std::size_t> idx(nd, 0);
  std::size_t src_off = 0;
  for (std::size_t o = 0; o < total; ++o) {
    if (accumulate) {
      dst[o] += src[src_off];
    } else {
      dst[o] = src[src_off];
    }
    for (std::size_t i = nd; i-- > 0;) {
      if (++idx[i] < out_shape[i]) {
        src_off += src_stride_for_out[i];
        break;
      }
      idx[i] = 0;
      src_off -= src_stride_for_out[i] * (out_shape[i] - 1);
    }
  }
}

std::vector<std::size_t> inverse_perm(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const Shape& xs = x.shape();
  if (perm.size() != xs.size()) {
    throw ShapeError("permute: order size " + std::to_string(perm.size()) +
                     " vs rank " + std::to_string(xs.size()));
  }
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || seen[p]) {
      throw ValueError("permute: invalid axis order");
    }
    seen[p] = true;
  }
  Shape out_shape(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out_shape[i] = xs[perm[i]];
  std::vector<double> v(x.size());
  permute_raw(xs, perm, x.data().data(), v.data(), false);
  return make_op(
      "permute", std::move(out_shape), std::move(v), {x.node_ptr()},
      [perm](const Node& self, const GradVec& g, Adjoints& adj) {
        auto [buf, fresh] = adj_claim(adj, self.inputs[0]);
        // adjoint flows through the inverse permutation
        permute_raw(self.shape, inverse_perm(perm), g.data(), buf->data(),
                    !fresh);
      });
}

Tensor transpose(const Tensor& x) {
  if (x.ndim() < 2) {
    throw ShapeError("transpose: needs at least 2 axes, got " +
                     shape_str(x.shape()));
  }
  std::vector<std::size_t> perm(x.ndim());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, perm);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ValueError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(ref));
  }
  Shape out_shape = ref;
  std::size_t axis_total = 0;
  for (const Tensor& p : parts) {
    const Shape& ps = p.shape();
    if (ps.size() != ref.size()) {
      throw ShapeError("concat: rank mismatch " + shape_str(ref) + " vs " +
                       shape_str(ps));
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (i != axis && ps[i] != ref[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(ref) + " vs " +
                         shape_str(ps));
      }
    }
    axis_total += ps[axis];
  }
  out_shape[axis] = axis_total;

  AxisSplit out_split = split_at(out_shape, axis);
  std::vector<double> v(shape_numel(out_shape));
  std::vector<NodePtr> inputs;
  std::vector<std::size_t> part_axis;
  inputs.reserve(parts.size());
  std::size_t axis_off = 0;
  for (const Tensor& p : parts) {
    std::size_t pa = p.dim(axis);
    AxisSplit ps = split_at(p.shape(), axis);
    const double* src = p.data().data();
    for (std::size_t o = 0; o < ps.outer; ++o) {
      double* dst =
          v.data() + (o * out_split.axis + axis_off) * out_split.inner;
      std::memcpy(dst, src + o * ps.axis * ps.inner,
                  ps.axis * ps.inner * sizeof(double));
    }
    axis_off += pa;
    inputs.push_back(p.node_ptr());
    part_axis.push_back(pa);
  }
  return make_op(
      "concat", std::move(out_shape), std::move(v), std::move(inputs),
      [axis, part_axis, out_split](const Node& self, const GradVec& g,
                                   Adjoints& adj) {
        std::size_t axis_off = 0;
        for (std::size_t pi = 0; pi < self.inputs.size(); ++pi) {
          const NodePtr& in = self.inputs[pi];
          std::size_t pa = part_axis[pi];
          if (in->requires_grad) {
            auto [buf, fresh] = adj_claim(adj, in);
            AxisSplit ps = split_at(in->shape, axis);
            for (std::size_t o = 0; o < ps.outer; ++o) {
              const double* src =
                  g.data() + (o * out_split.axis + axis_off) * out_split.inner;
              spread(buf->data() + o * ps.axis * ps.inner, src,
                     ps.axis * ps.inner, fresh);
            }
          }
          axis_off += pa;
        }
      });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end) {
  const Shape& xs = x.shape();
  if (axis >= xs.size()) {
    throw ShapeError("slice: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(xs));
  }
  if (begin >= end || end > xs[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for axis size " +
                     std::to_string(xs[axis]));
  }
  Shape out_shape = xs;
  out_shape[axis] = end - begin;
  AxisSplit in_split = split_at(xs, axis);
  std::size_t span = end - begin;
  std::vector<double> v(shape_numel(out_shape));
  const double* src = x.data().data();
  for (std::size_t o = 0; o < in_split.outer; ++o) {
    std::memcpy(v.data() + o * span * in_split.inner,
                src + (o * in_split.axis + begin) * in_split.inner,
                span * in_split.inner * sizeof(double));
  }
  return make_op(
      "slice", std::move(out_shape), std::move(v), {x.node_ptr()},
      [in_split, begin, span](const Node& self, const GradVec& g,
                              Adjoints& adj) {
        // the parent adjoint must be zero outside the slice, so the slice
        // backward always works against a zeroed buffer
        auto& buf = adj_buffer(adj, self.inputs[0]);
        for (std::size_t o = 0; o < in_split.outer; ++o) {
          const double* src = g.data() + o * span * in_split.inner;
          double* dst =
              buf.data() + (o * in_split.axis + begin) * in_split.inner;
          for (std::size_t i = 0; i < span * in_split.inner; ++i)
            dst[i] += src[i];
        }
      });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_op(
      "sum", {1}, {s}, {x.node_ptr()},
      [](const Node& self, const GradVec& g, Adjoints& adj) {
        auto [buf, fresh] = adj_claim(adj, self.inputs[0]);
        spread_fn(buf->data(), buf->size(), fresh,
                  [&](std::size_t) { return g[0]; });
      });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ValueError("mean: empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  double inv = 1.0 / static_cast<double>(x.size());
  return make_op(
      "mean", {1}, {s * inv}, {x.node_ptr()},
      [inv](const Node& self, const GradVec& g, Adjoints& adj) {
        auto [buf, fresh] = adj_claim(adj, self.inputs[0]);
        double gg = g[0] * inv;
        spread_fn(buf->data(), buf->size(), fresh,
                  [&](std::size_t) { return gg; });
      });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.ndim() != 2) {
    throw ShapeError("gather_rows: table must be 2-d, got " +
                     shape_str(table.shape()));
  }
  std::size_t rows = table.dim(0), width = table.dim(1);
  std::vector<double> v(ids.size() * width);
  const double* src = table.data().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      throw DataError("gather_rows: id " + std::to_string(ids[i]) +
                      " out of range for " + std::to_string(rows) + " rows");
    }
    std::memcpy(v.data() + i * width, src + ids[i] * width,
                width * sizeof(double));
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return make_op(
      "gather_rows", {ids.size(), width}, std::move(v), {table.node_ptr()},
      [idv, width](const Node& self, const GradVec& g, Adjoints& adj) {
        // repeated ids accumulate; rows never gathered must stay zero
        auto& buf = adj_buffer(adj, self.inputs[0]);
        for (std::size_t i = 0; i < idv.size(); ++i) {
          const double* src = g.data() + i * width;
          double* dst = buf.data() + idv[i] * width;
          for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
        }
      });
}

Tensor softmax_temperature(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) {
    throw ValueError(
        "softmax_temperature: temperature must be positive, got " +
        std::to_string(temperature));
  }
  if (logits.ndim() == 0 || logits.size() == 0) {
    throw ShapeError("softmax_temperature: empty input");
  }
  std::size_t width = logits.shape().back();
  std::size_t rows = logits.size() / width;
  std::vector<double> v(logits.size());
  const double* src = logits.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = src + r * width;
    double* y = v.data() + r * width;
    double mx = x[0];
    for (std::size_t i = 1; i < width; ++i) mx = std::max(mx, x[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      y[i] = std::exp((x[i] - mx) / temperature);
      total += y[i];
    }
    double inv = 1.0 / total;
    for (std::size_t i = 0; i < width; ++i) y[i] *= inv;
  }
  double inv_t = 1.0 / temperature;
  return make_op(
      "softmax_temperature", logits.shape(), std::move(v), {logits.node_ptr()},
      [width, rows, inv_t](const Node& self, const GradVec& g, Adjoints& adj) {
        auto [buf, fresh] = adj_claim(adj, self.inputs[0]);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = self.value.data() + r * width;
          const double* gr = g.data() + r * width;
          double dot = 0.0;
          for (std::size_t i = 0; i < width; ++i) dot += gr[i] * y[i];
          spread_fn(buf->data() + r * width, width, fresh, [&](std::size_t i) {
            return inv_t * y[i] * (gr[i] - dot);
          });
        }
      });
}

Tensor log_softmax(const Tensor& logits) {
  if (logits.ndim() == 0 || logits.size() == 0) {
    throw ShapeError("log_softmax: empty input");
  }
  std::size_t width = logits.shape().back();
  std::size_t rows = logits.size() / width;
  std::vector<double> v(logits.size());
  const double* src = logits.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = src + r * width;
    double* y = v.data() + r * width;
    double mx = x[0];
    for (std::size_t i = 1; i < width; ++i) mx = std::max(mx, x[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < width; ++i) total += std::exp(x[i] - mx);
    double lse = mx + std::log(total);
    for (std::size_t i = 0; i < width; ++i) y[i] = x[i] - lse;
  }
  return make_op(
      "log_softmax", logits.shape(), std::move(v), {logits.node_ptr()},
      [width, rows](const Node& self, const GradVec& g, Adjoints& adj) {
        auto [buf, fresh] = adj_claim(adj, self.inputs[0]);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = self.value.data() + r * width;
          const double* gr = g.data() + r * width;
          double gsum = 0.0;
          for (std::size_t i = 0; i < width; ++i) gsum += gr[i];
          spread_fn(buf->data() + r * width, width, fresh, [&](std::size_t i) {
            return gr[i] - std::exp(y[i]) * gsum;
          });
        }
      });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps) {
  if (x.ndim() == 0) throw ShapeError("layernorm: empty input");
  std::size_t width = x.shape().back();
  if (gamma.shape() != Shape{width} || beta.shape() != Shape{width}) {
    throw ShapeError("layernorm: gamma " + shape_str(gamma.shape()) +
                     " / beta " + shape_str(beta.shape()) +
                     " must both be [" + std::to_string(width) + "]");
  }
  std::size_t rows = x.size() / width;
  std::vector<double> v(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  const double* src = x.data().data();
  const double* gm = gamma.data().data();
  const double* bt = beta.data().data();
  double inv_w = 1.0 / static_cast<double>(width);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = src + r * width;
    double mu = 0.0;
    for (std::size_t i = 0; i < width; ++i) mu += xr[i];
    mu *= inv_w;
    double var = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      double d = xr[i] - mu;
      var += d * d;
    }
    var *= inv_w;
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    double* xh = xhat.data() + r * width;
    double* y = v.data() + r * width;
    for (std::size_t i = 0; i < width; ++i) {
      xh[i] = (xr[i] - mu) * inv;
      y[i] = gm[i] * xh[i] + bt[i];
    }
  }
  return make_op(
      "layernorm", x.shape(), std::move(v),
      {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
      [width, rows, xhat = std::move(xhat), inv_std = std::move(inv_std),
       inv_w](const Node& self, const GradVec& g, Adjoints& adj) {
        const NodePtr& nx = self.inputs[0];
        const NodePtr& ng = self.inputs[1];
        const NodePtr& nb = self.inputs[2];
        const double* gm = ng->value.data();
        if (nx->requires_grad) {
          auto [buf, fresh] = adj_claim(adj, nx);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.data() + r * width;
            const double* xh = xhat.data() + r * width;
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t i = 0; i < width; ++i) {
              double gg = gr[i] * gm[i];
              m1 += gg;
              m2 += gg * xh[i];
            }
            m1 *= inv_w;
            m2 *= inv_w;
            double inv = inv_std[r];
            spread_fn(buf->data() + r * width, width, fresh,
                      [&](std::size_t i) {
                        return inv * (gr[i] * gm[i] - m1 - xh[i] * m2);
                      });
          }
        }
        if (ng->requires_grad) {
          auto& buf = adj_buffer(adj, ng);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.data() + r * width;
            const double* xh = xhat.data() + r * width;
            for (std::size_t i = 0; i < width; ++i) buf[i] += gr[i] * xh[i];
          }
        }
        if (nb->requires_grad) {
          auto& buf = adj_buffer(adj, nb);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.data() + r * width;
            for (std::size_t i = 0; i < width; ++i) buf[i] += gr[i];
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul(x, w), b);
}

}  // namespace slad
