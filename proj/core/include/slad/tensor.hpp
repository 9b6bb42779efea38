#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "slad/common.hpp"

namespace slad {

class Tensor;

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Allocator whose resize leaves new doubles uninitialized; adjoint buffers
/// are fully written by their first contributor, so zero-filling them first
/// would only add a memory pass.
template <typename T>
struct DefaultInitAlloc : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAlloc<U>;
  };
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0) {
      ::new (static_cast<void*>(p)) U;
    } else {
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
  }
};

using GradVec = std::vector<double, DefaultInitAlloc<double>>;

/// Per-sweep adjoint buffers. Intermediate adjoints live here during one
/// backward call and are folded into Node::grad at the end, so repeated
/// backward calls accumulate instead of double-counting.
///
/// The first contributor to a buffer may assign instead of accumulate;
/// claim() hands out the buffer together with that freshness bit so closures
/// skip the zero-fill and the read half of `+=` on the common single-writer
/// path.
class Adjoints {
 public:
  GradVec* find(const Node* n);
  /// Zero-initialized buffer (always safe to accumulate into).
  GradVec& buffer(const Node* n, std::size_t size);
  /// Uninitialized on first claim; `fresh` tells the caller to assign.
  std::pair<GradVec*, bool> claim(const Node* n, std::size_t size);

 private:
  struct Slot {
    GradVec v;
    bool written = false;
  };
  std::unordered_map<const Node*, Slot> buf_;
};

using BackpropFn = std::function<void(const Node& self,
                                      const GradVec& out_adj, Adjoints& adj)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  GradVec grad;  // accumulated across backward calls
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  BackpropFn backprop;
};

bool grad_enabled();

}  // namespace detail

/// RAII guard that disables trace recording; forwards executed under the
/// guard produce constant tensors.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Dense row-major f64 tensor with reverse-mode differentiation. Copying a
/// Tensor copies the handle; ops create fresh nodes that record their inputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                             bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> data_mut();
  double item() const;  // scalar tensors only

  bool requires_grad() const;
  void set_requires_grad(bool rg);

  bool has_grad() const;
  std::span<const double> grad() const;
  detail::GradVec& grad_mut();  // allocates zeros when absent
  void zero_grad();

  /// Value copy detached from the trace.
  Tensor detach() const;

  /// Storage identity; parameters are deduplicated by node pointer.
  detail::Node* node() const { return node_.get(); }
  detail::NodePtr node_ptr() const { return node_; }
  const char* op() const;
  std::vector<Tensor> inputs() const;

  static Tensor from_node(detail::NodePtr node);

 private:
  detail::NodePtr node_;
};

/// Topologically ordered record of the operations reaching `root`; replaying
/// it in reverse drives the adjoint sweep.
class Trace {
 public:
  static Trace record(const Tensor& root);
  const std::vector<detail::Node*>& order() const { return order_; }
  /// True when every node appears after all of its recorded inputs.
  bool topologically_sorted() const;

 private:
  std::vector<detail::Node*> order_;
  std::vector<detail::NodePtr> keep_alive_;
};

/// Accumulates adjoints into the grad of every reachable requires_grad
/// tensor. The loss must be scalar. Calling twice doubles every grad.
void backward(const Tensor& loss);

void zero_grads(std::span<Tensor> params);

namespace detail {
/// Builds an op node. Inputs and the backprop closure are dropped when no
/// input requires grad or recording is disabled.
Tensor make_op(const char* name, Shape shape, std::vector<double> value,
               std::vector<NodePtr> inputs, BackpropFn backprop);
GradVec& adj_buffer(Adjoints& adj, const NodePtr& input);
/// First-writer variant; see Adjoints::claim.
std::pair<GradVec*, bool> adj_claim(Adjoints& adj, const NodePtr& input);
}  // namespace detail

}  // namespace slad
