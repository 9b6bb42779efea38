#include "slad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace slad {

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

GradVec* Adjoints::find(const Node* n) {
  auto it = buf_.find(n);
  if (it == buf_.end() || !it->second.written) return nullptr;
  return &it->second.v;
}

GradVec& Adjoints::buffer(const Node* n, std::size_t size) {
  auto [it, inserted] = buf_.try_emplace(n);
  Slot& slot = it->second;
  if (inserted || !slot.written) {
    slot.v.resize(size);
    std::memset(slot.v.data(), 0, size * sizeof(double));
    slot.written = true;
  }
  return slot.v;
}

std::pair<GradVec*, bool> Adjoints::claim(const Node* n, std::size_t size) {
  auto [it, inserted] = buf_.try_emplace(n);
  Slot& slot = it->second;
  bool fresh = inserted || !slot.written;
  if (fresh) {
    slot.v.resize(size);  // uninitialized storage; the caller assigns
    slot.written = true;
  }
  return {&slot.v, fresh};
}

GradVec& adj_buffer(Adjoints& adj, const NodePtr& input) {
  return adj.buffer(input.get(), input->value.size());
}

std::pair<GradVec*, bool> adj_claim(Adjoints& adj, const NodePtr& input) {
  return adj.claim(input.get(), input->value.size());
}

Tensor make_op(const char* name, Shape shape, std::vector<double> value,
               std::vector<NodePtr> inputs, BackpropFn backprop) {
  auto node = std::make_shared<Node>();
  if (value.size() != shape_numel(shape)) {
    throw ShapeError(std::string("make_op(") + name + "): value size " +
                     std::to_string(value.size()) + " does not match shape " +
                     shape_str(shape));
  }
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = name;
  bool rg = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) rg = rg || in->requires_grad;
  }
  node->requires_grad = rg;
  if (rg) {
    node->inputs = std::move(inputs);
    node->backprop = std::move(backprop);
  }
  return Tensor::from_node(std::move(node));
}

}  // namespace detail

NoGradGuard::NoGradGuard() : prev_(detail::g_grad_enabled) {
  detail::g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = prev_; }

Tensor Tensor::from_node(detail::NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->value.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return from_node(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("from_data: " + std::to_string(data.size()) +
                     " values for shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return from_node(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return from_data(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                            bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return from_data(std::move(shape), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ValueError("shape() on undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("dim(" + std::to_string(axis) + ") on shape " +
                     shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return node_->value;
}

std::span<double> Tensor::data_mut() {
  if (!node_) throw ValueError("data_mut() on undefined tensor");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() requires a scalar tensor, got shape " +
                     shape_str(shape()));
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
  if (!node_) throw ValueError("set_requires_grad() on undefined tensor");
  node_->requires_grad = rg;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

detail::GradVec& Tensor::grad_mut() {
  if (!node_) throw ValueError("grad_mut() on undefined tensor");
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

Tensor Tensor::detach() const {
  if (!node_) return {};
  return from_data(node_->shape, node_->value, false);
}

const char* Tensor::op() const { return node_ ? node_->op : "undefined"; }

std::vector<Tensor> Tensor::inputs() const {
  std::vector<Tensor> out;
  if (node_) {
    out.reserve(node_->inputs.size());
    for (const auto& in : node_->inputs) out.push_back(from_node(in));
  }
  return out;
}

Trace Trace::record(const Tensor& root) {
  Trace trace;
  if (!root.defined() || !root.requires_grad()) return trace;

  // Iterative post-order DFS over grad-requiring nodes.
  struct Frame {
    detail::NodePtr node;
    std::size_t next_input = 0;
  };
  std::unordered_map<const detail::Node*, bool> visited;
  std::vector<Frame> frames;
  frames.push_back({root.node_ptr(), 0});
  visited[root.node()] = true;
  while (!frames.empty()) {
    Frame& f = frames.back();
    bool descended = false;
    while (f.next_input < f.node->inputs.size()) {
      const detail::NodePtr& in = f.node->inputs[f.next_input++];
      if (!in->requires_grad || visited.count(in.get())) continue;
      visited[in.get()] = true;
      frames.push_back({in, 0});
      descended = true;
      break;
    }
    if (descended) continue;
    trace.order_.push_back(f.node.get());
    trace.keep_alive_.push_back(std::move(f.node));
    frames.pop_back();
  }
  return trace;
}

bool Trace::topologically_sorted() const {
  std::unordered_map<const detail::Node*, std::size_t> pos;
  for (std::size_t i = 0; i < order_.size(); ++i) pos[order_[i]] = i;
  for (std::size_t i = 0; i < order_.size(); ++i) {
    for (const auto& in : order_[i]->inputs) {
      if (!in->requires_grad) continue;
      auto it = pos.find(in.get());
      if (it == pos.end() || it->second >= i) return false;
    }
  }
  return true;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ValueError("backward: loss must be a scalar tensor, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) {
    throw ValueError(
        "backward: loss does not require grad (no trace recorded)");
  }
  Trace trace = Trace::record(loss);
  detail::Adjoints adj;
  adj.buffer(loss.node(), 1)[0] = 1.0;

  const auto& order = trace.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backprop) continue;
    const detail::GradVec* g = adj.find(node);
    if (!g) continue;
    node->backprop(*node, *g, adj);
  }
  for (detail::Node* node : order) {
    detail::GradVec* g = adj.find(node);
    if (!g) continue;
    if (node->grad.empty()) {
      node->grad = std::move(*g);  // first populate: adopt the buffer
    } else {
      for (std::size_t i = 0; i < g->size(); ++i) node->grad[i] += (*g)[i];
    }
  }
}

void zero_grads(std::span<Tensor> params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace slad
