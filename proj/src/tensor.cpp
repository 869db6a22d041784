#include "cdcl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "cdcl/errors.hpp"

namespace cdcl {

namespace {

thread_local bool grad_enabled = true;
std::atomic<std::uint64_t> next_graph_id{1};

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

bool GradMode::is_enabled() { return grad_enabled; }
void GradMode::set_enabled(bool enabled) { grad_enabled = enabled; }

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  if (!node_) throw ContractError("use of undefined tensor");
  if (!node_->is_leaf) throw ContractError("cannot write values of a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->is_leaf; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

std::uint64_t Tensor::graph_id() const { return node_ ? node_->graph_id : 0; }

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const {
  return from(shape(), node_->value, requires_grad);
}

Tensor make_op_result(Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->is_leaf = false;

  bool track = false;
  if (GradMode::is_enabled()) {
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    node->backward_fn = std::move(backward);
    std::uint64_t gid = 0;
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) {
      if (in.node()->consumed) {
        throw ContractError("operation consumes a tensor whose graph was already back-propagated");
      }
      if (gid == 0) gid = in.node()->graph_id;
      node->parents.push_back(in.node());
    }
    node->graph_id = gid ? gid : next_graph_id.fetch_add(1);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  auto root = loss.node();
  if (root->consumed) throw ContractError("second backward pass over the same graph");
  if (!root->requires_grad) {
    throw ContractError("loss does not depend on any tensor that requires gradients");
  }

  // Iterative post-order DFS over interior nodes.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  if (!root->is_leaf) {
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
  }
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->is_leaf || !p->requires_grad || seen.count(p)) continue;
      if (p->consumed) throw ContractError("second backward pass over the same graph");
      seen.insert(p);
      stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (auto* n : order) {
    n->consumed = true;
    n->backward_fn = nullptr;
    n->parents.clear();
  }
}

}  // namespace cdcl
