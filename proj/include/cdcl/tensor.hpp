#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cdcl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the reverse-mode tape. Interior nodes hold their parents and
// a backward rule; leaves hold neither. The tape is released once backward
// has run through a node.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  std::uint64_t graph_id = 0;
  bool requires_grad = false;
  bool is_leaf = true;
  bool consumed = false;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Gradient recording is a per-thread switch so independent trainings can run
// on separate threads.
class GradMode {
 public:
  static bool is_enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// A Tensor is a cheap shared handle: copies alias the same storage. Leaves
/// created with `requires_grad = true` are parameters or inputs whose
/// gradients accumulate across backward passes until `zero_grad()`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Only leaves may be written; interior values belong to the tape.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  std::uint64_t graph_id() const;

  // New leaf holding a copy of the values, detached from any tape.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_op_result(Shape, std::vector<double>, std::vector<Tensor>,
                               std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

/// Records an operation on the tape.
///
/// `backward` receives the result node; it reads `self.grad` and accumulates
/// into `self.parents[i]->ensure_grad()` for every parent that requires
/// gradients. When recording is disabled or no input requires gradients the
/// result is a plain constant and `backward` is dropped.
Tensor make_op_result(Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backward);

/// Reverse-mode sweep from a scalar loss. Accumulates d loss / d t into the
/// grad of every tracked tensor reachable from `loss`, then releases the tape.
/// Throws ContractError for non-scalar losses or a second sweep over the same
/// graph.
void backward(const Tensor& loss);

}  // namespace cdcl
