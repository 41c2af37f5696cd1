#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dcenet {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

namespace autodiff {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backprop;

  std::size_t numel() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

// While alive, ops compute values but record nothing on the graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace autodiff

// Value-like handle to a dense 64-bit float array. Copies share storage;
// ops build a define-by-run graph when any input requires gradients.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->numel(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }

  std::span<const double> values() const { return node_->values; }
  std::span<double> mutable_values() { return node_->values; }
  double value() const;            // scalar tensors only
  double at(std::size_t i) const { return node_->values[i]; }
  double at(std::size_t i, std::size_t j) const {
    return node_->values[i * node_->shape[1] + j];
  }

  bool requires_grad() const { return node_->requires_grad; }
  std::span<const double> grad() const;
  double grad_at(std::size_t i) const;
  void zero_grad();

  const char* op() const { return node_->op; }
  std::shared_ptr<autodiff::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<autodiff::Node> node)
      : node_(std::move(node)) {}
  std::shared_ptr<autodiff::Node> node_;
  friend Tensor wrap_node(std::shared_ptr<autodiff::Node>);
};

// Topological linearization of the operations reachable from a root.
// Producers appear before consumers; backward sweeps it in reverse.
class Tape {
 public:
  static Tape trace(const Tensor& root);
  void backward();
  std::size_t op_count() const { return order_.size(); }
  bool topologically_ordered() const;

 private:
  std::shared_ptr<autodiff::Node> root_;
  std::vector<autodiff::Node*> order_;
};

// Single reverse sweep from a scalar root; grads accumulate into every
// requires_grad ancestor. Callers zero grads between steps.
void backward(const Tensor& root);

// --- differentiable ops -----------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);  // same shape, or b broadcast per row
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor softmax_last(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor concat_last(const std::vector<Tensor>& parts);
Tensor slice_last(const Tensor& a, std::size_t lo, std::size_t hi);
Tensor row(const Tensor& a, std::size_t i);

// --- verification harness ----------------------------------------------

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double h);
// Same, but finite differences only at the given coordinates (used when x
// is too large to difference exhaustively).
double grad_check_at(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                     double h, const std::vector<std::size_t>& coords);

}  // namespace dcenet
