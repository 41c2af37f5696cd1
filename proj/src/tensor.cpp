#include "dcenet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "dcenet/errors.hpp"
#include "dcenet/kernels.hpp"

namespace dcenet {

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

namespace autodiff {
namespace {
thread_local bool t_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) {
  t_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

}  // namespace autodiff

using autodiff::Node;

namespace {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::shared_ptr<Node> make_node(Shape shape, const char* op) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values.assign(numel_of(node->shape), 0.0);
  node->op = op;
  return node;
}

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!autodiff::grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void attach(const std::shared_ptr<Node>& node,
            std::vector<std::shared_ptr<Node>> inputs,
            std::function<void(Node&)> backprop) {
  node->requires_grad = true;
  node->inputs = std::move(inputs);
  node->backprop = std::move(backprop);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + " tensor, got " +
                     shape_str(t.shape()));
}

}  // namespace

Tensor wrap_node(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->values.assign(numel_of(node_->shape), fill);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (numel_of(shape) != values.size())
    throw ShapeError("Tensor::from: shape " + shape_str(shape) +
                     " does not match " + std::to_string(values.size()) +
                     " values");
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->values = std::move(values);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

double Tensor::value() const {
  if (numel() != 1)
    throw ContractError("Tensor::value: tensor " + shape_str(shape()) +
                        " is not scalar");
  return node_->values[0];
}

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::grad_at(std::size_t i) const {
  node_->ensure_grad();
  return node_->grad[i];
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

// --- tape ----------------------------------------------------------------

Tape Tape::trace(const Tensor& root) {
  Tape tape;
  tape.root_ = root.node();
  if (!root.requires_grad()) return tape;
  // Iterative post-order DFS; inputs are visited in recorded order, so the
  // linearization is deterministic for a given graph.
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(tape.root_.get(), 0);
  visited.insert(tape.root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && child->backprop &&
          !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      if (node->backprop) tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::backward() {
  if (!root_) return;
  if (root_->numel() != 1)
    throw ContractError("backward: root tensor " + shape_str(root_->shape) +
                        " is not scalar");
  root_->ensure_grad();
  root_->grad[0] = 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it)
    (*it)->backprop(**it);
}

bool Tape::topologically_ordered() const {
  std::unordered_set<const Node*> seen;
  for (const Node* node : order_) {
    for (const auto& input : node->inputs) {
      if (input->backprop && input->requires_grad && !seen.count(input.get()))
        return false;
    }
    seen.insert(node);
  }
  return true;
}

void backward(const Tensor& root) {
  if (root.numel() != 1)
    throw ContractError("backward: root tensor " + shape_str(root.shape()) +
                        " is not scalar");
  Tape::trace(root).backward();
}

// --- elementwise ops -------------------------------------------------------

namespace {

// b is either the same shape as a, or a rank-1 vector broadcast across the
// rows of a rank-2 a (the bias case; no other broadcasting exists).
enum class AddMode { Same, RowBroadcast };

AddMode add_mode(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return AddMode::Same;
  if (a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1))
    return AddMode::RowBroadcast;
  throw ShapeError(std::string(op) + ": incompatible shapes " +
                   shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

template <typename Fwd>
Tensor unary_ew(const Tensor& a, const char* op, Fwd fwd,
                std::function<double(double y, double x)> dydx) {
  auto node = make_node(a.shape(), op);
  const auto& x = a.node()->values;
  for (std::size_t i = 0; i < x.size(); ++i) node->values[i] = fwd(x[i]);
  if (recording({&a})) {
    attach(node, {a.node()},
           [an = a.node(), dydx](Node& self) {
             if (!an->requires_grad) return;
             an->ensure_grad();
             for (std::size_t i = 0; i < self.values.size(); ++i)
               an->grad[i] += self.grad[i] * dydx(self.values[i], an->values[i]);
           });
  }
  return wrap_node(node);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const AddMode mode = add_mode(a, b, "add");
  auto node = make_node(a.shape(), "add");
  const auto& av = a.node()->values;
  const auto& bv = b.node()->values;
  if (mode == AddMode::Same) {
    for (std::size_t i = 0; i < av.size(); ++i) node->values[i] = av[i] + bv[i];
  } else {
    const std::size_t cols = a.dim(1);
    for (std::size_t i = 0; i < av.size(); ++i)
      node->values[i] = av[i] + bv[i % cols];
  }
  if (recording({&a, &b})) {
    attach(node, {a.node(), b.node()},
           [an = a.node(), bn = b.node(), mode](Node& self) {
             if (an->requires_grad) {
               an->ensure_grad();
               for (std::size_t i = 0; i < self.grad.size(); ++i)
                 an->grad[i] += self.grad[i];
             }
             if (bn->requires_grad) {
               bn->ensure_grad();
               if (mode == AddMode::Same) {
                 for (std::size_t i = 0; i < self.grad.size(); ++i)
                   bn->grad[i] += self.grad[i];
               } else {
                 const std::size_t cols = bn->values.size();
                 for (std::size_t i = 0; i < self.grad.size(); ++i)
                   bn->grad[i % cols] += self.grad[i];
               }
             }
           });
  }
  return wrap_node(node);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const AddMode mode = add_mode(a, b, "sub");
  auto node = make_node(a.shape(), "sub");
  const auto& av = a.node()->values;
  const auto& bv = b.node()->values;
  if (mode == AddMode::Same) {
    for (std::size_t i = 0; i < av.size(); ++i) node->values[i] = av[i] - bv[i];
  } else {
    const std::size_t cols = a.dim(1);
    for (std::size_t i = 0; i < av.size(); ++i)
      node->values[i] = av[i] - bv[i % cols];
  }
  if (recording({&a, &b})) {
    attach(node, {a.node(), b.node()},
           [an = a.node(), bn = b.node(), mode](Node& self) {
             if (an->requires_grad) {
               an->ensure_grad();
               for (std::size_t i = 0; i < self.grad.size(); ++i)
                 an->grad[i] += self.grad[i];
             }
             if (bn->requires_grad) {
               bn->ensure_grad();
               if (mode == AddMode::Same) {
                 for (std::size_t i = 0; i < self.grad.size(); ++i)
                   bn->grad[i] -= self.grad[i];
               } else {
                 const std::size_t cols = bn->values.size();
                 for (std::size_t i = 0; i < self.grad.size(); ++i)
                   bn->grad[i % cols] -= self.grad[i];
               }
             }
           });
  }
  return wrap_node(node);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  auto node = make_node(a.shape(), "mul");
  const auto& av = a.node()->values;
  const auto& bv = b.node()->values;
  for (std::size_t i = 0; i < av.size(); ++i) node->values[i] = av[i] * bv[i];
  if (recording({&a, &b})) {
    attach(node, {a.node(), b.node()},
           [an = a.node(), bn = b.node()](Node& self) {
             if (an->requires_grad) {
               an->ensure_grad();
               for (std::size_t i = 0; i < self.grad.size(); ++i)
                 an->grad[i] += self.grad[i] * bn->values[i];
             }
             if (bn->requires_grad) {
               bn->ensure_grad();
               for (std::size_t i = 0; i < self.grad.size(); ++i)
                 bn->grad[i] += self.grad[i] * an->values[i];
             }
           });
  }
  return wrap_node(node);
}

Tensor scale(const Tensor& a, double c) {
  auto node = make_node(a.shape(), "scale");
  const auto& av = a.node()->values;
  for (std::size_t i = 0; i < av.size(); ++i) node->values[i] = av[i] * c;
  if (recording({&a})) {
    attach(node, {a.node()}, [an = a.node(), c](Node& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        an->grad[i] += self.grad[i] * c;
    });
  }
  return wrap_node(node);
}

Tensor add_scalar(const Tensor& a, double c) {
  auto node = make_node(a.shape(), "add_scalar");
  const auto& av = a.node()->values;
  for (std::size_t i = 0; i < av.size(); ++i) node->values[i] = av[i] + c;
  if (recording({&a})) {
    attach(node, {a.node()}, [an = a.node()](Node& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        an->grad[i] += self.grad[i];
    });
  }
  return wrap_node(node);
}

Tensor relu(const Tensor& a) {
  return unary_ew(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double, double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_ew(
      a, "sigmoid",
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double y, double) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& a) {
  return unary_ew(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double y, double) { return 1.0 - y * y; });
}

Tensor exp_op(const Tensor& a) {
  return unary_ew(
      a, "exp", [](double x) { return std::exp(x); },
      [](double y, double) { return y; });
}

// --- matrix ops ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions differ, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto node = make_node({m, n}, "matmul");
  kernels::matmul_nn(a.node()->values.data(), b.node()->values.data(),
                     node->values.data(), m, k, n);
  if (recording({&a, &b})) {
    attach(node, {a.node(), b.node()},
           [an = a.node(), bn = b.node(), m, k, n](Node& self) {
             if (an->requires_grad) {
               an->ensure_grad();
               std::vector<double> tmp(m * k);
               kernels::matmul_nt(self.grad.data(), bn->values.data(),
                                  tmp.data(), m, n, k);
               for (std::size_t i = 0; i < tmp.size(); ++i)
                 an->grad[i] += tmp[i];
             }
             if (bn->requires_grad) {
               bn->ensure_grad();
               std::vector<double> tmp(k * n);
               kernels::matmul_tn(an->values.data(), self.grad.data(),
                                  tmp.data(), k, m, n);
               for (std::size_t i = 0; i < tmp.size(); ++i)
                 bn->grad[i] += tmp[i];
             }
           });
  }
  return wrap_node(node);
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto node = make_node({n, m}, "transpose");
  const auto& av = a.node()->values;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) node->values[j * m + i] = av[i * n + j];
  if (recording({&a})) {
    attach(node, {a.node()}, [an = a.node(), m, n](Node& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          an->grad[i * n + j] += self.grad[j * m + i];
    });
  }
  return wrap_node(node);
}

Tensor softmax_last(const Tensor& a) {
  if (a.rank() == 0)
    throw ShapeError("softmax: undefined for rank-0 tensor");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.numel() / n;
  auto node = make_node(a.shape(), "softmax");
  const auto& x = a.node()->values;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * n;
    double* yr = node->values.data() + r * n;
    double mx = xr[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xr[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      denom += yr[i];
    }
    for (std::size_t i = 0; i < n; ++i) yr[i] /= denom;
  }
  if (recording({&a})) {
    attach(node, {a.node()}, [an = a.node(), rows, n](Node& self) {
      an->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.values.data() + r * n;
        const double* g = self.grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
        for (std::size_t i = 0; i < n; ++i)
          an->grad[r * n + i] += y[i] * (g[i] - dot);
      }
    });
  }
  return wrap_node(node);
}

Tensor sum(const Tensor& a) {
  auto node = make_node({1}, "sum");
  double acc = 0.0;
  for (double v : a.node()->values) acc += v;
  node->values[0] = acc;
  if (recording({&a})) {
    attach(node, {a.node()}, [an = a.node()](Node& self) {
      an->ensure_grad();
      const double g = self.grad[0];
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
    });
  }
  return wrap_node(node);
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rank = parts[0].rank();
  if (rank != 1 && rank != 2)
    throw ShapeError("concat: only rank-1/2 supported, got " +
                     shape_str(parts[0].shape()));
  const std::size_t rows = rank == 2 ? parts[0].dim(0) : 1;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank || (rank == 2 && p.dim(0) != rows))
      throw ShapeError("concat: mismatched part shape " + shape_str(p.shape()));
    total += p.shape().back();
  }
  Shape out_shape = rank == 2 ? Shape{rows, total} : Shape{total};
  auto node = make_node(out_shape, "concat");
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t cols = p.shape().back();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        node->values[r * total + offset + c] = p.node()->values[r * cols + c];
    offset += cols;
  }
  bool rec = autodiff::grad_enabled();
  if (rec) {
    rec = false;
    for (const Tensor& p : parts) rec = rec || p.requires_grad();
  }
  if (rec) {
    std::vector<std::shared_ptr<Node>> inputs;
    inputs.reserve(parts.size());
    for (const Tensor& p : parts) inputs.push_back(p.node());
    attach(node, std::move(inputs), [rows, total](Node& self) {
      std::size_t offset = 0;
      for (auto& input : self.inputs) {
        const std::size_t cols = input->shape.back();
        if (input->requires_grad) {
          input->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
              input->grad[r * cols + c] += self.grad[r * total + offset + c];
        }
        offset += cols;
      }
    });
  }
  return wrap_node(node);
}

Tensor slice_last(const Tensor& a, std::size_t lo, std::size_t hi) {
  const std::size_t rank = a.rank();
  if (rank != 1 && rank != 2)
    throw ShapeError("slice: only rank-1/2 supported, got " +
                     shape_str(a.shape()));
  const std::size_t cols = a.shape().back();
  if (lo >= hi || hi > cols)
    throw ShapeError("slice: range [" + std::to_string(lo) + ", " +
                     std::to_string(hi) + ") out of bounds for " +
                     shape_str(a.shape()));
  const std::size_t rows = rank == 2 ? a.dim(0) : 1;
  const std::size_t width = hi - lo;
  Shape out_shape = rank == 2 ? Shape{rows, width} : Shape{width};
  auto node = make_node(out_shape, "slice");
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c)
      node->values[r * width + c] = a.node()->values[r * cols + lo + c];
  if (recording({&a})) {
    attach(node, {a.node()}, [an = a.node(), rows, cols, lo, width](Node& self) {
      an->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < width; ++c)
          an->grad[r * cols + lo + c] += self.grad[r * width + c];
    });
  }
  return wrap_node(node);
}

Tensor row(const Tensor& a, std::size_t i) {
  require_rank(a, 2, "row");
  if (i >= a.dim(0))
    throw ShapeError("row: index " + std::to_string(i) + " out of bounds for " +
                     shape_str(a.shape()));
  const std::size_t cols = a.dim(1);
  auto node = make_node({cols}, "row");
  for (std::size_t c = 0; c < cols; ++c)
    node->values[c] = a.node()->values[i * cols + c];
  if (recording({&a})) {
    attach(node, {a.node()}, [an = a.node(), i, cols](Node& self) {
      an->ensure_grad();
      for (std::size_t c = 0; c < cols; ++c)
        an->grad[i * cols + c] += self.grad[c];
    });
  }
  return wrap_node(node);
}

// --- gradient checking -------------------------------------------------

namespace {

double run_scalar(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x) {
  autodiff::NoGradGuard guard;
  Tensor y = f(x);
  if (y.numel() != 1)
    throw ContractError("grad_check: function output " +
                        shape_str(y.shape()) + " is not scalar");
  return y.value();
}

double grad_check_impl(const std::function<Tensor(const Tensor&)>& f,
                       const Tensor& x, double h,
                       const std::vector<std::size_t>& coords) {
  if (!(h > 0.0) || h > 1e-3)
    throw ContractError("grad_check: step must lie in (0, 1e-3], got " +
                        std::to_string(h));
  Tensor leaf = Tensor::from(x.shape(),
                             {x.values().begin(), x.values().end()}, true);
  Tensor y = f(leaf);
  if (y.numel() != 1)
    throw ContractError("grad_check: function output " +
                        shape_str(y.shape()) + " is not scalar");
  if (!std::isfinite(y.value()))
    throw ContractError("grad_check: non-finite function value");
  backward(y);
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

  double max_rel = 0.0;
  auto vals = leaf.mutable_values();
  for (std::size_t i : coords) {
    const double saved = vals[i];
    vals[i] = saved + h;
    const double fp = run_scalar(f, leaf);
    vals[i] = saved - h;
    const double fm = run_scalar(f, leaf);
    vals[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw ContractError("grad_check: non-finite function value");
    const double numeric = (fp - fm) / (2.0 * h);
    const double rel = std::abs(analytic[i] - numeric) /
                       std::max(1.0, std::abs(analytic[i]));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double h) {
  std::vector<std::size_t> coords(x.numel());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  return grad_check_impl(f, x, h, coords);
}

double grad_check_at(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                     double h, const std::vector<std::size_t>& coords) {
  return grad_check_impl(f, x, h, coords);
}

}  // namespace dcenet
