#include "flr/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "flr/errors.hpp"

namespace flr {

namespace {

thread_local bool g_grad_enabled = true;

Shape shape_of(const Matrix& m) {
  if (m.rows() == 1 && m.cols() == 1) return {};
  if (m.rows() == 1) return {m.cols()};
  return {m.rows(), m.cols()};
}

Index product(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw ContractError("use of an undefined tensor");
  return *node;
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Matrix value, bool requires_grad)
    : Tensor(value, shape_of(value), requires_grad) {}

Tensor::Tensor(Matrix value, Shape shape, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (product(shape) != value.size()) {
    throw ShapeError("shape " + shape_string(shape) + " does not match " +
                     std::to_string(value.size()) + " elements");
  }
  node_->value = std::move(value);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m), Shape{}, requires_grad);
}

Tensor Tensor::zeros(Index rows, Index cols) {
  return Tensor(Matrix::Zero(rows, cols), Shape{rows, cols});
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  Matrix m(1, static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) m(0, i++) = v;
  return Tensor(std::move(m), Shape{static_cast<Index>(values.size())}, requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  const auto r = static_cast<Index>(rows.size());
  const auto c = r ? static_cast<Index>(rows.begin()->size()) : 0;
  Matrix m(r, c);
  Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != c) throw ShapeError("ragged matrix literal");
    Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return Tensor(std::move(m), Shape{r, c}, requires_grad);
}

const Shape& Tensor::shape() const { return checked(node_).shape; }
const Matrix& Tensor::value() const { return checked(node_).value; }

Matrix& Tensor::mutable_value() {
  checked(node_);
  if (!node_->is_leaf()) throw ContractError("only leaf tensors may be mutated");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return value()(0, 0);
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool on) {
  checked(node_);
  if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaves");
  node_->requires_grad = on;
  if (!on) {
    node_->grad.resize(0, 0);
    node_->has_grad = false;
  }
}

bool Tensor::has_grad() const { return checked(node_).has_grad; }

const Matrix& Tensor::grad() const {
  const auto& n = checked(node_);
  if (!n.has_grad) throw ContractError("tensor has no gradient");
  return n.grad;
}

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.resize(0, 0);
  node_->has_grad = false;
}

void Tensor::backward() const {
  const auto& root = checked(node_);
  if (root.value.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_string(root.shape));
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  detail::accumulate(*node_, Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf()) {
      if (!n->has_grad) {
        n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
        n->has_grad = true;
      }
      continue;
    }
    if (n->has_grad) n->backward(*n);
    // Interior grads are transient.
    n->grad.resize(0, 0);
    n->has_grad = false;
  }
}

Tensor Tensor::detach() const { return Tensor(value(), shape()); }

Tensor make_result(Matrix value, Shape shape, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->shape = std::move(shape);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.node()->requires_grad;
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (auto& t : inputs) node->parents.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace flr
