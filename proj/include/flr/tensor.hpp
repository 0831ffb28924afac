#pragma once

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace flr {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Shape = std::vector<Index>;

std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Matrix value;
  Shape shape;
  Matrix grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Pushes this node's grad into its parents.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
};

template <typename Derived>
void accumulate(Node& node, const Eigen::MatrixBase<Derived>& g) {
  if (!node.requires_grad) return;
  if (!node.has_grad) {
    node.grad = g;
    node.has_grad = true;
  } else {
    node.grad += g;
  }
}

}  // namespace detail

// Dense 64-bit array with reverse-mode gradient support.
//
// Storage is a row-major Eigen matrix; `shape` carries the logical
// dimensions (scalars are {}, vectors {n}, matrices {r, c}). Tensors are
// cheap handles: copies share the same node. Values produced by an op are
// never mutated afterwards; only leaves expose `mutable_value()`.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);
  Tensor(Matrix value, Shape shape, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor zeros(Index rows, Index cols);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  const Matrix& value() const;
  Matrix& mutable_value();
  double item() const;
  double operator()(Index r, Index c) const { return value()(r, c); }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  const Matrix& grad() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar. Leaf grads accumulate across calls.
  void backward() const;

  // Same values, no history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Matrix value, Shape shape, std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward);

  std::shared_ptr<detail::Node> node_;
};

// Builds an op output. History is recorded only when grad mode is on and
// at least one input requires grad.
Tensor make_result(Matrix value, Shape shape, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward);

bool grad_enabled();

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace flr
