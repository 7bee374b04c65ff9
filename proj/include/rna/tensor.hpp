// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rna {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor;
struct TensorImpl;

/// One recorded operation. `backward` receives the gradient of the node's
/// output and accumulates into `grad_in[i]` for every input that requires a
/// gradient (entries for the others are left empty).
struct Node {
  std::string op;
  std::vector<Tensor> inputs;
  std::function<void(const std::vector<double>& grad_out,
                     std::vector<std::vector<double>>& grad_in)>
      backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass reaches this leaf
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves
};

/// Dense row-major tensor with reference semantics (copies share storage).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value,
                     bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return impl_ ? impl_->values.size() : 0; }

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat) const { return values()[flat]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return impl_ && !impl_->node; }
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<const double> grad() const;
  void zero_grad();

  /// New leaf holding a copy of the values, detached from any graph.
  Tensor detach(bool requires_grad = false) const;
  Tensor clone() const { return detach(requires_grad()); }

  /// Reverse-mode pass from a scalar output (seed 1).
  void backward() const;
  /// Reverse-mode pass with an explicit same-shape seed.
  void backward(const Tensor& seed) const;
  void backward(std::span<const double> seed) const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

  /// Wraps a fresh output; records `node` when any input requires a gradient
  /// and recording is enabled.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::shared_ptr<Node> node);

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

/// True while graph recording is enabled on this thread.
bool grad_enabled();

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace rna
