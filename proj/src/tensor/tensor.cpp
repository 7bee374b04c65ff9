// SPDX-License-Identifier: Apache-2.0
#include "rna/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace rna {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
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

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return from(shape, std::vector<double>(shape_numel(shape), value),
              requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values,
                    bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " +
                                 shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values,
                           std::shared_ptr<Node> node) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  if (node && grad_enabled()) {
    bool any = std::any_of(node->inputs.begin(), node->inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      impl->requires_grad = true;
      impl->node = std::move(node);
    }
  }
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  return s[axis];
}

std::span<const double> Tensor::values() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->values;
}

std::span<double> Tensor::mutable_values() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->values;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  }
  return impl_->values[0];
}

void Tensor::set_requires_grad(bool on) {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  if (impl_->node) throw std::logic_error("requires_grad is fixed on non-leaf");
  impl_->requires_grad = on;
}

std::span<const double> Tensor::grad() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach(bool requires_grad) const {
  return from(shape(), impl_->values, requires_grad);
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() without a seed needs a scalar output, got " +
                     shape_str(shape()));
  }
  std::vector<double> seed{1.0};
  backward(std::span<const double>(seed));
}

void Tensor::backward(const Tensor& seed) const {
  if (seed.shape() != shape()) {
    throw ShapeError("backward seed " + shape_str(seed.shape()) +
                     " does not match output " + shape_str(shape()));
  }
  backward(seed.values());
}

void Tensor::backward(std::span<const double> seed) const {
  if (!impl_) throw std::logic_error("backward on undefined tensor");
  if (seed.size() != numel()) {
    throw ShapeError("backward seed has " + std::to_string(seed.size()) +
                     " values, output has " + std::to_string(numel()));
  }
  if (!impl_->requires_grad) return;

  // Reverse topological order via iterative post-order DFS.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->inputs.size()) {
      TensorImpl* child = t->node->inputs[next++].impl();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  std::unordered_map<TensorImpl*, std::vector<double>> grads;
  grads[impl_.get()].assign(seed.begin(), seed.end());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    auto found = grads.find(t);
    if (found == grads.end()) continue;
    std::vector<double> g = std::move(found->second);
    grads.erase(found);
    if (!t->node) {
      if (t->grad.empty()) {
        t->grad = std::move(g);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) t->grad[i] += g[i];
      }
      continue;
    }
    const auto& inputs = t->node->inputs;
    std::vector<std::vector<double>> grad_in(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].requires_grad()) grad_in[i].assign(inputs[i].numel(), 0.0);
    }
    t->node->backward(g, grad_in);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!inputs[i].requires_grad()) continue;
      auto& acc = grads[inputs[i].impl()];
      if (acc.empty()) {
        acc = std::move(grad_in[i]);
      } else {
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += grad_in[i][j];
      }
    }
  }
}

}  // namespace rna
