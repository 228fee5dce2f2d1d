#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "micshift/core/error.hpp"

namespace micshift::tensor {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

namespace detail {

inline thread_local bool grad_enabled = true;

/// Sign-pattern fingerprint of kinked ops (relu, leaky relu, |.|), used by
/// grad_check to drop finite-difference stencils that straddle a kink.
struct KinkRecorder {
  std::uint64_t hash = 0x84222325cbf29ce4ULL;
  void record(bool bit) {
    hash ^= bit ? 0x9e3779b97f4a7c15ULL : 0x7f4a7c159e3779b9ULL;
    hash *= 0x100000001b3ULL;
    hash ^= hash >> 29;
  }
};

inline thread_local KinkRecorder* kink_recorder = nullptr;

}  // namespace detail

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// n-dimensional array on a reverse-mode tape. Copies share storage; use
/// clone() for a deep copy and detach() to cut the tape.
template <typename T>
class DiffTensor {
 public:
  using value_type = T;

  DiffTensor() = default;
  explicit DiffTensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
    node_->data.assign(numel(shape), fill);
    node_->shape = std::move(shape);
  }
  DiffTensor(Shape shape, std::vector<T> data) : node_(std::make_shared<Node<T>>()) {
    require(numel(shape) == data.size(), "ShapeMismatch",
            "data size " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }
  explicit DiffTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static DiffTensor scalar(T v) { return DiffTensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  std::vector<T>& storage() { return node_->data; }
  const std::vector<T>& storage() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::vector<T>& grad_storage() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    require(size() == 1, "NonScalar", "item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  DiffTensor& set_requires_grad(bool v = true) {
    node_->requires_grad = v;
    return *this;
  }

  DiffTensor detach() const { return DiffTensor(node_->shape, node_->data); }
  DiffTensor clone() const {
    DiffTensor t(node_->shape, node_->data);
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

  /// Reverse-mode sweep from a scalar. Gradients accumulate into every
  /// reachable tensor that requires grad; the tape is released afterwards.
  void backward() {
    require(size() == 1, "NonScalarBackward", "backward() requires a scalar, got " + shape_str(shape()));
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward && !(*it)->grad.empty()) (*it)->backward();
    }
    for (Node<T>* n : order) {
      if (n->backward) {
        n->backward = nullptr;
        n->parents.clear();
      }
    }
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Trainable (or buffer) tensor with a model-unique name.
template <typename T>
struct Parameter {
  std::string name;
  DiffTensor<T> tensor;
  bool trainable = true;
};

template <typename T>
using ParamList = std::vector<Parameter<T>>;

namespace detail {

template <typename T>
void check_finite(const std::vector<T>& v, const char* op) {
  // x − x is NaN exactly for ±inf and NaN; a vectorizable reduction
  T acc = T(0);
  for (const T& x : v) acc += x - x;
  if (acc != T(0)) throw Error("NonFinite", std::string("non-finite value produced by ") + op);
}

/// Builds an op result. `make_backward(out_node)` returns the closure that
/// propagates out_node->grad into the inputs; it is only requested when
/// recording is enabled and some input requires grad.
template <typename T, typename MakeBackward>
DiffTensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                          std::initializer_list<const DiffTensor<T>*> inputs, MakeBackward&& make_backward) {
  check_finite(data, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool any = false;
  if (grad_enabled) {
    for (const auto* in : inputs) {
      if (in && in->defined() && in->requires_grad()) any = true;
    }
  }
  if (any) {
    node->requires_grad = true;
    for (const auto* in : inputs) {
      if (in && in->defined() && in->requires_grad()) node->parents.push_back(in->node());
    }
    node->backward = make_backward(node.get());
  }
  return DiffTensor<T>(std::move(node));
}

template <typename T>
bool wants_grad(const DiffTensor<T>& t) {
  return t.defined() && t.requires_grad();
}

}  // namespace detail

template <typename T>
void require_same_shape(const DiffTensor<T>& a, const DiffTensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), "ShapeMismatch",
          std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
}

}  // namespace micshift::tensor
