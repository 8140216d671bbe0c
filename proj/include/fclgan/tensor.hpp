#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major tensors.
//
// A Var is a shared handle to a graph node. Operations record their parents
// and a backward closure only while gradient recording is enabled and at
// least one input requires a gradient, so inference builds no graph at all.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fclgan/errors.hpp"

namespace fclgan {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Records which side of zero each input of a piecewise-linear op fell on.
/// Two evaluations with equal traces lie on the same linear piece.
struct BranchTrace {
  std::vector<signed char> signs;
};

namespace detail {
inline BranchTrace*& active_branch_trace() {
  thread_local BranchTrace* trace = nullptr;
  return trace;
}

template <typename T>
void trace_branch(T v) {
  if (auto* t = active_branch_trace()) t->signs.push_back(static_cast<signed char>((v > T(0)) - (v < T(0))));
}

template <typename T>
void trace_branches(const std::vector<T>& v) {
  if (active_branch_trace())
    for (T e : v) trace_branch(e);
}
}  // namespace detail

/// Routes branch records to `trace` for the lifetime of the scope.
class BranchTraceScope {
 public:
  explicit BranchTraceScope(BranchTrace& trace) : prev_(detail::active_branch_trace()) {
    detail::active_branch_trace() = &trace;
  }
  ~BranchTraceScope() { detail::active_branch_trace() = prev_; }
  BranchTraceScope(const BranchTraceScope&) = delete;
  BranchTraceScope& operator=(const BranchTraceScope&) = delete;

 private:
  BranchTrace* prev_;
};

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value.assign(numel_of(shape), T(0));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  static Var from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != numel_of(shape))
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  static Var scalar(T v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& mutable_grad() { return node_->ensure_grad(); }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  /// Copy of the value, cut from the graph.
  Var detach() const { return from(shape(), node_->value, false); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Reverse pass from a scalar root. Graph edges are released afterwards.
  void backward() {
    if (numel() != 1) throw ShapeError("backward() requires a scalar root");
    if (!node_->requires_grad) return;
    std::vector<std::shared_ptr<Node<T>>> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{node_, 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& top = stack.back();
      if (top.second < top.first->parents.size()) {
        auto p = top.first->parents[top.second++];
        if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
      } else {
        order.push_back(std::move(top.first));
        stack.pop_back();
      }
    }
    node_->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>& n = **it;
      if (n.backward_fn) {
        n.ensure_grad();
        n.backward_fn();
      }
    }
    // `order` keeps every node alive while the edges are dropped.
    for (auto& n : order) {
      n->backward_fn = nullptr;
      n->parents.clear();
    }
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

/// Builds an op result. Parents and the backward closure are kept only when
/// recording is on and some parent requires a gradient. The closure receives
/// the result node so it can read its gradient without owning it.
template <typename T>
Var<T> make_result(Shape shape, std::vector<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->requires_grad = true;
    for (auto& p : parents)
      if (p.defined()) n->parents.push_back(p.node_ptr());
    Node<T>* self = n.get();
    n->backward_fn = [self, bw = std::move(backward)]() { bw(*self); };
  }
  return Var<T>(std::move(n));
}

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

/// Elementwise map with derivative expressed through input x and output y.
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  auto xn = x.node_ptr();
  return make_result<T>(x.shape(), std::move(out), {x}, [xn, df](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * df(xn->value[i], self.value[i]);
  });
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  detail::trace_branches(x.values());
  return detail::unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  detail::trace_branches(x.values());
  return detail::unary(
      x, [](T v) { return v < T(0) ? T(0) : v; }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  detail::trace_branches(x.values());
  return detail::unary(
      x, [slope](T v) { return v < T(0) ? slope * v : v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = std::accumulate(x.values().begin(), x.values().end(), T(0));
  auto xn = x.node_ptr();
  return detail::make_result<T>({1}, {s}, {x}, [xn](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Image n of a rank-4 batch, as a [1,C,H,W] tensor.
template <typename T>
Var<T> batch_item(const Var<T>& x, std::size_t n) {
  if (x.rank() != 4 || n >= x.dim(0))
    throw ShapeError("batch_item: index " + std::to_string(n) + " out of " + shape_str(x.shape()));
  const std::size_t stride = x.numel() / x.dim(0);
  std::vector<T> out(x.values().begin() + n * stride, x.values().begin() + (n + 1) * stride);
  auto xn = x.node_ptr();
  return detail::make_result<T>({1, x.dim(1), x.dim(2), x.dim(3)}, std::move(out), {x},
                                [xn, n, stride](Node<T>& self) {
                                  auto& g = xn->ensure_grad();
                                  for (std::size_t i = 0; i < stride; ++i)
                                    g[n * stride + i] += self.grad[i];
                                });
}

/// Concatenates scalars into a 1-D tensor.
template <typename T>
Var<T> stack_scalars(const std::vector<Var<T>>& xs) {
  std::vector<T> out;
  out.reserve(xs.size());
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& x : xs) {
    out.push_back(x.item());
    nodes.push_back(x.node_ptr());
  }
  return detail::make_result<T>({xs.size()}, std::move(out), xs, [nodes](Node<T>& self) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i]->requires_grad) nodes[i]->ensure_grad()[0] += self.grad[i];
  });
}

/// Element i of a 1-D tensor as a scalar.
template <typename T>
Var<T> element(const Var<T>& x, std::size_t i) {
  auto xn = x.node_ptr();
  return detail::make_result<T>({1}, {x.values().at(i)}, {x}, [xn, i](Node<T>& self) {
    xn->ensure_grad()[i] += self.grad[0];
  });
}

/// log(sum(exp(x))) over all elements, stabilized by subtracting the maximum.
template <typename T>
Var<T> logsumexp(const Var<T>& x) {
  const auto& v = x.values();
  const T mx = *std::max_element(v.begin(), v.end());
  T acc = 0;
  for (T e : v) acc += std::exp(e - mx);
  const T lse = mx + std::log(acc);
  auto xn = x.node_ptr();
  return detail::make_result<T>({1}, {lse}, {x}, [xn](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[0] * std::exp(xn->value[i] - self.value[0]);
  });
}

}  // namespace fclgan
