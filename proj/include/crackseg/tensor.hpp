#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crackseg/error.hpp"

namespace crackseg {

using Shape = std::vector<int>;

inline long long shape_numel(const Shape& s) {
  long long n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("shape has nonpositive dimension " + std::to_string(d));
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool on = true;
  return on;
}

inline bool& finite_check_mode() {
  static bool on = true;
  return on;
}

/// One vertex of the autodiff graph. `parents` lists only gradient-relevant
/// inputs; `backward_fn` reads this node's grad and accumulates into them.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  bool leaf = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buf() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline void check_finite(const std::vector<double>& v, const char* op) {
  if (!finite_check_mode()) return;
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value in result");
  }
}

}  // namespace detail

/// Disables graph recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }
inline void set_finite_checks(bool on) { detail::finite_check_mode() = on; }
inline bool finite_checks_enabled() { return detail::finite_check_mode(); }

/// Dense row-major f64 tensor with optional gradient tracking. Copying a
/// Tensor copies a handle; the underlying buffer is shared.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

  static Tensor from_data(const Shape& shape, std::vector<double> data, bool requires_grad = false) {
    long long n = shape_numel(shape);
    if (n != static_cast<long long>(data.size()))
      throw ShapeError("tensor init: shape " + shape_str(shape) + " expects " + std::to_string(n) +
                       " values, got " + std::to_string(data.size()));
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    node->leaf = true;
    return Tensor(node);
  }

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return from_data(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
  }

  static Tensor full(const Shape& shape, double value, bool requires_grad = false) {
    return from_data(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return node_ref().shape; }
  int ndim() const { return static_cast<int>(node_ref().shape.size()); }
  int dim(int i) const { return node_ref().shape.at(i); }
  long long numel() const { return static_cast<long long>(node_ref().data.size()); }
  const std::vector<double>& data() const { return node_ref().data; }

  /// Direct mutable access to the buffer (optimizer updates, test setup).
  /// Mutating a non-leaf invalidates recorded gradients; callers own that risk.
  std::vector<double>& raw_data() { return node_ref().data; }

  double value() const {
    if (numel() != 1) throw UsageError("value(): tensor is not scalar, shape " + shape_str(shape()));
    return data()[0];
  }

  double at(std::initializer_list<int> idx) const {
    const auto& sh = shape();
    if (idx.size() != sh.size())
      throw ShapeError("at(): rank mismatch, tensor has " + std::to_string(sh.size()) + " axes");
    long long off = 0;
    int axis = 0;
    for (int i : idx) {
      if (i < 0 || i >= sh[axis])
        throw ShapeError("at(): index " + std::to_string(i) + " out of range on axis " + std::to_string(axis));
      off = off * sh[axis] + i;
      ++axis;
    }
    return data()[off];
  }

  bool requires_grad() const { return node_ref().requires_grad; }

  void set_requires_grad(bool on) {
    auto& n = node_ref();
    if (!n.leaf) throw UsageError("set_requires_grad: only leaf tensors may be toggled");
    n.requires_grad = on;
    if (!on) n.grad.clear();
  }

  bool has_grad() const { return !node_ref().grad.empty(); }

  const std::vector<double>& grad() const {
    const auto& n = node_ref();
    if (n.grad.empty()) throw UsageError("grad(): no gradient present (run backward first)");
    return n.grad;
  }

  void zero_grad() {
    auto& n = node_ref();
    if (n.requires_grad) n.grad.assign(n.data.size(), 0.0);
  }

  /// Value copy detached from the graph.
  Tensor detach() const { return from_data(shape(), data(), false); }

  std::shared_ptr<detail::Node> node_handle() const { return n_; }

 private:
  detail::Node& node_ref() const {
    if (!n_) throw UsageError("operation on undefined tensor");
    return *n_;
  }
  std::shared_ptr<detail::Node> n_;
};

namespace detail {

inline std::shared_ptr<Node> node_of(const Tensor& t) { return t.node_handle(); }

/// Wraps op output data into a tensor, wiring graph edges when tracking.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                          std::initializer_list<Tensor> inputs,
                          std::function<void(Node&)> backward_fn) {
  check_finite(data, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_mode()) {
    for (const Tensor& t : inputs) {
      if (t.defined() && t.requires_grad()) {
        node->requires_grad = true;
        node->parents.push_back(node_of(t));
      }
    }
    if (node->requires_grad) node->backward_fn = std::move(backward_fn);
  }
  return Tensor(node);
}

inline void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor argument");
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require_defined(op, a);
  require_defined(op, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size())
    throw ShapeError(std::string(op) + ": rank mismatch (" + std::to_string(sa.size()) + " vs " +
                     std::to_string(sb.size()) + ")");
  for (size_t i = 0; i < sa.size(); ++i) {
    if (sa[i] != sb[i])
      throw ShapeError(std::string(op) + ": shape mismatch at axis " + std::to_string(i) + " (" +
                       std::to_string(sa[i]) + " vs " + std::to_string(sb[i]) + ")");
  }
}

inline void accumulate(std::vector<double>& dst, const std::vector<double>& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

/// Runs reverse-mode accumulation from a scalar loss. Leaf gradients
/// accumulate across calls; interior gradients are reset per call, so two
/// backwards from one graph (with leaves zeroed between) agree exactly.
inline void backward(const Tensor& loss) {
  detail::require_defined("backward", loss);
  if (!loss.requires_grad()) throw UsageError("backward: tensor does not track gradients");
  if (loss.numel() != 1) throw UsageError("backward: loss must be scalar, shape " + shape_str(loss.shape()));

  auto root = loss.node_handle();
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  struct Frame {
    detail::Node* n;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      detail::Node* p = f.n->parents[f.next++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  for (detail::Node* n : order) {
    if (n->backward_fn) n->grad.clear();
  }
  root->grad_buf()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  auto an = detail::node_of(a);
  auto bn = detail::node_of(b);
  return detail::make_result("add", a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
    if (an->requires_grad) detail::accumulate(an->grad_buf(), self.grad);
    if (bn->requires_grad) detail::accumulate(bn->grad_buf(), self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  auto an = detail::node_of(a);
  auto bn = detail::node_of(b);
  return detail::make_result("sub", a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
    if (an->requires_grad) detail::accumulate(an->grad_buf(), self.grad);
    if (bn->requires_grad) {
      auto& g = bn->grad_buf();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

/// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  auto an = detail::node_of(a);
  auto bn = detail::node_of(b);
  return detail::make_result("mul", a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buf();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buf();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
    }
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("div", a, b);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] / bd[i];
  auto an = detail::node_of(a);
  auto bn = detail::node_of(b);
  return detail::make_result("div", a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buf();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / bn->data[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buf();
      for (size_t i = 0; i < g.size(); ++i)
        g[i] -= self.grad[i] * an->data[i] / (bn->data[i] * bn->data[i]);
    }
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  detail::require_defined("add_scalar", a);
  std::vector<double> out(a.data());
  for (double& v : out) v += s;
  auto an = detail::node_of(a);
  return detail::make_result("add_scalar", a.shape(), std::move(out), {a}, [an](detail::Node& self) {
    if (an->requires_grad) detail::accumulate(an->grad_buf(), self.grad);
  });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
  detail::require_defined("mul_scalar", a);
  std::vector<double> out(a.data());
  for (double& v : out) v *= s;
  auto an = detail::node_of(a);
  return detail::make_result("mul_scalar", a.shape(), std::move(out), {a}, [an, s](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buf();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    }
  });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

/// s - x, elementwise.
inline Tensor rsub_scalar(const Tensor& a, double s) {
  detail::require_defined("rsub_scalar", a);
  std::vector<double> out(a.data());
  for (double& v : out) v = s - v;
  auto an = detail::node_of(a);
  return detail::make_result("rsub_scalar", a.shape(), std::move(out), {a}, [an](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buf();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

/// Subgradient at 0 is defined as 0 for reproducible gradient tests.
inline Tensor relu(const Tensor& a) {
  detail::require_defined("relu", a);
  std::vector<double> out(a.data());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto an = detail::node_of(a);
  return detail::make_result("relu", a.shape(), std::move(out), {a}, [an](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buf();
      for (size_t i = 0; i < g.size(); ++i)
        if (an->data[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  detail::require_defined("sigmoid", a);
  std::vector<double> out(a.data());
  for (double& v : out) v = sigmoid_scalar(v);
  auto an = detail::node_of(a);
  auto on = std::make_shared<std::vector<double>>(out);
  return detail::make_result("sigmoid", a.shape(), std::move(out), {a}, [an, on](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buf();
      for (size_t i = 0; i < g.size(); ++i) {
        double y = (*on)[i];
        g[i] += self.grad[i] * y * (1.0 - y);
      }
    }
  });
}

inline double softplus_scalar(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

inline Tensor softplus(const Tensor& a) {
  detail::require_defined("softplus", a);
  std::vector<double> out(a.data());
  for (double& v : out) v = softplus_scalar(v);
  auto an = detail::node_of(a);
  return detail::make_result("softplus", a.shape(), std::move(out), {a}, [an](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buf();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * sigmoid_scalar(an->data[i]);
    }
  });
}

inline Tensor exp(const Tensor& a) {
  detail::require_defined("exp", a);
  std::vector<double> out(a.data());
  for (double& v : out) v = std::exp(v);
  auto an = detail::node_of(a);
  auto on = std::make_shared<std::vector<double>>(out);
  return detail::make_result("exp", a.shape(), std::move(out), {a}, [an, on](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buf();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*on)[i];
    }
  });
}

inline Tensor log(const Tensor& a) {
  detail::require_defined("log", a);
  std::vector<double> out(a.data());
  for (double& v : out) v = std::log(v);
  auto an = detail::node_of(a);
  return detail::make_result("log", a.shape(), std::move(out), {a}, [an](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buf();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / an->data[i];
    }
  });
}

/// Gradient passes where lo <= x <= hi, is cut where the clamp is active.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  detail::require_defined("clamp", a);
  if (!(lo <= hi)) throw ConfigError("clamp: lo must not exceed hi");
  std::vector<double> out(a.data());
  for (double& v : out) v = std::min(hi, std::max(lo, v));
  auto an = detail::node_of(a);
  return detail::make_result("clamp", a.shape(), std::move(out), {a}, [an, lo, hi](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buf();
      for (size_t i = 0; i < g.size(); ++i) {
        double x = an->data[i];
        if (x >= lo && x <= hi) g[i] += self.grad[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, const Shape& shape) {
  detail::require_defined("reshape", a);
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " (" + std::to_string(a.numel()) +
                     " values) as " + shape_str(shape));
  std::vector<double> out(a.data());
  auto an = detail::node_of(a);
  return detail::make_result("reshape", shape, std::move(out), {a}, [an](detail::Node& self) {
    if (an->requires_grad) detail::accumulate(an->grad_buf(), self.grad);
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  int nd = static_cast<int>(s0.size());
  if (axis < 0 || axis >= nd) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    detail::require_defined("concat", p);
    const Shape& s = p.shape();
    if (static_cast<int>(s.size()) != nd) throw ShapeError("concat: rank mismatch between inputs");
    for (int i = 0; i < nd; ++i) {
      if (i != axis && s[i] != s0[i])
        throw ShapeError("concat: shape mismatch at axis " + std::to_string(i) + " (" +
                         std::to_string(s0[i]) + " vs " + std::to_string(s[i]) + ")");
    }
    out_shape[axis] += s[axis];
  }
  long long outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (int i = axis + 1; i < nd; ++i) inner *= s0[i];

  std::vector<double> out(shape_numel(out_shape));
  long long out_axis_stride = static_cast<long long>(out_shape[axis]) * inner;
  long long fill = 0;
  std::vector<long long> offsets(parts.size());
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    offsets[pi] = fill;
    const auto& pd = parts[pi].data();
    long long blk = static_cast<long long>(parts[pi].shape()[axis]) * inner;
    for (long long o = 0; o < outer; ++o)
      std::copy_n(pd.data() + o * blk, blk, out.data() + o * out_axis_stride + fill);
    fill += blk;
  }

  std::vector<Tensor> inputs(parts);
  std::vector<std::shared_ptr<detail::Node>> nodes;
  nodes.reserve(parts.size());
  for (const Tensor& p : parts) nodes.push_back(detail::node_of(p));

  auto node = std::make_shared<detail::Node>();
  node->shape = out_shape;
  node->data = std::move(out);
  detail::check_finite(node->data, "concat");
  if (grad_enabled()) {
    for (const Tensor& p : parts)
      if (p.requires_grad()) {
        node->requires_grad = true;
        node->parents.push_back(detail::node_of(p));
      }
    if (node->requires_grad) {
      node->backward_fn = [nodes, offsets, outer, inner, out_axis_stride](detail::Node& self) {
        for (size_t pi = 0; pi < nodes.size(); ++pi) {
          auto& p = nodes[pi];
          if (!p->requires_grad) continue;
          auto& g = p->grad_buf();
          long long blk = static_cast<long long>(g.size()) / outer;
          for (long long o = 0; o < outer; ++o) {
            const double* src = self.grad.data() + o * out_axis_stride + offsets[pi];
            double* dst = g.data() + o * blk;
            for (long long i = 0; i < blk; ++i) dst[i] += src[i];
          }
        }
      };
    }
  }
  return Tensor(node);
}

inline std::vector<int> inverse_permutation(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size(), -1);
  for (size_t t = 0; t < perm.size(); ++t) {
    int v = perm[t];
    if (v < 0 || v >= static_cast<int>(perm.size()) || inv[v] != -1)
      throw PathError("permutation not bijective over 0.." + std::to_string(perm.size() - 1));
    inv[v] = static_cast<int>(t);
  }
  return inv;
}

/// Reorders indices along one axis: out[..., i, ...] = x[..., perm[i], ...].
inline Tensor permute_axis(const Tensor& a, int axis, const std::vector<int>& perm) {
  detail::require_defined("permute_axis", a);
  const Shape& s = a.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError("permute_axis: axis " + std::to_string(axis) + " out of range");
  if (static_cast<int>(perm.size()) != s[axis])
    throw PathError("permute_axis: permutation length " + std::to_string(perm.size()) +
                    " does not match axis extent " + std::to_string(s[axis]));
  std::vector<int> inv = inverse_permutation(perm);  // validates bijectivity

  long long outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  long long n = s[axis];

  const auto& ad = a.data();
  std::vector<double> out(ad.size());
  for (long long o = 0; o < outer; ++o) {
    const double* src = ad.data() + o * n * inner;
    double* dst = out.data() + o * n * inner;
    for (long long i = 0; i < n; ++i)
      std::copy_n(src + static_cast<long long>(perm[i]) * inner, inner, dst + i * inner);
  }
  auto an = detail::node_of(a);
  return detail::make_result("permute_axis", s, std::move(out), {a},
                             [an, inv, outer, n, inner](detail::Node& self) {
                               if (!an->requires_grad) return;
                               auto& g = an->grad_buf();
                               for (long long o = 0; o < outer; ++o) {
                                 const double* src = self.grad.data() + o * n * inner;
                                 double* dst = g.data() + o * n * inner;
                                 for (long long i = 0; i < n; ++i) {
                                   const double* sp = src + static_cast<long long>(inv[i]) * inner;
                                   double* dp = dst + i * inner;
                                   for (long long j = 0; j < inner; ++j) dp[j] += sp[j];
                                 }
                               }
                             });
}

/// Reorders axis-0 rows by a permutation; inverted by the inverse permutation.
inline Tensor permute_rows(const Tensor& a, const std::vector<int>& perm) {
  return permute_axis(a, 0, perm);
}

/// General axis transpose (copying): out dims are shape[axes[i]].
inline Tensor permute_axes(const Tensor& a, const std::vector<int>& axes) {
  detail::require_defined("permute_axes", a);
  const Shape& s = a.shape();
  if (axes.size() != s.size()) throw ShapeError("permute_axes: axes list must name every axis once");
  std::vector<int> check = inverse_permutation(axes);  // validates
  Shape out_shape(s.size());
  for (size_t i = 0; i < axes.size(); ++i) out_shape[i] = s[axes[i]];

  int nd = static_cast<int>(s.size());
  std::vector<long long> in_strides(nd, 1);
  for (int i = nd - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * s[i + 1];
  std::vector<long long> step(nd);
  for (int i = 0; i < nd; ++i) step[i] = in_strides[axes[i]];

  const auto& ad = a.data();
  std::vector<double> out(ad.size());
  std::vector<int> idx(nd, 0);
  long long src = 0;
  for (long long o = 0; o < static_cast<long long>(out.size()); ++o) {
    out[o] = ad[src];
    for (int i = nd - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) {
        src += step[i];
        break;
      }
      idx[i] = 0;
      src -= step[i] * (out_shape[i] - 1);
    }
  }
  auto an = detail::node_of(a);
  std::vector<int> inv_axes(check.begin(), check.end());
  return detail::make_result(
      "permute_axes", out_shape, std::move(out), {a},
      [an, inv_axes, out_shape](detail::Node& self) {
        if (!an->requires_grad) return;
        // scatter back: grad wrt input = transpose of self.grad by inverse axes
        int nd = static_cast<int>(out_shape.size());
        std::vector<long long> g_strides(nd, 1);
        for (int i = nd - 2; i >= 0; --i) g_strides[i] = g_strides[i + 1] * out_shape[i + 1];
        std::vector<long long> step(nd);
        Shape tgt_shape(nd);
        for (int i = 0; i < nd; ++i) {
          step[i] = g_strides[inv_axes[i]];
          tgt_shape[i] = out_shape[inv_axes[i]];
        }
        auto& g = an->grad_buf();
        std::vector<int> idx(nd, 0);
        long long src = 0;
        for (long long o = 0; o < static_cast<long long>(g.size()); ++o) {
          g[o] += self.grad[src];
          for (int i = nd - 1; i >= 0; --i) {
            if (++idx[i] < tgt_shape[i]) {
              src += step[i];
              break;
            }
            idx[i] = 0;
            src -= step[i] * (tgt_shape[i] - 1);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions, broadcast, matmul
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& a) {
  detail::require_defined("sum_all", a);
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto an = detail::node_of(a);
  return detail::make_result("sum_all", {1}, {s}, {a}, [an](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buf();
      double gv = self.grad[0];
      for (double& x : g) x += gv;
    }
  });
}

inline Tensor mean_all(const Tensor& a) {
  detail::require_defined("mean_all", a);
  double s = 0.0;
  for (double v : a.data()) s += v;
  double inv_n = 1.0 / static_cast<double>(a.numel());
  auto an = detail::node_of(a);
  return detail::make_result("mean_all", {1}, {s * inv_n}, {a}, [an, inv_n](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buf();
      double gv = self.grad[0] * inv_n;
      for (double& x : g) x += gv;
    }
  });
}

/// x + r where r.shape is a strict suffix of x.shape (broadcast over the
/// leading axes). Used for position tables and sequence biases.
inline Tensor add_broadcast(const Tensor& x, const Tensor& r) {
  detail::require_defined("add_broadcast", x);
  detail::require_defined("add_broadcast", r);
  const Shape& xs = x.shape();
  const Shape& rs = r.shape();
  if (rs.size() >= xs.size()) throw ShapeError("add_broadcast: rhs rank must be smaller than lhs rank");
  size_t off = xs.size() - rs.size();
  for (size_t i = 0; i < rs.size(); ++i) {
    if (xs[off + i] != rs[i])
      throw ShapeError("add_broadcast: shape mismatch at axis " + std::to_string(off + i) + " (" +
                       std::to_string(xs[off + i]) + " vs " + std::to_string(rs[i]) + ")");
  }
  const auto& xd = x.data();
  const auto& rd = r.data();
  long long rn = static_cast<long long>(rd.size());
  std::vector<double> out(xd.size());
  for (long long i = 0; i < static_cast<long long>(out.size()); ++i) out[i] = xd[i] + rd[i % rn];
  auto xn = detail::node_of(x);
  auto rnode = detail::node_of(r);
  return detail::make_result("add_broadcast", xs, std::move(out), {x, r}, [xn, rnode, rn](detail::Node& self) {
    if (xn->requires_grad) detail::accumulate(xn->grad_buf(), self.grad);
    if (rnode->requires_grad) {
      auto& g = rnode->grad_buf();
      for (long long i = 0; i < static_cast<long long>(self.grad.size()); ++i) g[i % rn] += self.grad[i];
    }
  });
}

namespace detail {

// C[M,N] (+)= A[M,K] * B[K,N]; parallel over rows, inner order fixed, so the
// result is bit-identical for any thread count.
inline void matmul_nn_raw(const double* A, const double* B, double* C, long long M, long long K,
                          long long N, bool accumulate) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < M; ++i) {
    double* ci = C + i * N;
    if (!accumulate) std::fill(ci, ci + N, 0.0);
    const double* ai = A + i * K;
    for (long long k = 0; k < K; ++k) {
      double a = ai[k];
      const double* bk = B + k * N;
      for (long long j = 0; j < N; ++j) ci[j] += a * bk[j];
    }
  }
}

// C[M,N] (+)= A[M,K] * B[N,K]^T. The dot product uses an explicit simd
// reduction; the lane order is fixed at compile time, so results stay
// bit-identical across runs.
inline void matmul_nt_raw(const double* A, const double* B, double* C, long long M, long long K,
                          long long N, bool accumulate) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < M; ++i) {
    const double* ai = A + i * K;
    double* ci = C + i * N;
    for (long long j = 0; j < N; ++j) {
      const double* bj = B + j * K;
      double s = 0.0;
#ifdef _OPENMP
#pragma omp simd reduction(+ : s)
#endif
      for (long long k = 0; k < K; ++k) s += ai[k] * bj[k];
      if (accumulate)
        ci[j] += s;
      else
        ci[j] = s;
    }
  }
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
inline void matmul_tn_raw(const double* A, const double* B, double* C, long long M, long long K,
                          long long N, bool accumulate) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < M; ++i) {
    double* ci = C + i * N;
    if (!accumulate) std::fill(ci, ci + N, 0.0);
    for (long long k = 0; k < K; ++k) {
      double a = A[k * M + i];
      const double* bk = B + k * N;
      for (long long j = 0; j < N; ++j) ci[j] += a * bk[j];
    }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_defined("matmul", a);
  detail::require_defined("matmul", b);
  if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("matmul: both operands must be rank-2");
  long long M = a.dim(0), K = a.dim(1), K2 = b.dim(0), N = b.dim(1);
  if (K != K2)
    throw ShapeError("matmul: inner axis mismatch (lhs axis 1 = " + std::to_string(K) +
                     ", rhs axis 0 = " + std::to_string(K2) + ")");
  std::vector<double> out(M * N);
  detail::matmul_nn_raw(a.data().data(), b.data().data(), out.data(), M, K, N, false);
  auto an = detail::node_of(a);
  auto bn = detail::node_of(b);
  return detail::make_result("matmul", {static_cast<int>(M), static_cast<int>(N)}, std::move(out),
                             {a, b}, [an, bn, M, K, N](detail::Node& self) {
                               if (an->requires_grad) {
                                 // dA += G * B^T
                                 detail::matmul_nt_raw(self.grad.data(), bn->data.data(),
                                                       an->grad_buf().data(), M, N, K, true);
                               }
                               if (bn->requires_grad) {
                                 // dB += A^T * G
                                 detail::matmul_tn_raw(an->data.data(), self.grad.data(),
                                                       bn->grad_buf().data(), K, M, N, true);
                               }
                             });
}

}  // namespace crackseg
