#pragma once

// Reverse-mode autodiff over dense N-d tensors (NCHW for feature maps).
// Templated on the scalar type: float for training, double for gradient
// verification. Ops record nodes onto an implicit tape (monotone node ids);
// backward() walks reachable nodes in decreasing id order, which is reverse
// topological order by construction.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "semdepth/kernels.hpp"

namespace semdepth {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "(";
  for (std::size_t i = 0; i < s.size(); ++i)
    r += (i ? "," : "") + std::to_string(s[i]);
  return r + ")";
}

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }
  static Tensor filled(Shape shape, S v, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<Node<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(shape_size(t.node_->shape), v);
    t.node_->requires_grad = requires_grad;
    t.node_->id = Node<S>::next_id();
    return t;
  }
  static Tensor from(Shape shape, std::vector<S> data,
                     bool requires_grad = false) {
    if (shape_size(shape) != data.size())
      throw std::invalid_argument("tensor data size does not match shape " +
                                  shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    t.node_->id = Node<S>::next_id();
    return t;
  }
  static Tensor scalar(S v) { return from({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  const std::vector<S>& value() const { return node_->value; }
  std::vector<S>& value_mut() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }

  S item() const {
    if (size() != 1) throw std::logic_error("item() on non-scalar tensor");
    return node_->value[0];
  }

  // Gradient after backward(); zeros for leaves the loss never touched.
  std::vector<S> grad() const {
    if (node_->grad.empty()) return std::vector<S>(size(), S(0));
    return node_->grad;
  }

  std::shared_ptr<Node<S>> node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node<S>> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

// Every op output is checked for non-finite values; NaN/Inf from finite
// inputs is a hard error per the library contract.
inline bool& finite_checks() {
  static bool enabled = true;
  return enabled;
}

template <typename S>
void check_finite(const std::vector<S>& v, const char* op) {
  if (!finite_checks()) return;
  for (S x : v)
    if (!std::isfinite(static_cast<double>(x)))
      throw std::runtime_error(std::string("non-finite value produced by op '") +
                               op + "'");
}

template <typename S>
Tensor<S> make_result(Shape shape, std::vector<S> value,
                      std::vector<Tensor<S>> parents,
                      std::function<void(Node<S>&)> backward_fn,
                      const char* op) {
  check_finite(value, op);
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (auto& p : parents) {
    if (p.node()->requires_grad) n->requires_grad = true;
    n->parents.push_back(p.node());
  }
  n->id = Node<S>::next_id();
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return Tensor<S>(n);
}

template <typename S>
void ensure_grad(Node<S>& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), S(0));
}

// Right-aligned numpy-style broadcast of two shapes.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()));
  for (std::size_t k = 0; k < out.size(); ++k) {
    int da = k < out.size() - a.size() ? 1 : a[k - (out.size() - a.size())];
    int db = k < out.size() - b.size() ? 1 : b[k - (out.size() - b.size())];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("shapes not broadcastable: " + shape_str(a) +
                                  " vs " + shape_str(b));
    out[k] = std::max(da, db);
  }
  return out;
}

// Strides of `shape` viewed as broadcast to `out` (0 where broadcast).
inline std::vector<std::size_t> broadcast_strides(const Shape& shape,
                                                  const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t stride = 1;
  for (int k = static_cast<int>(shape.size()) - 1; k >= 0; --k) {
    std::size_t pos = out.size() - shape.size() + k;
    st[pos] = (shape[k] == 1 && out[pos] != 1) ? 0 : stride;
    stride *= static_cast<std::size_t>(shape[k]);
  }
  return st;
}

struct BroadcastIter {
  Shape out;
  std::vector<std::size_t> sa, sb;
  bool trivial;  // equal shapes: flat indexing everywhere
};

inline BroadcastIter make_bcast(const Shape& a, const Shape& b) {
  BroadcastIter it;
  it.out = broadcast_shape(a, b);
  it.trivial = (a == b);
  if (!it.trivial) {
    it.sa = broadcast_strides(a, it.out);
    it.sb = broadcast_strides(b, it.out);
  }
  return it;
}

// Invokes fn(out_flat, a_flat, b_flat) for every output element.
template <class Fn>
void for_bcast(const BroadcastIter& it, Fn&& fn) {
  const std::size_t n = shape_size(it.out);
  if (it.trivial) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  const std::size_t rank = it.out.size();
  std::vector<int> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (int k = static_cast<int>(rank) - 1; k >= 0; --k) {
      ++idx[k];
      ia += it.sa[k];
      ib += it.sb[k];
      if (idx[k] < it.out[k]) break;
      ia -= static_cast<std::size_t>(it.out[k]) * it.sa[k];
      ib -= static_cast<std::size_t>(it.out[k]) * it.sb[k];
      idx[k] = 0;
    }
  }
}

template <typename S, class F, class DA, class DB>
Tensor<S> binary_op(const Tensor<S>& a, const Tensor<S>& b, F f, DA da, DB db,
                    const char* name) {
  auto it = make_bcast(a.shape(), b.shape());
  std::vector<S> out(shape_size(it.out));
  const auto& av = a.value();
  const auto& bv = b.value();
  for_bcast(it, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out[i] = f(av[ia], bv[ib]);
  });
  auto pa = a.node();
  auto pb = b.node();
  return make_result<S>(
      it.out, std::move(out), {a, b},
      [it, pa, pb, da, db](Node<S>& n) {
        if (pa->requires_grad) ensure_grad(*pa);
        if (pb->requires_grad) ensure_grad(*pb);
        for_bcast(it, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          const S g = n.grad[i];
          if (pa->requires_grad)
            pa->grad[ia] += g * da(pa->value[ia], pb->value[ib]);
          if (pb->requires_grad)
            pb->grad[ib] += g * db(pa->value[ia], pb->value[ib]);
        });
      },
      name);
}

template <typename S, class F, class D>
Tensor<S> unary_op(const Tensor<S>& a, F f, D dfdx_from_xy, const char* name) {
  std::vector<S> out(a.size());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  auto pa = a.node();
  return make_result<S>(
      a.shape(), std::move(out), {a},
      [pa, dfdx_from_xy](Node<S>& n) {
        ensure_grad(*pa);
        for (std::size_t i = 0; i < n.value.size(); ++i)
          pa->grad[i] += n.grad[i] * dfdx_from_xy(pa->value[i], n.value[i]);
      },
      name);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic (broadcasting, numpy-style right alignment)

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
      [](S, S) { return S(1); }, "add");
}
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
      [](S, S) { return S(-1); }, "sub");
}
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x * y; }, [](S, S y) { return y; },
      [](S x, S) { return x; }, "mul");
}
template <typename S>
Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x / y; }, [](S, S y) { return S(1) / y; },
      [](S x, S y) { return -x / (y * y); }, "div");
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, S c) {
  return a + Tensor<S>::scalar(c);
}
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, S c) {
  return a - Tensor<S>::scalar(c);
}
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, S c) {
  return a * Tensor<S>::scalar(c);
}
template <typename S>
Tensor<S> operator*(S c, const Tensor<S>& a) {
  return a * Tensor<S>::scalar(c);
}
template <typename S>
Tensor<S> operator/(const Tensor<S>& a, S c) {
  return a / Tensor<S>::scalar(c);
}
template <typename S>
Tensor<S> operator-(const Tensor<S>& a) {
  return a * S(-1);
}

// Elementwise minimum; ties route the gradient to the first argument.
template <typename S>
Tensor<S> minimum(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x < y ? x : y; },
      [](S x, S y) { return x <= y ? S(1) : S(0); },
      [](S x, S y) { return x <= y ? S(0) : S(1); }, "minimum");
}

// ---------------------------------------------------------------------------
// elementwise functions

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return detail::unary_op(
      a,
      [](S x) {
        return x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                         : std::exp(x) / (S(1) + std::exp(x));
      },
      [](S, S y) { return y * (S(1) - y); }, "sigmoid");
}

template <typename S>
Tensor<S> elu(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return x > S(0) ? x : std::exp(x) - S(1); },
      [](S x, S y) { return x > S(0) ? S(1) : y + S(1); }, "elu");
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::exp(x); }, [](S, S y) { return y; }, "exp");
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; },
      "log");
}

// sqrt(x + eps); eps keeps the derivative finite at zero.
template <typename S>
Tensor<S> sqrt_eps(const Tensor<S>& a, S eps = S(1e-8)) {
  return detail::unary_op(
      a, [eps](S x) { return std::sqrt(x + eps); },
      [](S, S y) { return S(0.5) / y; }, "sqrt");
}

template <typename S>
Tensor<S> abs(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::abs(x); },
      [](S x, S) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); },
      "abs");
}

template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  return detail::unary_op(
      a, [lo, hi](S x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](S x, S) { return (x >= lo && x <= hi) ? S(1) : S(0); },
      "clamp");
}

template <typename S>
Tensor<S> sin(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::sin(x); }, [](S x, S) { return std::cos(x); },
      "sin");
}

template <typename S>
Tensor<S> cos(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::cos(x); }, [](S x, S) { return -std::sin(x); },
      "cos");
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  S acc = S(0);
  for (S x : a.value()) acc += x;
  auto pa = a.node();
  return detail::make_result<S>(
      {1}, {acc}, {a},
      [pa](Node<S>& n) {
        detail::ensure_grad(*pa);
        for (auto& g : pa->grad) g += n.grad[0];
      },
      "sum");
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  return sum(a) / S(static_cast<double>(a.size()));
}

// Sum along one axis, keeping it with extent 1.
template <typename S>
Tensor<S> sum(const Tensor<S>& a, int axis) {
  const Shape& s = a.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::invalid_argument("sum: bad axis");
  Shape out_shape = s;
  out_shape[axis] = 1;
  std::size_t outer = 1, inner = 1;
  for (int k = 0; k < axis; ++k) outer *= s[k];
  for (std::size_t k = axis + 1; k < s.size(); ++k) inner *= s[k];
  const std::size_t ext = s[axis];
  std::vector<S> out(outer * inner, S(0));
  const auto& av = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < ext; ++e)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += av[(o * ext + e) * inner + i];
  auto pa = a.node();
  return detail::make_result<S>(
      out_shape, std::move(out), {a},
      [pa, outer, inner, ext](Node<S>& n) {
        detail::ensure_grad(*pa);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t e = 0; e < ext; ++e)
            for (std::size_t i = 0; i < inner; ++i)
              pa->grad[(o * ext + e) * inner + i] += n.grad[o * inner + i];
      },
      "sum_axis");
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a, int axis) {
  return sum(a, axis) / S(static_cast<double>(a.shape()[axis]));
}

// Per-slice maximum along `axis`, detached from the tape (used only as the
// stabilizing shift inside softmax).
template <typename S>
Tensor<S> max_detached(const Tensor<S>& a, int axis) {
  const Shape& s = a.shape();
  Shape out_shape = s;
  out_shape[axis] = 1;
  std::size_t outer = 1, inner = 1;
  for (int k = 0; k < axis; ++k) outer *= s[k];
  for (std::size_t k = axis + 1; k < s.size(); ++k) inner *= s[k];
  const std::size_t ext = s[axis];
  std::vector<S> out(outer * inner, -std::numeric_limits<S>::infinity());
  const auto& av = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < ext; ++e)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] =
            std::max(out[o * inner + i], av[(o * ext + e) * inner + i]);
  return Tensor<S>::from(out_shape, std::move(out));
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
  auto e = exp(a - max_detached(a, axis));
  return e / sum(e, axis);
}

template <typename S>
Tensor<S> log_softmax(const Tensor<S>& a, int axis) {
  auto shifted = a - max_detached(a, axis);
  return shifted - log(sum(exp(shifted), axis));
}

template <typename S>
Tensor<S> l2_normalize(const Tensor<S>& a, int axis, S eps = S(1e-8)) {
  return a / sqrt_eps(sum(a * a, axis), eps);
}

// ---------------------------------------------------------------------------
// structural ops

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size())
      throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t k = 0; k < s.size(); ++k)
      if (static_cast<int>(k) != axis && s[k] != s0[k])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(s) +
                                    " vs " + shape_str(s0));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (int k = 0; k < axis; ++k) outer *= s0[k];
  for (std::size_t k = axis + 1; k < s0.size(); ++k) inner *= s0[k];
  std::vector<S> out(shape_size(out_shape));
  const std::size_t out_ext = out_shape[axis];
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t ext = p.shape()[axis];
    const auto& pv = p.value();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t e = 0; e < ext; ++e)
        for (std::size_t i = 0; i < inner; ++i)
          out[(o * out_ext + offset + e) * inner + i] =
              pv[(o * ext + e) * inner + i];
    offset += ext;
  }
  std::vector<std::shared_ptr<Node<S>>> pnodes;
  std::vector<std::size_t> exts;
  for (const auto& p : parts) {
    pnodes.push_back(p.node());
    exts.push_back(p.shape()[axis]);
  }
  return detail::make_result<S>(
      out_shape, std::move(out), parts,
      [pnodes, exts, outer, inner, out_ext](Node<S>& n) {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < pnodes.size(); ++pi) {
          auto& p = *pnodes[pi];
          const std::size_t ext = exts[pi];
          if (p.requires_grad) {
            detail::ensure_grad(p);
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t e = 0; e < ext; ++e)
                for (std::size_t i = 0; i < inner; ++i)
                  p.grad[(o * ext + e) * inner + i] +=
                      n.grad[(o * out_ext + offset + e) * inner + i];
          }
          offset += ext;
        }
      },
      "concat");
}

// Elementwise sum of equally shaped tensors, accumulated in ascending value
// order per element so the result does not depend on the input order.
template <typename S>
Tensor<S> ordered_sum(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("ordered_sum: no inputs");
  const Shape& s0 = parts[0].shape();
  for (const auto& p : parts)
    if (p.shape() != s0)
      throw std::invalid_argument("ordered_sum: shape mismatch");
  const std::size_t n = shape_size(s0);
  std::vector<S> out(n);
  std::vector<S> buf(parts.size());
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < parts.size(); ++p) buf[p] = parts[p].value()[j];
    std::sort(buf.begin(), buf.end());
    S acc = 0;
    for (S v : buf) acc += v;
    out[j] = acc;
  }
  std::vector<std::shared_ptr<Node<S>>> pnodes;
  for (const auto& p : parts) pnodes.push_back(p.node());
  return detail::make_result<S>(
      s0, std::move(out), parts,
      [pnodes](Node<S>& nd) {
        for (const auto& pn : pnodes) {
          auto& p = *pn;
          if (!p.requires_grad) continue;
          detail::ensure_grad(p);
          for (std::size_t j = 0; j < nd.grad.size(); ++j)
            p.grad[j] += nd.grad[j];
        }
      },
      "ordered_sum");
}

// Contiguous slice along one axis.
template <typename S>
Tensor<S> slice(const Tensor<S>& a, int axis, int start, int len) {
  const Shape& s = a.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()) || start < 0 || len <= 0 ||
      start + len > s[axis])
    throw std::invalid_argument("slice: bad range");
  Shape out_shape = s;
  out_shape[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (int k = 0; k < axis; ++k) outer *= s[k];
  for (std::size_t k = axis + 1; k < s.size(); ++k) inner *= s[k];
  const std::size_t ext = s[axis];
  std::vector<S> out(outer * len * inner);
  const auto& av = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (int e = 0; e < len; ++e)
      for (std::size_t i = 0; i < inner; ++i)
        out[(o * len + e) * inner + i] = av[(o * ext + start + e) * inner + i];
  auto pa = a.node();
  return detail::make_result<S>(
      out_shape, std::move(out), {a},
      [pa, outer, inner, ext, start, len](Node<S>& n) {
        detail::ensure_grad(*pa);
        for (std::size_t o = 0; o < outer; ++o)
          for (int e = 0; e < len; ++e)
            for (std::size_t i = 0; i < inner; ++i)
              pa->grad[(o * ext + start + e) * inner + i] +=
                  n.grad[(o * len + e) * inner + i];
      },
      "slice");
}

// Single element as a scalar tensor (used to unpack pose vectors).
template <typename S>
Tensor<S> at(const Tensor<S>& a, std::size_t index) {
  if (index >= a.size()) throw std::out_of_range("at: index out of range");
  auto pa = a.node();
  return detail::make_result<S>(
      {1}, {a.value()[index]}, {a},
      [pa, index](Node<S>& n) {
        detail::ensure_grad(*pa);
        pa->grad[index] += n.grad[0];
      },
      "at");
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw std::invalid_argument("reshape: size mismatch");
  auto pa = a.node();
  return detail::make_result<S>(
      std::move(shape), a.value(), {a},
      [pa](Node<S>& n) {
        detail::ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          pa->grad[i] += n.grad[i];
      },
      "reshape");
}

template <typename S>
Tensor<S> detach(const Tensor<S>& a) {
  return Tensor<S>::from(a.shape(), a.value());
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: need (M,K)x(K,N)");
  const int M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  std::vector<S> out(static_cast<std::size_t>(M) * N, S(0));
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k) {
      const S x = av[m * K + k];
      for (int n = 0; n < N; ++n) out[m * N + n] += x * bv[k * N + n];
    }
  auto pa = a.node();
  auto pb = b.node();
  return detail::make_result<S>(
      {M, N}, std::move(out), {a, b},
      [pa, pb, M, K, N](Node<S>& n) {
        if (pa->requires_grad) {
          detail::ensure_grad(*pa);
          for (int m = 0; m < M; ++m)
            for (int k = 0; k < K; ++k) {
              S acc = S(0);
              for (int j = 0; j < N; ++j)
                acc += n.grad[m * N + j] * pb->value[k * N + j];
              pa->grad[m * K + k] += acc;
            }
        }
        if (pb->requires_grad) {
          detail::ensure_grad(*pb);
          for (int k = 0; k < K; ++k)
            for (int j = 0; j < N; ++j) {
              S acc = S(0);
              for (int m = 0; m < M; ++m)
                acc += pa->value[m * K + k] * n.grad[m * N + j];
              pb->grad[k * N + j] += acc;
            }
        }
      },
      "matmul");
}

// ---------------------------------------------------------------------------
// spatial ops (NCHW)

using kernels::Padding;

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 int stride = 1, Padding pad = Padding::Zero) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1])
    throw std::invalid_argument("conv2d: need NCHW input and OIKK weight, got " +
                                shape_str(xs) + " and " + shape_str(ws));
  if (ws[2] != ws[3] || (ws[2] != 1 && ws[2] != 3))
    throw std::invalid_argument("conv2d: kernel must be 1x1 or 3x3");
  if (stride != 1 && stride != 2)
    throw std::invalid_argument("conv2d: stride must be 1 or 2");
  const int N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
  const int Cout = ws[0], K = ws[2], P = K / 2;
  const int Ho = (H + 2 * P - K) / stride + 1;
  const int Wo = (W + 2 * P - K) / stride + 1;
  const bool has_bias = b.defined();
  if (has_bias && (b.shape().size() != 1 || b.shape()[0] != Cout))
    throw std::invalid_argument("conv2d: bias must have shape (Cout)");
  std::vector<S> out(static_cast<std::size_t>(N) * Cout * Ho * Wo);
  kernels::conv2d_forward(x.value().data(), w.value().data(),
                          has_bias ? b.value().data() : nullptr, out.data(), N,
                          Cin, H, W, Cout, K, stride, pad);
  std::vector<Tensor<S>> parents = {x, w};
  if (has_bias) parents.push_back(b);
  auto px = x.node();
  auto pw = w.node();
  auto pb = has_bias ? b.node() : nullptr;
  return detail::make_result<S>(
      {N, Cout, Ho, Wo}, std::move(out), parents,
      [px, pw, pb, N, Cin, H, W, Cout, K, stride, pad](Node<S>& n) {
        if (px->requires_grad) {
          detail::ensure_grad(*px);
          kernels::conv2d_backward_input(n.grad.data(), pw->value.data(),
                                         px->grad.data(), N, Cin, H, W, Cout,
                                         K, stride, pad);
        }
        if (pw->requires_grad) {
          detail::ensure_grad(*pw);
          if (pb) detail::ensure_grad(*pb);
          kernels::conv2d_backward_weight(n.grad.data(), px->value.data(),
                                          pw->grad.data(),
                                          pb ? pb->grad.data() : nullptr, N,
                                          Cin, H, W, Cout, K, stride, pad);
        }
      },
      "conv2d");
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, int stride = 1,
                 Padding pad = Padding::Zero) {
  return conv2d(x, w, Tensor<S>(), stride, pad);
}

// 3x3 mean filter, stride 1, reflect padding.
template <typename S>
Tensor<S> avg_pool3(const Tensor<S>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("avg_pool3: need NCHW");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  std::vector<S> out(x.size());
  kernels::avg_pool3_forward(x.value().data(), out.data(), N, C, H, W);
  auto px = x.node();
  return detail::make_result<S>(
      s, std::move(out), {x},
      [px, N, C, H, W](Node<S>& n) {
        detail::ensure_grad(*px);
        kernels::avg_pool3_backward(n.grad.data(), px->grad.data(), N, C, H, W);
      },
      "avg_pool3");
}

template <typename S>
Tensor<S> upsample2x_nearest(const Tensor<S>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("upsample2x: need NCHW");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  std::vector<S> out(static_cast<std::size_t>(N) * C * 4 * H * W);
  const auto& xv = x.value();
  for (int nc = 0; nc < N * C; ++nc) {
    const S* ip = xv.data() + static_cast<std::size_t>(nc) * H * W;
    S* op = out.data() + static_cast<std::size_t>(nc) * 4 * H * W;
    for (int y = 0; y < 2 * H; ++y)
      for (int x2 = 0; x2 < 2 * W; ++x2)
        op[y * 2 * W + x2] = ip[(y / 2) * W + (x2 / 2)];
  }
  auto px = x.node();
  return detail::make_result<S>(
      {N, C, 2 * H, 2 * W}, std::move(out), {x},
      [px, N, C, H, W](Node<S>& n) {
        detail::ensure_grad(*px);
        for (int nc = 0; nc < N * C; ++nc) {
          const S* gp = n.grad.data() + static_cast<std::size_t>(nc) * 4 * H * W;
          S* ip = px->grad.data() + static_cast<std::size_t>(nc) * H * W;
          for (int y = 0; y < 2 * H; ++y)
            for (int x2 = 0; x2 < 2 * W; ++x2)
              ip[(y / 2) * W + (x2 / 2)] += gp[y * 2 * W + x2];
        }
      },
      "upsample2x");
}

namespace detail {
struct ResizeTap {
  int y0, x0;
  double fy, fx;
};
inline ResizeTap resize_tap(int oy, int ox, int H, int W, int Ho, int Wo) {
  ResizeTap t;
  double sy = (oy + 0.5) * static_cast<double>(H) / Ho - 0.5;
  double sx = (ox + 0.5) * static_cast<double>(W) / Wo - 0.5;
  sy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
  sx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
  t.y0 = std::min(static_cast<int>(sy), H - 2 < 0 ? 0 : H - 2);
  t.x0 = std::min(static_cast<int>(sx), W - 2 < 0 ? 0 : W - 2);
  t.fy = sy - t.y0;
  t.fx = sx - t.x0;
  return t;
}
}  // namespace detail

template <typename S>
Tensor<S> resize_bilinear(const Tensor<S>& x, int Ho, int Wo) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("resize_bilinear: need NCHW");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  const int y1off = H > 1 ? W : 0, x1off = W > 1 ? 1 : 0;
  std::vector<S> out(static_cast<std::size_t>(N) * C * Ho * Wo);
  const auto& xv = x.value();
  for (int nc = 0; nc < N * C; ++nc) {
    const S* ip = xv.data() + static_cast<std::size_t>(nc) * H * W;
    S* op = out.data() + static_cast<std::size_t>(nc) * Ho * Wo;
    for (int y = 0; y < Ho; ++y)
      for (int x2 = 0; x2 < Wo; ++x2) {
        auto t = detail::resize_tap(y, x2, H, W, Ho, Wo);
        const S* p = ip + t.y0 * W + t.x0;
        op[y * Wo + x2] = static_cast<S>(
            (1 - t.fy) * ((1 - t.fx) * p[0] + t.fx * p[x1off]) +
            t.fy * ((1 - t.fx) * p[y1off] + t.fx * p[y1off + x1off]));
      }
  }
  auto px = x.node();
  return detail::make_result<S>(
      {N, C, Ho, Wo}, std::move(out), {x},
      [px, N, C, H, W, Ho, Wo, y1off, x1off](Node<S>& n) {
        detail::ensure_grad(*px);
        for (int nc = 0; nc < N * C; ++nc) {
          const S* gp = n.grad.data() + static_cast<std::size_t>(nc) * Ho * Wo;
          S* ip = px->grad.data() + static_cast<std::size_t>(nc) * H * W;
          for (int y = 0; y < Ho; ++y)
            for (int x2 = 0; x2 < Wo; ++x2) {
              auto t = detail::resize_tap(y, x2, H, W, Ho, Wo);
              const S g = gp[y * Wo + x2];
              S* p = ip + t.y0 * W + t.x0;
              p[0] += static_cast<S>(g * (1 - t.fy) * (1 - t.fx));
              p[x1off] += static_cast<S>(g * (1 - t.fy) * t.fx);
              p[y1off] += static_cast<S>(g * t.fy * (1 - t.fx));
              p[y1off + x1off] += static_cast<S>(g * t.fy * t.fx);
            }
        }
      },
      "resize_bilinear");
}

template <typename S>
Tensor<S> resize_nearest(const Tensor<S>& x, int Ho, int Wo) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("resize_nearest: need NCHW");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  std::vector<S> out(static_cast<std::size_t>(N) * C * Ho * Wo);
  std::vector<int> ys(Ho), xs2(Wo);
  for (int y = 0; y < Ho; ++y)
    ys[y] = std::min(static_cast<int>((y + 0.5) * H / Ho), H - 1);
  for (int x2 = 0; x2 < Wo; ++x2)
    xs2[x2] = std::min(static_cast<int>((x2 + 0.5) * W / Wo), W - 1);
  const auto& xv = x.value();
  for (int nc = 0; nc < N * C; ++nc)
    for (int y = 0; y < Ho; ++y)
      for (int x2 = 0; x2 < Wo; ++x2)
        out[(static_cast<std::size_t>(nc) * Ho + y) * Wo + x2] =
            xv[(static_cast<std::size_t>(nc) * H + ys[y]) * W + xs2[x2]];
  auto px = x.node();
  return detail::make_result<S>(
      {N, C, Ho, Wo}, std::move(out), {x},
      [px, N, C, H, W, Ho, Wo, ys, xs2](Node<S>& n) {
        detail::ensure_grad(*px);
        for (int nc = 0; nc < N * C; ++nc)
          for (int y = 0; y < Ho; ++y)
            for (int x2 = 0; x2 < Wo; ++x2)
              px->grad[(static_cast<std::size_t>(nc) * H + ys[y]) * W + xs2[x2]] +=
                  n.grad[(static_cast<std::size_t>(nc) * Ho + y) * Wo + x2];
      },
      "resize_nearest");
}

// Bilinear sampling of `src` at per-pixel coordinates (u, v), clamp-to-edge.
// src is (N,C,H,W); u and v are (N,1,H,W). Differentiable in src and coords;
// sub-differentiable at lattice points.
template <typename S>
Tensor<S> bilinear_sample(const Tensor<S>& src, const Tensor<S>& u,
                          const Tensor<S>& v) {
  const Shape& s = src.shape();
  if (s.size() != 4 || u.shape() != Shape{s[0], 1, s[2], s[3]} ||
      v.shape() != u.shape())
    throw std::invalid_argument("bilinear_sample: src NCHW, coords (N,1,H,W)");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  std::vector<S> out(src.size());
  kernels::bilinear_sample_forward(src.value().data(), u.value().data(),
                                   v.value().data(), out.data(), N, C, H, W);
  auto ps = src.node();
  auto pu = u.node();
  auto pv = v.node();
  return detail::make_result<S>(
      s, std::move(out), {src, u, v},
      [ps, pu, pv, N, C, H, W](Node<S>& n) {
        if (ps->requires_grad) detail::ensure_grad(*ps);
        if (pu->requires_grad) detail::ensure_grad(*pu);
        if (pv->requires_grad) detail::ensure_grad(*pv);
        for (int nn = 0; nn < N; ++nn) {
          const S* up = pu->value.data() + static_cast<std::size_t>(nn) * H * W;
          const S* vp = pv->value.data() + static_cast<std::size_t>(nn) * H * W;
          for (int k = 0; k < H * W; ++k) {
            S x = up[k], y = vp[k];
            const bool in_x = x > S(0) && x < S(W - 1);
            const bool in_y = y > S(0) && y < S(H - 1);
            x = std::min(std::max(x, S(0)), S(W - 1));
            y = std::min(std::max(y, S(0)), S(H - 1));
            int x0 = std::min(static_cast<int>(x), std::max(W - 2, 0));
            int y0 = std::min(static_cast<int>(y), std::max(H - 2, 0));
            const int x1 = W == 1 ? 0 : x0 + 1;
            const int y1 = H == 1 ? 0 : y0 + 1;
            const S fx = x - S(x0);
            const S fy = y - S(y0);
            S du = S(0), dv = S(0);
            for (int c = 0; c < C; ++c) {
              const std::size_t base = (static_cast<std::size_t>(nn) * C + c) * H * W;
              const S g = n.grad[base + k];
              const S v00 = ps->value[base + y0 * W + x0];
              const S v01 = ps->value[base + y0 * W + x1];
              const S v10 = ps->value[base + y1 * W + x0];
              const S v11 = ps->value[base + y1 * W + x1];
              if (ps->requires_grad) {
                ps->grad[base + y0 * W + x0] += g * (S(1) - fy) * (S(1) - fx);
                ps->grad[base + y0 * W + x1] += g * (S(1) - fy) * fx;
                ps->grad[base + y1 * W + x0] += g * fy * (S(1) - fx);
                ps->grad[base + y1 * W + x1] += g * fy * fx;
              }
              du += g * ((S(1) - fy) * (v01 - v00) + fy * (v11 - v10));
              dv += g * ((S(1) - fx) * (v10 - v00) + fx * (v11 - v01));
            }
            const std::size_t cbase = static_cast<std::size_t>(nn) * H * W;
            if (pu->requires_grad && in_x) pu->grad[cbase + k] += du;
            if (pv->requires_grad && in_y) pv->grad[cbase + k] += dv;
          }
        }
      },
      "bilinear_sample");
}

// ---------------------------------------------------------------------------
// backward pass

template <typename S>
void backward(const Tensor<S>& loss) {
  if (loss.size() != 1) throw std::logic_error("backward: loss must be scalar");
  if (!loss.node()->requires_grad)
    throw std::logic_error("backward: loss is detached from all parameters");
  // Collect reachable nodes; ids are assigned in construction order, so
  // descending id order is a reverse topological order.
  std::vector<Node<S>*> nodes;
  std::vector<Node<S>*> stack = {loss.node().get()};
  std::unordered_set<Node<S>*> seen;
  auto mark = [&](Node<S>* n) {
    if (seen.insert(n).second) {
      nodes.push_back(n);
      return true;
    }
    return false;
  };
  mark(loss.node().get());
  while (!stack.empty()) {
    Node<S>* n = stack.back();
    stack.pop_back();
    for (auto& p : n->parents)
      if (p->requires_grad && mark(p.get())) stack.push_back(p.get());
  }
  for (Node<S>* n : nodes) n->grad.assign(n->value.size(), S(0));
  std::sort(nodes.begin(), nodes.end(),
            [](Node<S>* a, Node<S>* b) { return a->id > b->id; });
  loss.node()->grad[0] = S(1);
  for (Node<S>* n : nodes)
    if (n->backward_fn) n->backward_fn(*n);
}

// Max over coordinates of |analytic - central difference| / max(1,|analytic|).
template <typename S>
S gradient_check(const std::function<Tensor<S>(const Tensor<S>&)>& f,
                 Tensor<S> x, S step) {
  Tensor<S> leaf = Tensor<S>::from(x.shape(), x.value(), true);
  Tensor<S> loss = f(leaf);
  backward(loss);
  std::vector<S> analytic = leaf.grad();
  S worst = S(0);
  for (std::size_t i = 0; i < leaf.size(); ++i) {
    std::vector<S> vp = x.value(), vm = x.value();
    vp[i] += step;
    vm[i] -= step;
    const S fp = f(Tensor<S>::from(x.shape(), vp)).item();
    const S fm = f(Tensor<S>::from(x.shape(), vm)).item();
    const S numeric = (fp - fm) / (S(2) * step);
    const S err = std::abs(analytic[i] - numeric) /
                  std::max(S(1), std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace semdepth
