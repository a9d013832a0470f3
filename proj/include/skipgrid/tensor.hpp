#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skipgrid/error.hpp"

namespace skipgrid {

using Shape = std::vector<int>;

inline long numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// True when `tail` equals the trailing dims of `full`; the broadcast rule for
// add/masked_fill is suffix-shaped, so the small operand tiles contiguously.
inline bool is_suffix_shape(const Shape& tail, const Shape& full) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

namespace detail {

template <typename S>
struct Payload {
  Shape shape;
  std::shared_ptr<std::vector<S>> value;
  std::shared_ptr<std::vector<S>> grad;  // empty vector until first use
  bool requires_grad = false;
};

}  // namespace detail

// Shared-ownership handle to a dense row-major buffer. Copies are cheap and
// alias the same storage; shape never changes after creation. Gradients live
// beside the values and accumulate until explicitly zeroed.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    long n = numel(shape);
    if (n <= 0 || shape.empty()) throw Error::dimension("tensor shape must have positive dims, got " + shape_str(shape));
    t.p_ = std::make_shared<detail::Payload<S>>();
    t.p_->shape = std::move(shape);
    t.p_->value = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n), S(0));
    t.p_->grad = std::make_shared<std::vector<S>>();
    t.p_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, S v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.p_->value->begin(), t.p_->value->end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (numel(shape) != static_cast<long>(data.size()))
      throw Error::dimension("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    Tensor t = zeros(std::move(shape), requires_grad);
    *t.p_->value = std::move(data);
    return t;
  }

  static Tensor scalar(S v, bool requires_grad = false) { return full({1}, v, requires_grad); }

  bool defined() const { return p_ != nullptr; }
  const Shape& shape() const { return p_->shape; }
  int ndim() const { return static_cast<int>(p_->shape.size()); }
  int dim(int i) const { return p_->shape[static_cast<std::size_t>(i)]; }
  long size() const { return static_cast<long>(p_->value->size()); }

  std::span<S> values() { return {p_->value->data(), p_->value->size()}; }
  std::span<const S> values() const { return {p_->value->data(), p_->value->size()}; }
  S item() const {
    if (size() != 1) throw Error::contract("item() on tensor of size " + std::to_string(size()));
    return (*p_->value)[0];
  }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool b) { p_->requires_grad = b; }

  bool grad_allocated() const { return !p_->grad->empty(); }
  std::span<S> grad() {
    ensure_grad();
    return {p_->grad->data(), p_->grad->size()};
  }
  std::span<const S> grad_view() const { return {p_->grad->data(), p_->grad->size()}; }
  void ensure_grad() {
    if (p_->grad->size() != p_->value->size()) p_->grad->assign(p_->value->size(), S(0));
  }
  void zero_grad() {
    if (!p_->grad->empty()) std::fill(p_->grad->begin(), p_->grad->end(), S(0));
  }

  // Same storage under a new shape (element count must match). Because value
  // and grad buffers are shared, gradient flow through a view needs no node.
  Tensor view_as(Shape shape) const {
    if (numel(shape) != size())
      throw Error::dimension("cannot view " + shape_str(p_->shape) + " as " + shape_str(shape));
    Tensor t;
    t.p_ = std::make_shared<detail::Payload<S>>(*p_);
    t.p_->shape = std::move(shape);
    return t;
  }

  std::shared_ptr<detail::Payload<S>> payload() const { return p_; }

 private:
  std::shared_ptr<detail::Payload<S>> p_;
};

// Define-by-run record of one forward pass. Recording order is topological by
// construction; backward walks it once, in reverse. Intermediate gradients are
// reset at the start of every backward pass while leaf (parameter) gradients
// accumulate until zeroed by the caller.
template <typename S>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  void set_recording(bool b) { recording_ = b; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void record(const Tensor<S>& result, std::function<void()> backward_fn) {
    nodes_.push_back({result.payload(), std::move(backward_fn)});
  }

  void run_backward(Tensor<S> loss) {
    if (loss.size() != 1)
      throw Error::contract("backward root must be scalar, got shape " + shape_str(loss.shape()));
    for (auto& node : nodes_) {
      auto& g = *node.result->grad;
      if (!g.empty()) std::fill(g.begin(), g.end(), S(0));
    }
    loss.ensure_grad();
    loss.grad()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->result->grad->empty()) continue;  // branch never reached from the root
      it->fn();
    }
  }

 private:
  struct Node {
    std::shared_ptr<detail::Payload<S>> result;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  bool recording_ = true;
};

template <typename S>
void backward(Tape<S>& tape, const Tensor<S>& loss) {
  tape.run_backward(loss);
}

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

template <typename S>
bool want_node(const Tape<S>& tape, std::initializer_list<const Tensor<S>*> operands) {
  if (!tape.recording()) return false;
  for (const Tensor<S>* t : operands)
    if ((*t).requires_grad()) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive differentiable operations. Each returns a fresh tensor and, when
// the tape is recording and an operand needs gradients, records a closure that
// scatters the result's gradient back onto its operands.
// ---------------------------------------------------------------------------

// a: [..., m, k] times b: [k, n] or [..., k, n]. A rank-2 b is shared across
// all leading dims of a (the linear-layer case) and collapses to one GEMM.
template <typename S>
Tensor<S> matmul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2)
    throw Error::dimension("matmul needs rank >= 2, got " + shape_str(as) + " x " + shape_str(bs));
  const int m = as[as.size() - 2];
  const int k = as[as.size() - 1];
  const int kb = bs[bs.size() - 2];
  const int n = bs[bs.size() - 1];
  if (k != kb)
    throw Error::dimension("matmul inner dims differ: " + shape_str(as) + " x " + shape_str(bs));
  const bool b_batched = bs.size() > 2;
  if (b_batched &&
      !std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2))
    throw Error::dimension("matmul batch dims differ: " + shape_str(as) + " x " + shape_str(bs));
  long batch = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];

  Shape out_shape = as;
  out_shape.back() = n;
  Tensor<S> y = Tensor<S>::zeros(out_shape);

  {
    const S* pa = a.values().data();
    const S* pb = b.values().data();
    S* py = y.values().data();
    if (!b_batched) {
      detail::MatMap<S>(py, batch * m, n).noalias() =
          detail::ConstMatMap<S>(pa, batch * m, k) * detail::ConstMatMap<S>(pb, k, n);
    } else {
      for (long i = 0; i < batch; ++i)
        detail::MatMap<S>(py + i * m * n, m, n).noalias() =
            detail::ConstMatMap<S>(pa + i * m * k, m, k) *
            detail::ConstMatMap<S>(pb + i * k * n, k, n);
    }
  }

  if (detail::want_node(tape, {&a, &b})) {
    y.set_requires_grad(true);
    Tensor<S> ac = a, bc = b, yc = y;
    tape.record(y, [ac, bc, yc, m, k, n, batch, b_batched]() mutable {
      std::span<const S> dy = yc.grad_view();
      if (ac.requires_grad()) {
        std::span<S> da = ac.grad();
        const S* pb = bc.values().data();
        if (!b_batched) {
          detail::MatMap<S>(da.data(), batch * m, k).noalias() +=
              detail::ConstMatMap<S>(dy.data(), batch * m, n) *
              detail::ConstMatMap<S>(pb, k, n).transpose();
        } else {
          for (long i = 0; i < batch; ++i)
            detail::MatMap<S>(da.data() + i * m * k, m, k).noalias() +=
                detail::ConstMatMap<S>(dy.data() + i * m * n, m, n) *
                detail::ConstMatMap<S>(pb + i * k * n, k, n).transpose();
        }
      }
      if (bc.requires_grad()) {
        std::span<S> db = bc.grad();
        const S* pa = ac.values().data();
        if (!b_batched) {
          detail::MatMap<S>(db.data(), k, n).noalias() +=
              detail::ConstMatMap<S>(pa, batch * m, k).transpose() *
              detail::ConstMatMap<S>(dy.data(), batch * m, n);
        } else {
          for (long i = 0; i < batch; ++i)
            detail::MatMap<S>(db.data() + i * k * n, k, n).noalias() +=
                detail::ConstMatMap<S>(pa + i * m * k, m, k).transpose() *
                detail::ConstMatMap<S>(dy.data() + i * m * n, m, n);
        }
      }
    });
  }
  return y;
}

// Elementwise sum; b may be any suffix-shaped operand of a (bias over the
// trailing dims). Gradient of b sum-reduces over the tiled leading dims.
template <typename S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  if (!is_suffix_shape(b.shape(), a.shape()))
    throw Error::dimension("add shapes incompatible: " + shape_str(a.shape()) + " + " +
                           shape_str(b.shape()));
  const long n = a.size();
  const long bn = b.size();
  Tensor<S> y = Tensor<S>::zeros(a.shape());
  {
    const S* pa = a.values().data();
    const S* pb = b.values().data();
    S* py = y.values().data();
    if (bn == n) {
      for (long i = 0; i < n; ++i) py[i] = pa[i] + pb[i];
    } else {
      for (long i = 0; i < n; ++i) py[i] = pa[i] + pb[i % bn];
    }
  }
  if (detail::want_node(tape, {&a, &b})) {
    y.set_requires_grad(true);
    Tensor<S> ac = a, bc = b, yc = y;
    tape.record(y, [ac, bc, yc, n, bn]() mutable {
      std::span<const S> dy = yc.grad_view();
      if (ac.requires_grad()) {
        std::span<S> da = ac.grad();
        for (long i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (bc.requires_grad()) {
        std::span<S> db = bc.grad();
        for (long i = 0; i < n; ++i) db[i % bn] += dy[i];
      }
    });
  }
  return y;
}

// Elementwise product, same shape only.
template <typename S>
Tensor<S> mul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw Error::dimension("mul shapes differ: " + shape_str(a.shape()) + " * " +
                           shape_str(b.shape()));
  const long n = a.size();
  Tensor<S> y = Tensor<S>::zeros(a.shape());
  for (long i = 0; i < n; ++i) y.values()[i] = a.values()[i] * b.values()[i];
  if (detail::want_node(tape, {&a, &b})) {
    y.set_requires_grad(true);
    Tensor<S> ac = a, bc = b, yc = y;
    tape.record(y, [ac, bc, yc, n]() mutable {
      std::span<const S> dy = yc.grad_view();
      if (ac.requires_grad()) {
        std::span<S> da = ac.grad();
        std::span<const S> vb = bc.values();
        for (long i = 0; i < n; ++i) da[i] += dy[i] * vb[i];
      }
      if (bc.requires_grad()) {
        std::span<S> db = bc.grad();
        std::span<const S> va = ac.values();
        for (long i = 0; i < n; ++i) db[i] += dy[i] * va[i];
      }
    });
  }
  return y;
}

// Multiply by a compile-time-known constant.
template <typename S>
Tensor<S> scale(Tape<S>& tape, const Tensor<S>& a, S c) {
  const long n = a.size();
  Tensor<S> y = Tensor<S>::zeros(a.shape());
  for (long i = 0; i < n; ++i) y.values()[i] = a.values()[i] * c;
  if (detail::want_node(tape, {&a})) {
    y.set_requires_grad(true);
    Tensor<S> ac = a, yc = y;
    tape.record(y, [ac, yc, c, n]() mutable {
      std::span<const S> dy = yc.grad_view();
      std::span<S> da = ac.grad();
      for (long i = 0; i < n; ++i) da[i] += dy[i] * c;
    });
  }
  return y;
}

// Reshape to an equal-size shape. Pure view: storage (values and gradients)
// is shared with the source, so no tape node is required.
template <typename S>
Tensor<S> reshape(Tape<S>& tape, const Tensor<S>& a, Shape shape) {
  Tensor<S> y = a.view_as(std::move(shape));
  y.set_requires_grad(a.requires_grad() && tape.recording());
  return y;
}

// Swap the last two dims (copying).
template <typename S>
Tensor<S> transpose_last2(Tape<S>& tape, const Tensor<S>& a) {
  const Shape& as = a.shape();
  if (as.size() < 2)
    throw Error::dimension("transpose needs rank >= 2, got " + shape_str(as));
  const int m = as[as.size() - 2];
  const int n = as[as.size() - 1];
  long batch = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
  Shape out_shape = as;
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor<S> y = Tensor<S>::zeros(out_shape);
  {
    const S* pa = a.values().data();
    S* py = y.values().data();
    for (long i = 0; i < batch; ++i)
      detail::MatMap<S>(py + i * m * n, n, m) =
          detail::ConstMatMap<S>(pa + i * m * n, m, n).transpose();
  }
  if (detail::want_node(tape, {&a})) {
    y.set_requires_grad(true);
    Tensor<S> ac = a, yc = y;
    tape.record(y, [ac, yc, m, n, batch]() mutable {
      std::span<const S> dy = yc.grad_view();
      std::span<S> da = ac.grad();
      for (long i = 0; i < batch; ++i)
        detail::MatMap<S>(da.data() + i * m * n, m, n).noalias() +=
            detail::ConstMatMap<S>(dy.data() + i * m * n, n, m).transpose();
    });
  }
  return y;
}

// Split the last dim into `parts` equal chunks.
template <typename S>
std::vector<Tensor<S>> split_last_dim(Tape<S>& tape, const Tensor<S>& a, int parts) {
  const Shape& as = a.shape();
  const int c = as.back();
  if (parts <= 0 || c % parts != 0)
    throw Error::dimension("cannot split last dim " + std::to_string(c) + " into " +
                           std::to_string(parts) + " parts");
  const int w = c / parts;
  const long rows = a.size() / c;
  Shape part_shape = as;
  part_shape.back() = w;
  std::vector<Tensor<S>> out;
  out.reserve(static_cast<std::size_t>(parts));
  for (int h = 0; h < parts; ++h) {
    Tensor<S> y = Tensor<S>::zeros(part_shape);
    const S* pa = a.values().data();
    S* py = y.values().data();
    for (long r = 0; r < rows; ++r)
      std::copy_n(pa + r * c + h * w, w, py + r * w);
    if (detail::want_node(tape, {&a})) {
      y.set_requires_grad(true);
      Tensor<S> ac = a, yc = y;
      const int off = h * w;
      tape.record(y, [ac, yc, rows, c, w, off]() mutable {
        std::span<const S> dy = yc.grad_view();
        std::span<S> da = ac.grad();
        for (long r = 0; r < rows; ++r)
          for (int j = 0; j < w; ++j) da[r * c + off + j] += dy[r * w + j];
      });
    }
    out.push_back(std::move(y));
  }
  return out;
}

// Concatenate along the last dim; all parts must agree on leading dims.
template <typename S>
Tensor<S> concat_last_dim(Tape<S>& tape, const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw Error::contract("concat of zero tensors");
  Shape lead = parts[0].shape();
  lead.pop_back();
  int c = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    int w = l.back();
    l.pop_back();
    if (l != lead)
      throw Error::dimension("concat leading dims differ: " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
    c += w;
  }
  Shape out_shape = parts[0].shape();
  out_shape.back() = c;
  const long rows = numel(lead);
  Tensor<S> y = Tensor<S>::zeros(out_shape);
  {
    S* py = y.values().data();
    int off = 0;
    for (const auto& p : parts) {
      const int w = p.shape().back();
      const S* pp = p.values().data();
      for (long r = 0; r < rows; ++r) std::copy_n(pp + r * w, w, py + r * c + off);
      off += w;
    }
  }
  bool any_grad = false;
  for (const auto& p : parts)
    if (p.requires_grad()) any_grad = true;
  if (tape.recording() && any_grad) {
    y.set_requires_grad(true);
    std::vector<Tensor<S>> pc = parts;
    Tensor<S> yc = y;
    tape.record(y, [pc, yc, rows, c]() mutable {
      std::span<const S> dy = yc.grad_view();
      int off = 0;
      for (auto& p : pc) {
        const int w = p.shape().back();
        if (p.requires_grad()) {
          std::span<S> dp = p.grad();
          for (long r = 0; r < rows; ++r)
            for (int j = 0; j < w; ++j) dp[r * w + j] += dy[r * c + off + j];
        }
        off += w;
      }
    });
  }
  return y;
}

// Row lookup into a [rows, width] table; the embedding op. Backward
// scatter-adds into the table rows, in id order.
template <typename S>
Tensor<S> gather_rows(Tape<S>& tape, const Tensor<S>& table, const std::vector<std::int32_t>& ids) {
  if (table.ndim() != 2)
    throw Error::dimension("gather_rows table must be rank 2, got " + shape_str(table.shape()));
  const int rows = table.dim(0);
  const int width = table.dim(1);
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || ids[i] >= rows)
      throw Error::index("gather_rows id " + std::to_string(ids[i]) + " at position " +
                         std::to_string(i) + " out of range [0," + std::to_string(rows) + ")");
  Tensor<S> y = Tensor<S>::zeros({static_cast<int>(ids.size()), width});
  {
    const S* pt = table.values().data();
    S* py = y.values().data();
    for (std::size_t i = 0; i < ids.size(); ++i)
      std::copy_n(pt + static_cast<long>(ids[i]) * width, width, py + static_cast<long>(i) * width);
  }
  if (detail::want_node(tape, {&table})) {
    y.set_requires_grad(true);
    Tensor<S> tc = table, yc = y;
    std::vector<std::int32_t> idc = ids;
    tape.record(y, [tc, yc, idc, width]() mutable {
      std::span<const S> dy = yc.grad_view();
      std::span<S> dt = tc.grad();
      for (std::size_t i = 0; i < idc.size(); ++i) {
        const long src = static_cast<long>(i) * width;
        const long dst = static_cast<long>(idc[i]) * width;
        for (int j = 0; j < width; ++j) dt[dst + j] += dy[src + j];
      }
    });
  }
  return y;
}

// Boolean pattern for masked_fill; 1 marks positions replaced by the fill
// value. Applied with suffix broadcast like add.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> fill_here;
};

inline Mask causal_mask(int t) {
  Mask m;
  m.shape = {t, t};
  m.fill_here.assign(static_cast<std::size_t>(t) * t, 0);
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) m.fill_here[static_cast<std::size_t>(i) * t + j] = 1;
  return m;
}

template <typename S>
Tensor<S> masked_fill(Tape<S>& tape, const Tensor<S>& a, const Mask& mask, S fill) {
  if (!is_suffix_shape(mask.shape, a.shape()))
    throw Error::dimension("mask shape " + shape_str(mask.shape) + " not a suffix of " +
                           shape_str(a.shape()));
  const long n = a.size();
  const long mn = numel(mask.shape);
  Tensor<S> y = Tensor<S>::zeros(a.shape());
  for (long i = 0; i < n; ++i)
    y.values()[i] = mask.fill_here[static_cast<std::size_t>(i % mn)] ? fill : a.values()[i];
  if (detail::want_node(tape, {&a})) {
    y.set_requires_grad(true);
    Tensor<S> ac = a, yc = y;
    std::vector<std::uint8_t> mk = mask.fill_here;
    tape.record(y, [ac, yc, mk, n, mn]() mutable {
      std::span<const S> dy = yc.grad_view();
      std::span<S> da = ac.grad();
      for (long i = 0; i < n; ++i)
        if (!mk[static_cast<std::size_t>(i % mn)]) da[i] += dy[i];
    });
  }
  return y;
}

// Softmax over the last dim, computed with max subtraction. Finite inputs
// only; -1e9-style mask sentinels are fine, NaN/inf are rejected.
template <typename S>
Tensor<S> softmax(Tape<S>& tape, const Tensor<S>& a) {
  const int n = a.shape().back();
  const long slices = a.size() / n;
  Tensor<S> y = Tensor<S>::zeros(a.shape());
  {
    const S* px = a.values().data();
    S* py = y.values().data();
    for (long s = 0; s < slices; ++s) {
      const S* x = px + s * n;
      S* o = py + s * n;
      S m = x[0];
      for (int j = 0; j < n; ++j) {
        if (!std::isfinite(static_cast<double>(x[j])))
          throw Error::numeric("softmax input is not finite");
        m = std::max(m, x[j]);
      }
      S sum = S(0);
      for (int j = 0; j < n; ++j) {
        o[j] = std::exp(x[j] - m);
        sum += o[j];
      }
      const S inv = S(1) / sum;
      for (int j = 0; j < n; ++j) o[j] *= inv;
    }
  }
  if (detail::want_node(tape, {&a})) {
    y.set_requires_grad(true);
    Tensor<S> ac = a, yc = y;
    tape.record(y, [ac, yc, n, slices]() mutable {
      std::span<const S> dy = yc.grad_view();
      std::span<const S> vy = yc.values();
      std::span<S> da = ac.grad();
      for (long s = 0; s < slices; ++s) {
        const long off = s * n;
        S dot = S(0);
        for (int j = 0; j < n; ++j) dot += dy[off + j] * vy[off + j];
        for (int j = 0; j < n; ++j) da[off + j] += vy[off + j] * (dy[off + j] - dot);
      }
    });
  }
  return y;
}

// Mean of all elements, as a scalar tensor.
template <typename S>
Tensor<S> mean(Tape<S>& tape, const Tensor<S>& a) {
  const long n = a.size();
  S acc = S(0);
  for (long i = 0; i < n; ++i) acc += a.values()[i];
  Tensor<S> y = Tensor<S>::scalar(acc / static_cast<S>(n));
  if (detail::want_node(tape, {&a})) {
    y.set_requires_grad(true);
    Tensor<S> ac = a, yc = y;
    tape.record(y, [ac, yc, n]() mutable {
      const S d = yc.grad_view()[0] / static_cast<S>(n);
      std::span<S> da = ac.grad();
      for (long i = 0; i < n; ++i) da[i] += d;
    });
  }
  return y;
}

template <typename S>
Tensor<S> relu(Tape<S>& tape, const Tensor<S>& a) {
  const long n = a.size();
  Tensor<S> y = Tensor<S>::zeros(a.shape());
  for (long i = 0; i < n; ++i) y.values()[i] = a.values()[i] > S(0) ? a.values()[i] : S(0);
  if (detail::want_node(tape, {&a})) {
    y.set_requires_grad(true);
    Tensor<S> ac = a, yc = y;
    tape.record(y, [ac, yc, n]() mutable {
      std::span<const S> dy = yc.grad_view();
      std::span<const S> va = ac.values();
      std::span<S> da = ac.grad();
      for (long i = 0; i < n; ++i)
        if (va[i] > S(0)) da[i] += dy[i];
    });
  }
  return y;
}

// GELU, tanh approximation.
template <typename S>
Tensor<S> gelu(Tape<S>& tape, const Tensor<S>& a) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  constexpr double kCubic = 0.044715;
  const long n = a.size();
  Tensor<S> y = Tensor<S>::zeros(a.shape());
  for (long i = 0; i < n; ++i) {
    const double x = static_cast<double>(a.values()[i]);
    const double t = std::tanh(kSqrt2OverPi * (x + kCubic * x * x * x));
    y.values()[i] = static_cast<S>(0.5 * x * (1.0 + t));
  }
  if (detail::want_node(tape, {&a})) {
    y.set_requires_grad(true);
    Tensor<S> ac = a, yc = y;
    tape.record(y, [ac, yc, n]() mutable {
      std::span<const S> dy = yc.grad_view();
      std::span<const S> va = ac.values();
      std::span<S> da = ac.grad();
      for (long i = 0; i < n; ++i) {
        const double x = static_cast<double>(va[i]);
        const double u = kSqrt2OverPi * (x + kCubic * x * x * x);
        const double t = std::tanh(u);
        const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * x * x);
        const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        da[i] += dy[i] * static_cast<S>(d);
      }
    });
  }
  return y;
}

// Per-slice standardization over the last dim, then gain * xhat + bias.
template <typename S>
Tensor<S> layernorm(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& gain,
                    const Tensor<S>& bias, S eps) {
  const int d = a.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw Error::dimension("layernorm params must be [" + std::to_string(d) + "], got gain " +
                           shape_str(gain.shape()) + " bias " + shape_str(bias.shape()));
  if (eps <= S(0)) throw Error::config("layernorm eps must be positive");
  const long slices = a.size() / d;
  Tensor<S> y = Tensor<S>::zeros(a.shape());
  auto xhat = std::make_shared<std::vector<S>>(a.size());
  auto inv_std = std::make_shared<std::vector<S>>(slices);
  {
    const S* px = a.values().data();
    const S* pg = gain.values().data();
    const S* pb = bias.values().data();
    S* py = y.values().data();
    for (long s = 0; s < slices; ++s) {
      const S* x = px + s * d;
      S mu = S(0);
      for (int j = 0; j < d; ++j) mu += x[j];
      mu /= static_cast<S>(d);
      S var = S(0);
      for (int j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
      var /= static_cast<S>(d);
      const S is = S(1) / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(s)] = is;
      for (int j = 0; j < d; ++j) {
        const S xh = (x[j] - mu) * is;
        (*xhat)[static_cast<std::size_t>(s * d + j)] = xh;
        py[s * d + j] = pg[j] * xh + pb[j];
      }
    }
  }
  if (detail::want_node(tape, {&a, &gain, &bias})) {
    y.set_requires_grad(true);
    Tensor<S> ac = a, gc = gain, bc = bias, yc = y;
    tape.record(y, [ac, gc, bc, yc, xhat, inv_std, d, slices]() mutable {
      std::span<const S> dy = yc.grad_view();
      for (long s = 0; s < slices; ++s) {
        const long off = s * d;
        if (ac.requires_grad()) {
          std::span<S> da = ac.grad();
          std::span<const S> vg = gc.values();
          S mean_g = S(0), mean_gx = S(0);
          for (int j = 0; j < d; ++j) {
            const S g = dy[off + j] * vg[j];
            mean_g += g;
            mean_gx += g * (*xhat)[static_cast<std::size_t>(off + j)];
          }
          mean_g /= static_cast<S>(d);
          mean_gx /= static_cast<S>(d);
          const S is = (*inv_std)[static_cast<std::size_t>(s)];
          for (int j = 0; j < d; ++j) {
            const S g = dy[off + j] * vg[j];
            da[off + j] +=
                is * (g - mean_g - (*xhat)[static_cast<std::size_t>(off + j)] * mean_gx);
          }
        }
        if (gc.requires_grad()) {
          std::span<S> dg = gc.grad();
          for (int j = 0; j < d; ++j)
            dg[j] += dy[off + j] * (*xhat)[static_cast<std::size_t>(off + j)];
        }
        if (bc.requires_grad()) {
          std::span<S> db = bc.grad();
          for (int j = 0; j < d; ++j) db[j] += dy[off + j];
        }
      }
    });
  }
  return y;
}

// Mean negative log-likelihood of integer targets under softmax(logits).
// logits: [positions, vocab]. Backward is (softmax - one_hot) / positions.
template <typename S>
Tensor<S> cross_entropy(Tape<S>& tape, const Tensor<S>& logits,
                        const std::vector<std::int32_t>& targets) {
  if (logits.ndim() != 2)
    throw Error::dimension("cross_entropy logits must be rank 2, got " +
                           shape_str(logits.shape()));
  const long rows = logits.dim(0);
  const int v = logits.dim(1);
  if (static_cast<long>(targets.size()) != rows)
    throw Error::dimension("cross_entropy target count " + std::to_string(targets.size()) +
                           " != logit rows " + std::to_string(rows));
  for (long i = 0; i < rows; ++i)
    if (targets[static_cast<std::size_t>(i)] < 0 || targets[static_cast<std::size_t>(i)] >= v)
      throw Error::index("cross_entropy target " +
                         std::to_string(targets[static_cast<std::size_t>(i)]) + " at row " +
                         std::to_string(i) + " out of range [0," + std::to_string(v) + ")");

  auto probs = std::make_shared<std::vector<S>>(logits.size());
  S total = S(0);
  {
    const S* pl = logits.values().data();
    for (long i = 0; i < rows; ++i) {
      const S* x = pl + i * v;
      S m = x[0];
      for (int j = 0; j < v; ++j) m = std::max(m, x[j]);
      S sum = S(0);
      for (int j = 0; j < v; ++j) {
        const S e = std::exp(x[j] - m);
        (*probs)[static_cast<std::size_t>(i * v + j)] = e;
        sum += e;
      }
      const S inv = S(1) / sum;
      for (int j = 0; j < v; ++j) (*probs)[static_cast<std::size_t>(i * v + j)] *= inv;
      const S lse = m + std::log(sum);
      total += lse - x[targets[static_cast<std::size_t>(i)]];
    }
  }
  Tensor<S> y = Tensor<S>::scalar(total / static_cast<S>(rows));
  if (detail::want_node(tape, {&logits})) {
    y.set_requires_grad(true);
    Tensor<S> lc = logits, yc = y;
    std::vector<std::int32_t> tc = targets;
    tape.record(y, [lc, yc, tc, probs, rows, v]() mutable {
      const S d = yc.grad_view()[0] / static_cast<S>(rows);
      std::span<S> dl = lc.grad();
      for (long i = 0; i < rows; ++i) {
        const long off = i * v;
        for (int j = 0; j < v; ++j) dl[off + j] += d * (*probs)[static_cast<std::size_t>(off + j)];
        dl[off + tc[static_cast<std::size_t>(i)]] -= d;
      }
    });
  }
  return y;
}

}  // namespace skipgrid
