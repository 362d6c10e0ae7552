#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "gradet/random.hpp"
#include "gradet/tensor.hpp"

namespace gradet {

namespace detail {

template <typename Scalar>
bool recording(std::initializer_list<const Tensor<Scalar>*> inputs) {
  if (active_tape<Scalar>() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename Scalar, typename Fn>
void record(const char* op, Tensor<Scalar>& out, Fn&& fn) {
  out.set_requires_grad(true);
  active_tape<Scalar>()->record(op, out, std::forward<Fn>(fn));
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline Shape with_last(Shape shape, Index last) {
  shape.back() = last;
  return shape;
}

// (outer, mid, inner) decomposition of a shape around `axis`.
struct AxisSplit {
  Index outer, mid, inner;
};

inline AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

inline Index normalize_axis(Index axis, Index ndim, const char* op) {
  const Index a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(ndim));
  }
  return a;
}

}  // namespace detail

/// a: [..., m, k]; b: [k, n] (shared across leading dims) or [..., k, n] with the same leading dims.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using Map = typename Tensor<Scalar>::MatrixMap;
  using CMap = typename Tensor<Scalar>::ConstMatrixMap;
  if (a.ndim() < 2 || b.ndim() < 2 || a.dim(-1) != b.dim(-2)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const Index k = a.dim(-1), n = b.dim(-1);
  if (b.ndim() == 2) {
    const Index m = a.rows();
    Tensor<Scalar> out = Tensor<Scalar>::zeros(detail::with_last(a.shape(), n));
    out.matrix().noalias() = a.matrix() * CMap(b.data(), k, n);
    if (detail::recording({&a, &b})) {
      auto an = a.node(), bn = b.node(), on = out.node();
      detail::record("matmul", out, [an, bn, on, m, k, n] {
        CMap dout(on->grad.data(), m, n);
        if (an->requires_grad) Map(an->grad_buffer().data(), m, k).noalias() += dout * CMap(bn->value.data(), k, n).transpose();
        if (bn->requires_grad) Map(bn->grad_buffer().data(), k, n).noalias() += CMap(an->value.data(), m, k).transpose() * dout;
      });
    }
    return out;
  }
  if (a.ndim() != b.ndim() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    throw ShapeError("matmul: batch dims differ in " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const Index m = a.dim(-2);
  const Index batch = a.size() / (m * k);
  Shape shape = a.shape();
  shape.back() = n;
  Tensor<Scalar> out = Tensor<Scalar>::zeros(shape);
  for (Index i = 0; i < batch; ++i) {
    Map(out.data() + i * m * n, m, n).noalias() = CMap(a.data() + i * m * k, m, k) * CMap(b.data() + i * k * n, k, n);
  }
  if (detail::recording({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record("matmul", out, [an, bn, on, m, k, n, batch] {
      for (Index i = 0; i < batch; ++i) {
        CMap dout(on->grad.data() + i * m * n, m, n);
        if (an->requires_grad) {
          Map(an->grad_buffer().data() + i * m * k, m, k).noalias() +=
              dout * CMap(bn->value.data() + i * k * n, k, n).transpose();
        }
        if (bn->requires_grad) {
          Map(bn->grad_buffer().data() + i * k * n, k, n).noalias() +=
              CMap(an->value.data() + i * m * k, m, k).transpose() * dout;
        }
      }
    });
  }
  return out;
}

/// Elementwise sum. If shapes differ, the smaller must be a suffix of the larger and is
/// broadcast over the leading dims.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape() && !detail::is_suffix(b.shape(), a.shape())) {
    if (detail::is_suffix(a.shape(), b.shape())) return add(b, a);
    throw ShapeError("add: cannot broadcast " + to_string(b.shape()) + " to " + to_string(a.shape()));
  }
  const Index inner = b.size();
  const Index reps = a.size() / inner;
  Tensor<Scalar> out(a.shape(), a.value());
  Eigen::Map<RowMatrix<Scalar>>(out.data(), reps, inner).rowwise() += b.value().transpose();
  if (detail::recording({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record("add", out, [an, bn, on, reps, inner] {
      if (an->requires_grad) an->grad_buffer() += on->grad;
      if (bn->requires_grad) {
        bn->grad_buffer() += Eigen::Map<const RowMatrix<Scalar>>(on->grad.data(), reps, inner).colwise().sum().transpose();
      }
    });
  }
  return out;
}

/// Elementwise product with the same broadcasting rule as add.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape() && !detail::is_suffix(b.shape(), a.shape())) {
    if (detail::is_suffix(a.shape(), b.shape())) return mul(b, a);
    throw ShapeError("mul: cannot broadcast " + to_string(b.shape()) + " to " + to_string(a.shape()));
  }
  using Map = Eigen::Map<RowMatrix<Scalar>>;
  using CMap = Eigen::Map<const RowMatrix<Scalar>>;
  const Index inner = b.size();
  const Index reps = a.size() / inner;
  Tensor<Scalar> out(a.shape(), a.value());
  Map(out.data(), reps, inner).array().rowwise() *= b.value().transpose().array();
  if (detail::recording({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record("mul", out, [an, bn, on, reps, inner] {
      CMap dout(on->grad.data(), reps, inner);
      if (an->requires_grad) {
        Map(an->grad_buffer().data(), reps, inner).array() += dout.array().rowwise() * bn->value.transpose().array();
      }
      if (bn->requires_grad) {
        bn->grad_buffer() += (dout.array() * CMap(an->value.data(), reps, inner).array()).colwise().sum().matrix().transpose();
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape(), a.value() * s);
  if (detail::recording({&a})) {
    auto an = a.node(), on = out.node();
    detail::record("scale", out, [an, on, s] { an->grad_buffer() += on->grad * s; });
  }
  return out;
}

/// Swaps the last two dims.
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  using Map = typename Tensor<Scalar>::MatrixMap;
  using CMap = typename Tensor<Scalar>::ConstMatrixMap;
  if (a.ndim() < 2) throw ShapeError("transpose: need rank >= 2, got " + to_string(a.shape()));
  const Index r = a.dim(-2), c = a.dim(-1);
  const Index batch = a.size() / (r * c);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor<Scalar> out = Tensor<Scalar>::zeros(shape);
  for (Index i = 0; i < batch; ++i) Map(out.data() + i * r * c, c, r) = CMap(a.data() + i * r * c, r, c).transpose();
  if (detail::recording({&a})) {
    auto an = a.node(), on = out.node();
    detail::record("transpose", out, [an, on, r, c, batch] {
      for (Index i = 0; i < batch; ++i) {
        Map(an->grad_buffer().data() + i * r * c, r, c) += CMap(on->grad.data() + i * r * c, c, r).transpose();
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  Tensor<Scalar> out(std::move(shape), a.value());
  if (detail::recording({&a})) {
    auto an = a.node(), on = out.node();
    detail::record("reshape", out, [an, on] { an->grad_buffer() += on->grad; });
  }
  return out;
}

/// Copies [begin, end) along `axis`.
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& a, Index axis, Index begin, Index end) {
  axis = detail::normalize_axis(axis, a.ndim(), "slice");
  const auto s = detail::split_at(a.shape(), axis);
  if (begin < 0 || end > s.mid || begin > end) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of bounds for " +
                     to_string(a.shape()) + " axis " + std::to_string(axis));
  }
  Shape shape = a.shape();
  shape[static_cast<std::size_t>(axis)] = end - begin;
  const Index len = (end - begin) * s.inner;
  Tensor<Scalar> out = Tensor<Scalar>::zeros(shape);
  for (Index o = 0; o < s.outer; ++o) {
    out.value().segment(o * len, len) = a.value().segment((o * s.mid + begin) * s.inner, len);
  }
  if (detail::recording({&a})) {
    auto an = a.node(), on = out.node();
    detail::record("slice", out, [an, on, s, begin, len] {
      auto& g = an->grad_buffer();
      for (Index o = 0; o < s.outer; ++o) g.segment((o * s.mid + begin) * s.inner, len) += on->grad.segment(o * len, len);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  axis = detail::normalize_axis(axis, parts[0].ndim(), "concat");
  Shape shape = parts[0].shape();
  Index total = 0;
  for (const auto& p : parts) {
    Shape expect = shape;
    expect[static_cast<std::size_t>(axis)] = p.dim(axis);
    if (p.shape() != expect) {
      throw ShapeError("concat: " + to_string(p.shape()) + " incompatible with " + to_string(shape) + " on axis " +
                       std::to_string(axis));
    }
    total += p.dim(axis);
  }
  shape[static_cast<std::size_t>(axis)] = total;
  const auto s = detail::split_at(shape, axis);
  Tensor<Scalar> out = Tensor<Scalar>::zeros(shape);
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : parts) {
    const Index len = p.dim(axis) * s.inner;
    for (Index o = 0; o < s.outer; ++o) {
      out.value().segment((o * s.mid + offset) * s.inner, len) = p.value().segment(o * len, len);
    }
    offsets.push_back(offset);
    offset += p.dim(axis);
  }
  bool any = false;
  for (const auto& p : parts) any = any || detail::recording<Scalar>({&p});
  if (any) {
    std::vector<std::shared_ptr<TensorNode<Scalar>>> nodes;
    std::vector<Index> widths;
    for (const auto& p : parts) {
      nodes.push_back(p.node());
      widths.push_back(p.dim(axis));
    }
    auto on = out.node();
    detail::record("concat", out, [nodes, widths, offsets, on, s] {
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (!nodes[k]->requires_grad) continue;
        const Index len = widths[k] * s.inner;
        auto& g = nodes[k]->grad_buffer();
        for (Index o = 0; o < s.outer; ++o) g.segment(o * len, len) += on->grad.segment((o * s.mid + offsets[k]) * s.inner, len);
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat(std::initializer_list<Tensor<Scalar>> parts, Index axis) {
  return concat(std::span<const Tensor<Scalar>>(parts.begin(), parts.size()), axis);
}

/// Softmax over the last dim. -inf entries get probability 0.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& a) {
  using Map = typename Tensor<Scalar>::MatrixMap;
  using CMap = typename Tensor<Scalar>::ConstMatrixMap;
  Tensor<Scalar> out(a.shape(), a.value());
  auto y = out.matrix();
  for (Index r = 0; r < y.rows(); ++r) {
    const Scalar mx = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - mx).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  if (detail::recording({&a})) {
    auto an = a.node(), on = out.node();
    const Index rows = y.rows(), cols = y.cols();
    detail::record("softmax", out, [an, on, rows, cols] {
      CMap yv(on->value.data(), rows, cols), dy(on->grad.data(), rows, cols);
      Map dx(an->grad_buffer().data(), rows, cols);
      const Vector<Scalar> dots = (dy.array() * yv.array()).rowwise().sum().matrix();
      dx.array() += yv.array() * (dy.array().colwise() - dots.array());
    });
  }
  return out;
}

/// Normalizes the last dim to zero mean and unit variance, then applies gain and bias.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias,
                          Scalar eps = Scalar(1e-5)) {
  using Map = typename Tensor<Scalar>::MatrixMap;
  using CMap = typename Tensor<Scalar>::ConstMatrixMap;
  const Index d = x.cols();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain " + to_string(gain.shape()) + " / bias " + to_string(bias.shape()) +
                     " do not match input " + to_string(x.shape()));
  }
  const Index rows = x.rows();
  auto xhat = std::make_shared<RowMatrix<Scalar>>(rows, d);
  auto rstd = std::make_shared<Vector<Scalar>>(rows);
  auto xm = x.matrix();
  for (Index r = 0; r < rows; ++r) {
    const Scalar mean = xm.row(r).mean();
    const Scalar var = (xm.row(r).array() - mean).square().mean();
    (*rstd)[r] = Scalar(1) / std::sqrt(var + eps);
    xhat->row(r) = (xm.row(r).array() - mean) * (*rstd)[r];
  }
  Tensor<Scalar> out = Tensor<Scalar>::zeros(x.shape());
  out.matrix() = (xhat->array().rowwise() * gain.value().transpose().array()).rowwise() + bias.value().transpose().array();
  if (detail::recording({&x, &gain, &bias})) {
    auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    detail::record("layer_norm", out, [xn, gn, bn, on, xhat, rstd, rows, d] {
      CMap dy(on->grad.data(), rows, d);
      if (gn->requires_grad) gn->grad_buffer() += (dy.array() * xhat->array()).colwise().sum().matrix().transpose();
      if (bn->requires_grad) bn->grad_buffer() += dy.colwise().sum().transpose();
      if (xn->requires_grad) {
        Map dx(xn->grad_buffer().data(), rows, d);
        const RowMatrix<Scalar> dxhat = (dy.array().rowwise() * gn->value.transpose().array()).matrix();
        for (Index r = 0; r < rows; ++r) {
          const Scalar m1 = dxhat.row(r).mean();
          const Scalar m2 = (dxhat.row(r).array() * xhat->row(r).array()).mean();
          dx.row(r).array() += (*rstd)[r] * (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2);
        }
      }
    });
  }
  return out;
}

/// Tanh approximation of GELU, as in GPT-2.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& a) {
  const Scalar c = static_cast<Scalar>(std::sqrt(2.0 / std::numbers::pi));
  const Scalar k = Scalar(0.044715);
  Tensor<Scalar> out(a.shape(), a.value());
  auto x = a.value().array();
  out.value().array() = Scalar(0.5) * x * (Scalar(1) + (c * (x + k * x.cube())).tanh());
  if (detail::recording({&a})) {
    auto an = a.node(), on = out.node();
    detail::record("gelu", out, [an, on, c, k] {
      auto xv = an->value.array();
      const auto t = (c * (xv + k * xv.cube())).tanh().eval();
      an->grad_buffer().array() +=
          on->grad.array() *
          (Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * xv * (Scalar(1) - t.square()) * c * (Scalar(1) + Scalar(3) * k * xv.square()));
    });
  }
  return out;
}

/// Rows of `table` ([V, D]) selected by `ids`: [n, D].
template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, std::span<const TokenId> ids) {
  if (table.ndim() != 2) throw ShapeError("embedding_lookup: table must be 2-D, got " + to_string(table.shape()));
  const Index v = table.dim(0), d = table.dim(1);
  const auto n = static_cast<Index>(ids.size());
  Tensor<Scalar> out = Tensor<Scalar>::zeros({n, d});
  for (Index i = 0; i < n; ++i) {
    const TokenId id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= v) {
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " out of range for table " + to_string(table.shape()));
    }
    out.matrix().row(i) = table.matrix().row(id);
  }
  if (detail::recording({&table})) {
    auto tn = table.node(), on = out.node();
    std::vector<TokenId> saved(ids.begin(), ids.end());
    detail::record("embedding_lookup", out, [tn, on, saved, v, d] {
      typename Tensor<Scalar>::MatrixMap g(tn->grad_buffer().data(), v, d);
      typename Tensor<Scalar>::ConstMatrixMap dy(on->grad.data(), static_cast<Index>(saved.size()), d);
      for (std::size_t i = 0; i < saved.size(); ++i) g.row(saved[i]) += dy.row(static_cast<Index>(i));
    });
  }
  return out;
}

/// Mean negative log-likelihood of `targets` under softmax(logits) over rows whose target
/// is not `ignore_index`. Zero when every row is ignored.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const TokenId> targets, TokenId ignore_index) {
  if (logits.ndim() != 2 || logits.dim(0) != static_cast<Index>(targets.size())) {
    throw ShapeError("cross_entropy: logits " + to_string(logits.shape()) + " vs " + std::to_string(targets.size()) +
                     " targets");
  }
  const Index rows = logits.dim(0), v = logits.dim(1);
  auto probs = std::make_shared<RowMatrix<Scalar>>(rows, v);
  auto lm = logits.matrix();
  Scalar total = 0;
  Index counted = 0;
  for (Index r = 0; r < rows; ++r) {
    const Scalar mx = lm.row(r).maxCoeff();
    probs->row(r) = (lm.row(r).array() - mx).exp().matrix();
    const Scalar z = probs->row(r).sum();
    probs->row(r) /= z;
    const TokenId t = targets[static_cast<std::size_t>(r)];
    if (t == ignore_index) continue;
    if (t < 0 || t >= v) throw ShapeError("cross_entropy: target " + std::to_string(t) + " out of range");
    total += -(lm(r, t) - mx - std::log(z));
    ++counted;
  }
  Tensor<Scalar> out = Tensor<Scalar>::scalar(counted > 0 ? total / static_cast<Scalar>(counted) : Scalar(0));
  if (detail::recording({&logits})) {
    auto ln = logits.node(), on = out.node();
    std::vector<TokenId> saved(targets.begin(), targets.end());
    detail::record("cross_entropy", out, [ln, on, probs, saved, ignore_index, counted, rows, v] {
      if (counted == 0) return;
      typename Tensor<Scalar>::MatrixMap dx(ln->grad_buffer().data(), rows, v);
      const Scalar g = on->grad[0] / static_cast<Scalar>(counted);
      for (Index r = 0; r < rows; ++r) {
        const TokenId t = saved[static_cast<std::size_t>(r)];
        if (t == ignore_index) continue;
        dx.row(r) += g * probs->row(r);
        dx(r, t) -= g;
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(a.value().sum());
  if (detail::recording({&a})) {
    auto an = a.node(), on = out.node();
    detail::record("sum", out, [an, on] { an->grad_buffer().array() += on->grad[0]; });
  }
  return out;
}

/// Inverted dropout: zeroes entries with probability p and scales survivors by 1/(1-p).
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  auto mask = std::make_shared<Vector<Scalar>>(a.size());
  const auto keep = static_cast<Scalar>(1.0 / (1.0 - p));
  for (Index i = 0; i < a.size(); ++i) (*mask)[i] = rng.bernoulli(p) ? Scalar(0) : keep;
  Tensor<Scalar> out(a.shape(), a.value().cwiseProduct(*mask));
  if (detail::recording({&a})) {
    auto an = a.node(), on = out.node();
    detail::record("dropout", out, [an, on, mask] { an->grad_buffer() += on->grad.cwiseProduct(*mask); });
  }
  return out;
}

/// [L, L] additive mask: 0 on and below the diagonal, -inf above.
template <typename Scalar>
Tensor<Scalar> causal_mask(Index length) {
  Tensor<Scalar> mask = Tensor<Scalar>::zeros({length, length});
  for (Index r = 0; r < length; ++r) {
    for (Index c = r + 1; c < length; ++c) mask.matrix()(r, c) = -std::numeric_limits<Scalar>::infinity();
  }
  return mask;
}

}  // namespace gradet
