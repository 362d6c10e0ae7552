#pragma once

#include <cmath>
#include <map>
#include <string>

#include "gradet/tensor.hpp"

namespace gradet {

template <typename Scalar>
using ParamMap = std::map<std::string, Tensor<Scalar>>;

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates per parameter, plus the step count.
template <typename Scalar>
struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, Vector<Scalar>> m;
  std::map<std::string, Vector<Scalar>> v;
};

/// Bias-corrected Adam: theta -= lr * m_hat / (sqrt(v_hat) + eps). Parameters without a
/// gradient buffer are treated as having zero gradient.
template <typename Scalar>
void adam_step(ParamMap<Scalar>& params, AdamState<Scalar>& state, const AdamOptions& opts) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(opts.beta1), b2 = static_cast<Scalar>(opts.beta2);
  for (auto& [name, p] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != p.size()) m = Vector<Scalar>::Zero(p.size());
    if (v.size() != p.size()) v = Vector<Scalar>::Zero(p.size());
    if (p.has_grad()) {
      const auto& g = p.grad();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    } else {
      m *= b1;
      v *= b2;
    }
    const auto step = static_cast<Scalar>(opts.lr / bc1);
    const auto inv_sqrt_bc2 = static_cast<Scalar>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<Scalar>(opts.eps);
    p.value().array() -= step * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`. Returns the norm
/// before clipping.
template <typename Scalar>
double clip_grad_norm(ParamMap<Scalar>& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, p] : params) {
    if (p.has_grad()) sq += static_cast<double>(p.grad().squaredNorm());
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const auto factor = static_cast<Scalar>(max_norm / (norm + 1e-6));
    for (auto& [name, p] : params) {
      if (p.has_grad()) p.grad() *= factor;
    }
  }
  return norm;
}

template <typename Scalar>
void zero_grad(ParamMap<Scalar>& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

}  // namespace gradet
