#pragma once
// Central finite-difference checks against the tape's reverse-mode gradients (double only).

#include <algorithm>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gradet/tensor.hpp"
#include "oracles.hpp"

namespace gradcheck {

using T = gradet::Tensor<double>;

enum class Stencil { ThreePoint, FivePoint };

inline double derivative(Stencil s, const std::function<double()>& f, double& x, double h) {
  return s == Stencil::ThreePoint ? oracle::central_difference(f, x, h) : oracle::central_difference4(f, x, h);
}

struct Result {
  double max_rel_error = 0.0;
  std::string worst;  // "input[i]"
  std::size_t checked = 0;
};

/// Reverse-mode gradients of `f` with respect to `inputs`.
inline std::vector<gradet::Vector<double>> analytic(const std::vector<T*>& inputs, const std::function<T()>& f) {
  for (T* t : inputs) {
    t->set_requires_grad(true);
    t->zero_grad();
  }
  gradet::Tape<double> tape;
  {
    gradet::TapeScope<double> scope(tape);
    const T loss = f();
    tape.backward(loss);
  }
  std::vector<gradet::Vector<double>> grads;
  for (T* t : inputs) grads.push_back(t->has_grad() ? t->grad() : gradet::Vector<double>::Zero(t->size()));
  return grads;
}

/// Compares every coordinate (or `max_per_input` coordinates spread evenly) of every input.
inline Result check(const std::vector<T*>& inputs, const std::function<T()>& f, double h = 1e-5,
                    std::size_t max_per_input = 0, Stencil stencil = Stencil::ThreePoint) {
  const auto grads = analytic(inputs, f);
  const auto value = [&] { return f().item(); };  // no active tape: nothing is recorded
  Result r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    T& t = *inputs[k];
    const auto n = static_cast<std::size_t>(t.size());
    const std::size_t stride = max_per_input == 0 || n <= max_per_input ? 1 : n / max_per_input;
    for (std::size_t i = 0; i < n; i += stride) {
      const double fd = derivative(stencil, value, t.value()[static_cast<gradet::Index>(i)], h);
      const double err = oracle::relative_error(fd, grads[k][static_cast<gradet::Index>(i)]);
      ++r.checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = "input" + std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

/// Derivative along a random +-1 direction per input, compared with grad . direction.
inline Result check_directional(const std::vector<T*>& inputs, const std::function<T()>& f, std::uint64_t seed,
                                double h = 1e-5, Stencil stencil = Stencil::ThreePoint) {
  const auto grads = analytic(inputs, f);
  std::mt19937_64 rng(seed);
  Result r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    T& t = *inputs[k];
    gradet::Vector<double> dir(t.size());
    for (gradet::Index i = 0; i < t.size(); ++i) dir[i] = (rng() & 1) ? 1.0 : -1.0;
    const gradet::Vector<double> saved = t.value();
    double step = 0.0;
    auto value = [&] {
      t.value() = saved + step * dir;
      return f().item();
    };
    const double fd = derivative(stencil, value, step, h);
    t.value() = saved;
    const double err = oracle::relative_error(fd, grads[k].dot(dir));
    ++r.checked;
    if (err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst = "input" + std::to_string(k) + " (directional)";
    }
  }
  return r;
}

inline T random_tensor(gradet::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  gradet::Vector<double> v(gradet::numel(shape));
  for (gradet::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return T(std::move(shape), std::move(v), true);
}

}  // namespace gradcheck
