#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "oodattack/random.hpp"
#include "oodattack/tensor.hpp"

namespace oodattack::testing {

inline constexpr double kFdStep = 1e-4;
// Componentwise relative error |a - b| / max(|a|, |b|, floor). The floor keeps entries that
// are zero up to rounding from dividing noise by noise.
inline constexpr double kRelFloor = 1e-3;

inline Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                 double h = kFdStep) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double max_relative_error(const Tensor& a, const Tensor& b, double floor = kRelFloor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

// A ReLU network is piecewise smooth. When a kink lies inside the stencil the central
// difference measures a secant, not the derivative. This check uses finite differences
// only: on a smooth stencil FD(h) and FD(h / 8) agree up to O(h^2) curvature terms.
inline bool smooth_on_stencil(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = kFdStep,
                              double tolerance = 1e-6) {
  return max_relative_error(central_difference(f, x, h), central_difference(f, x, h / 8.0)) < tolerance;
}

inline Tensor random_tensor(Rng& rng, Tensor::Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace oodattack::testing
