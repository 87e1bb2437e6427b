#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "aesrl/mlp.hpp"

namespace aesrl::testing {

/// Largest relative error between an analytic gradient and central
/// differences of f, over every coordinate. Coordinates whose gradients are
/// both tiny are compared against an absolute floor.
inline double max_relative_error(const std::function<double(const Vec&)>& f, const Vec& x,
                                 const Vec& analytic, double h = 1e-4) {
  double worst = 0.0;
  Vec xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + h;
    const double fp = f(xp);
    xp[i] = orig - h;
    const double fm = f(xp);
    xp[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-3});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
  }
  return worst;
}

/// Gradient check of L = sum(w .* mlp(x)) with respect to every parameter.
inline double mlp_param_gradcheck(const FlatParams& p, const Mat& x, const Mat& w) {
  ForwardCache cache;
  mlp_forward(p, x, &cache);
  const Vec analytic = mlp_backward(p, cache, w).params;
  auto loss = [&](const Vec& theta) {
    FlatParams q{theta, p.spec};
    return (mlp_forward(q, x).array() * w.array()).sum();
  };
  return max_relative_error(loss, p.data, analytic);
}

}  // namespace aesrl::testing
