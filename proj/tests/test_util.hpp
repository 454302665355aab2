#pragma once

// Shared helpers for the test suite. The finite-difference oracle here only
// ever runs forward passes, so it stays independent of every backward rule
// it is used to verify.

#include <functional>
#include <vector>

#include "deeprnmt/rng.hpp"
#include "deeprnmt/tensor.hpp"

namespace testutil {

using deeprnmt::Real;
using deeprnmt::Rng;
using deeprnmt::Tensor;

inline Tensor random_tensor(deeprnmt::Shape shape, Rng& rng, bool requires_grad = true,
                            double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (Real& x : t.values()) x = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

// Central finite differences of a scalar-valued forward function with
// respect to one tensor.
inline std::vector<double> fd_grad(const std::function<double()>& forward, Tensor t,
                                   double eps = 1e-5) {
  std::vector<double> grad(t.values().size());
  auto& v = t.values();
  for (size_t i = 0; i < v.size(); ++i) {
    const Real saved = v[i];
    v[i] = saved + static_cast<Real>(eps);
    const double fp = forward();
    v[i] = saved - static_cast<Real>(eps);
    const double fm = forward();
    v[i] = saved;
    grad[i] = (fp - fm) / (2 * eps);
  }
  return grad;
}

// Worst |a-b| / max(1, |a|, |b|) across two gradient vectors.
inline double max_rel_err(const std::vector<Real>& analytic, const std::vector<double>& numeric) {
  double worst = 0;
  for (size_t i = 0; i < numeric.size(); ++i) {
    const double a = static_cast<double>(analytic[i]);
    const double n = numeric[i];
    worst = std::max(worst, std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)}));
  }
  return worst;
}

// Runs `build` under a fresh tape, backpropagates from its scalar result and
// compares every listed leaf's accumulated gradient against central
// differences.
inline double check_gradients(const std::function<deeprnmt::Tensor()>& build,
                              std::vector<Tensor> leaves, double eps = 1e-5) {
  for (Tensor& t : leaves) t.zero_grad();
  deeprnmt::Tape tape;
  {
    deeprnmt::Tape::Scope scope(tape);
    deeprnmt::Tensor loss = build();
    tape.backward(loss);
  }
  auto forward = [&]() { return static_cast<double>(build().item()); };
  double worst = 0;
  for (Tensor& t : leaves) {
    std::vector<Real> analytic =
        t.has_grad() ? t.grad() : std::vector<Real>(t.values().size(), Real(0));
    worst = std::max(worst, max_rel_err(analytic, fd_grad(forward, t, eps)));
  }
  for (Tensor& t : leaves) t.zero_grad();
  return worst;
}

}  // namespace testutil
