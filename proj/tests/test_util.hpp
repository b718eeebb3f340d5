#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "utlo/rng.hpp"
#include "utlo/tensor.hpp"

namespace utlo::testing {

// Central finite differences of a scalar-valued forward function w.r.t. the
// entries of x. The function must re-run the whole forward pass from the
// current tensor values on every call.
template <class S>
std::vector<double> finite_diff(Tensor<S> x, const std::function<double()>& forward,
                                double h = 1e-3) {
  std::vector<double> grad(x.size());
  for (int64_t i = 0; i < x.size(); ++i) {
    const S saved = x.data()[i];
    x.data()[i] = static_cast<S>(saved + h);
    const double up = forward();
    x.data()[i] = static_cast<S>(saved - h);
    const double down = forward();
    x.data()[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// rel error <= tol elementwise, with an absolute floor for entries near zero
// (floating-point noise in the finite differences).
template <class S>
::testing::AssertionResult grads_match(const std::vector<S>& analytic,
                                       const std::vector<double>& fd, double rel_tol = 1e-3,
                                       double abs_floor = 1e-6) {
  if (analytic.size() != fd.size())
    return ::testing::AssertionFailure() << "size mismatch " << analytic.size() << " vs " << fd.size();
  for (size_t i = 0; i < fd.size(); ++i) {
    const double a = static_cast<double>(analytic[i]);
    const double f = fd[i];
    const double err = std::abs(a - f);
    const double scale = std::max(std::abs(a), std::abs(f));
    if (err > std::max(rel_tol * scale, abs_floor))
      return ::testing::AssertionFailure()
             << "grad[" << i << "]: analytic " << a << " vs fd " << f << " (err " << err << ")";
  }
  return ::testing::AssertionSuccess();
}

template <class S>
Tensor<S> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = true) {
  auto t = Tensor<S>::zeros(std::move(shape), requires_grad);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

}  // namespace utlo::testing
