#pragma once

#include <functional>

#include "i2v/tensor.hpp"

namespace i2v {

/// Compares the tape gradient of a scalar function against central
/// differences. Returns the largest per-coordinate relative error
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
///
/// Throws NumericError if f produces a non-finite value.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double step = 1e-5);

// Analytic gradient of a scalar function at x, via the tape.
std::vector<double> tape_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x);

}  // namespace i2v
