#include "i2v/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "i2v/errors.hpp"

namespace i2v {

namespace {

double eval_scalar(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  const Tensor y = f(x);
  if (y.numel() != 1) throw DimensionError("grad_check: f must return a scalar, got " + shape_str(y.shape()));
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: f returned a non-finite value");
  return v;
}

}  // namespace

std::vector<double> tape_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  Tensor leaf = x.clone();
  leaf.set_requires_grad(true);
  Tape tape;
  Tensor y;
  {
    TapeScope scope(tape);
    y = f(leaf);
  }
  if (y.numel() != 1) throw DimensionError("grad_check: f must return a scalar, got " + shape_str(y.shape()));
  if (!std::isfinite(y.item())) throw NumericError("grad_check: f returned a non-finite value");
  tape.backward(y);
  if (!leaf.has_grad()) return std::vector<double>(leaf.numel(), 0.0);
  return {leaf.grad().begin(), leaf.grad().end()};
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
  const std::vector<double> analytic = tape_gradient(f, x);
  Tensor probe = x.clone();
  auto values = probe.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double up = eval_scalar(f, probe);
    values[i] = saved - step;
    const double down = eval_scalar(f, probe);
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace i2v
