#include "sdpt/gradcheck.hpp"

#include <cmath>

namespace sdpt {

double rel_error(double analytic, double numeric) {
  double diff = std::fabs(analytic - numeric);
  double scale = std::max(std::fabs(analytic), std::fabs(numeric));
  // Floor the denominator: near-zero gradients are compared absolutely so
  // central-difference roundoff (~1e-11 at eps=1e-5) cannot register as a
  // large relative error, while genuinely wrong small gradients still do.
  return diff / std::max(scale, 1e-3);
}

GradCheckReport check_gradients(const std::function<Tensor(const Tensor&)>& f,
                                const Tensor& x, double eps, double tolerance,
                                const std::vector<std::size_t>& coords) {
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  Tensor y = f(probe);
  if (y.numel() != 1) {
    throw ShapeError("check_gradients: f must return a scalar, got " +
                     shape_str(y.shape()));
  }
  if (!std::isfinite(y.scalar())) {
    throw NumericError("check_gradients: f(x) is not finite");
  }
  probe.zero_grad();
  y.backward();
  std::vector<double> analytic = probe.grad();

  std::vector<std::size_t> todo = coords;
  if (todo.empty()) {
    todo.resize(x.numel());
    for (std::size_t i = 0; i < todo.size(); ++i) todo[i] = i;
  }

  GradCheckReport report;
  NoGradGuard ng;
  for (std::size_t i : todo) {
    if (i >= x.numel()) {
      throw ShapeError("check_gradients: coordinate " + std::to_string(i) +
                       " out of range for " + shape_str(x.shape()));
    }
    Tensor xp = x.detach();
    xp.mutable_values()[i] += eps;
    Tensor xm = x.detach();
    xm.mutable_values()[i] -= eps;
    double fp = f(xp).scalar();
    double fm = f(xm).scalar();
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("check_gradients: perturbed evaluation is not finite");
    }
    double numeric = (fp - fm) / (2.0 * eps);
    double err = rel_error(analytic[i], numeric);
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric;
    }
    ++report.coords_checked;
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace sdpt
