#ifndef SDPT_GRADCHECK_HPP
#define SDPT_GRADCHECK_HPP

#include <cstddef>
#include <functional>
#include <vector>

#include "sdpt/tensor.hpp"

namespace sdpt {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coords_checked = 0;
  bool passed = false;
};

// Compares reverse-mode gradients of the scalar-valued f against central
// finite differences, coordinate by coordinate. When `coords` is non-empty
// only those flat indices are probed. Throws NumericError if f evaluates to a
// non-finite value.
GradCheckReport check_gradients(const std::function<Tensor(const Tensor&)>& f,
                                const Tensor& x, double eps = 1e-5,
                                double tolerance = 1e-6,
                                const std::vector<std::size_t>& coords = {});

// Relative error with a floor that treats tiny |a|,|n| pairs as equal.
double rel_error(double analytic, double numeric);

}  // namespace sdpt

#endif
