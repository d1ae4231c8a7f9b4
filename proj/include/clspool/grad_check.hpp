#pragma once

#include <functional>
#include <vector>

#include "clspool/tape.hpp"

namespace clspool {

// Builds a scalar loss on the given tape. Parameters must be bound with
// tape.parameter() so that gradients reach them.
template <typename T>
using ScalarFunction = std::function<Var<T>(Tape<T>&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

// Compares reverse-mode gradients with central differences element by
// element and reports max |a - n| / max(1e-8, |a| + |n|).
// Throws EvaluationError if f is non-finite at any evaluated point.
template <typename T>
GradCheckResult grad_check(const ScalarFunction<T>& f, const std::vector<Array<T>*>& params, double step = 1e-5);

}  // namespace clspool
