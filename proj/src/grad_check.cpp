#include "clspool/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace clspool {

namespace {

template <typename T>
T evaluate(const ScalarFunction<T>& f) {
  Tape<T> tape;
  const Var<T> out = f(tape);
  if (out.value().size() != 1) throw DimensionError("grad_check needs a scalar-valued function");
  const T v = out.value()[0];
  if (!std::isfinite(v)) throw EvaluationError("grad_check: function value is not finite");
  return v;
}

}  // namespace

template <typename T>
GradCheckResult grad_check(const ScalarFunction<T>& f, const std::vector<Array<T>*>& params, double step) {
  for (Array<T>* p : params) p->drop_grad();
  {
    Tape<T> tape;
    const Var<T> out = f(tape);
    if (out.value().size() != 1) throw DimensionError("grad_check needs a scalar-valued function");
    if (!std::isfinite(out.value()[0])) throw EvaluationError("grad_check: function value is not finite");
    tape.backward(out);
  }

  GradCheckResult result;
  const T h = static_cast<T>(step);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Array<T>& param = *params[p];
    // Parameters the loss never touched have no buffer; their gradient is zero.
    const std::vector<T> analytic = param.has_grad() ? param.grad() : std::vector<T>(param.size(), T{0});
    for (std::size_t i = 0; i < param.size(); ++i) {
      const T saved = param[i];
      param[i] = saved + h;
      const T plus = evaluate(f);
      param[i] = saved - h;
      const T minus = evaluate(f);
      param[i] = saved;
      const double numeric = (static_cast<double>(plus) - static_cast<double>(minus)) / (2.0 * step);
      const double a = static_cast<double>(analytic[i]);
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_param = p;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
      ++result.coordinates;
    }
  }
  return result;
}

template GradCheckResult grad_check<float>(const ScalarFunction<float>&, const std::vector<Array<float>*>&, double);
template GradCheckResult grad_check<double>(const ScalarFunction<double>&, const std::vector<Array<double>*>&,
                                            double);

}  // namespace clspool
