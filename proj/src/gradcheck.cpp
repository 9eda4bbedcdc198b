#include "lightner/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lightner/error.hpp"

namespace lightner {
namespace {

double evaluate(const LossBuilder& loss) {
  Tape tape(Tape::Mode::kInference);
  return loss(tape).value()[0];
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Parameter* const> params, double h,
                                  double tol) {
  if (!(h >= 1e-7 && h <= 1e-4))
    throw Error("BAD_STEP", "finite-difference step must lie in [1e-7, 1e-4], got " + std::to_string(h));

  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }

  GradCheckReport report;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    ParamGradReport pr;
    pr.name = p->name;
    pr.coordinates = p->numel();
    for (std::size_t i = 0; i < p->numel(); ++i) {
      const double analytic = p->has_grad() ? p->grad[i] : 0.0;
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double f_plus = evaluate(loss);
      p->value[i] = saved - h;
      const double f_minus = evaluate(loss);
      p->value[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        ++pr.non_finite;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double err = relative_error(analytic, numeric);
      if (i == 0 || err > pr.max_rel_error) {
        pr.max_rel_error = err;
        pr.worst_index = i;
        pr.worst_analytic = analytic;
        pr.worst_numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, pr.max_rel_error);
    report.coordinates += pr.coordinates;
    report.non_finite += pr.non_finite;
    report.per_parameter.push_back(std::move(pr));
  }
  for (Parameter* p : params) p->zero_grad();
  report.passed = report.non_finite == 0 && report.max_rel_error <= tol;
  return report;
}

}  // namespace lightner
