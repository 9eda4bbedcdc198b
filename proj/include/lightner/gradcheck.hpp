#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lightner/autodiff.hpp"
#include "lightner/parameter.hpp"

namespace lightner {

struct ParamGradReport {
  std::string name;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t non_finite = 0;  // perturbed evaluations that were NaN/Inf
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t non_finite = 0;
  std::vector<ParamGradReport> per_parameter;
  bool passed = false;
};

// Builds a scalar loss on the given tape. Must be deterministic.
using LossBuilder = std::function<Var(Tape&)>;

// relative error |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double analytic, double numeric);

// Compares the tape gradient of `loss` with the central difference
// (f(x+h) - f(x-h)) / 2h for every coordinate of every trainable parameter in
// `params`. Frozen parameters are skipped. Parameter values are restored and
// gradients cleared on return. Throws BAD_STEP unless 1e-7 <= h <= 1e-4.
GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Parameter* const> params, double h,
                                  double tol);

}  // namespace lightner
