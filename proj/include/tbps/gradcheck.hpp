#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tbps/errors.hpp"
#include "tbps/parameter.hpp"

namespace tbps {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double max_rel_error = 0.0;

  bool passed(double threshold) const { return max_rel_error < threshold; }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Objective re-evaluated at the current parameter values. Returning long
// double lets an extended-precision probe keep its extra digits.
using Objective = std::function<long double()>;

// Central differences of `f` with respect to every entry of `probe`, compared
// against `analytic` (one gradient span per probe parameter, same layout).
// The step actually taken is recomputed from the stored perturbed values, so
// rounding of θ±h in low precision does not bias the quotient.
template <typename ProbeReal, typename GradReal>
GradCheckReport central_difference_check(const Objective& f, const ParamList<ProbeReal>& probe,
                                         const std::vector<std::span<const GradReal>>& analytic, double h) {
  if (!(h > 0.0)) throw ContractError("finite difference step must be positive");
  if (analytic.size() != probe.size()) throw ContractError("one analytic gradient per parameter required");
  GradCheckReport report;
  for (std::size_t p = 0; p < probe.size(); ++p) {
    auto values = probe[p]->tensor.mutable_data();
    const auto grad = analytic[p];
    if (grad.size() != values.size())
      throw ShapeError("analytic gradient for " + probe[p]->name + " has the wrong size");
    GradCheckEntry entry{probe[p]->name};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const ProbeReal original = values[i];
      values[i] = static_cast<ProbeReal>(static_cast<long double>(original) + h);
      const long double up_at = values[i];
      const long double up = f();
      values[i] = static_cast<ProbeReal>(static_cast<long double>(original) - h);
      const long double down_at = values[i];
      const long double down = f();
      values[i] = original;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("objective is non-finite while probing " + probe[p]->name);
      const auto numeric = static_cast<double>((up - down) / (up_at - down_at));
      const double a = static_cast<double>(grad[i]);
      const double err = relative_error(a, numeric);
      if (err > entry.max_rel_error || i == 0) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.params.push_back(std::move(entry));
  }
  return report;
}

// Checks the gradients already stored in `params` (populated by backward())
// against central differences of `f`, which must re-evaluate the loss from
// the current parameter values.
template <typename Real>
GradCheckReport finite_diff_check(const Objective& f, const ParamList<Real>& params, double h) {
  std::vector<std::vector<Real>> saved;
  std::vector<std::span<const Real>> analytic;
  saved.reserve(params.size());
  for (auto* p : params) {
    if (p->tensor.has_grad())
      saved.emplace_back(p->tensor.grad().begin(), p->tensor.grad().end());
    else
      saved.emplace_back(p->tensor.numel(), Real(0));
  }
  for (const auto& s : saved) analytic.emplace_back(s);
  return central_difference_check<Real, Real>(f, params, analytic, h);
}

}  // namespace tbps
