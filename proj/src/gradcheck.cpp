#include "drex/gradcheck.hpp"

#include <cmath>

#include "drex/errors.hpp"

namespace drex {

GradCheckReport grad_check(ParameterStore& params, const LossFn& loss, const GradFn& backward,
                           double h) {
  if (!(h > 0.0)) throw SpecError("grad_check: step must be positive");

  for (const auto& name : params.names()) params.get(name).grad.fill(0.0);
  backward();

  // Snapshot analytic gradients before the perturbation loop so the
  // GradFn is free to have side effects on grads only.
  std::map<std::string, Tensor> analytic;
  for (const auto& name : params.names()) {
    const Tensor& g = params.get(name).grad;
    ensure_finite(g, "grad_check analytic gradient of " + name);
    analytic.emplace(name, g);
  }

  GradCheckReport report;
  for (const auto& name : params.names()) {
    Parameter& p = params.get(name);
    const Tensor& ga = analytic.at(name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double saved = p.value.data[i];
      p.value.data[i] = saved + h;
      double up = loss();
      p.value.data[i] = saved - h;
      double down = loss();
      p.value.data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("grad_check: non-finite loss while perturbing " + name);
      double numeric = (up - down) / (2.0 * h);
      double a = ga.data[i];
      double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_coord = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
      ++report.coords_checked;
    }
  }
  return report;
}

}  // namespace drex
