#pragma once

#include <functional>
#include <string>

#include "drex/params.hpp"

namespace drex {

// Scalar loss over the current contents of a ParameterStore. The
// callable must be deterministic (no dropout, no fresh RNG draws) and
// must NOT touch gradients — grad_check evaluates it repeatedly under
// coordinate perturbations.
using LossFn = std::function<double()>;

// Fills Parameter::grad for the analytic side. Typically builds a tape
// over the same computation as the loss and calls backward.
using GradFn = std::function<void()>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

// Central-difference check of every coordinate of every parameter:
// numeric = (f(x+h) - f(x-h)) / 2h, relative error
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
// Returns the max over all coordinates (report carries the argmax).
GradCheckReport grad_check(ParameterStore& params, const LossFn& loss, const GradFn& backward,
                           double h = 1e-5);

}  // namespace drex
