#pragma once

#include <functional>

#include "polarfuse/params.hpp"

namespace polarfuse {

// Central-difference gradient verification: perturbs every coordinate of
// every tensor named in `analytic_grads` (names must exist in `params`),
// evaluates f at theta +- h*e_i, and returns
//   max_i |fd_i - analytic_i| / max(|fd_i|, |analytic_i|, 1e-8).
// Throws std::runtime_error if any f evaluation is non-finite.
double fd_gradcheck(const std::function<double(const ParamStore&)>& f,
                    const ParamStore& params, const ParamStore& analytic_grads, double h);

}  // namespace polarfuse
