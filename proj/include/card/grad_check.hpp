#pragma once

#include <functional>
#include <string>
#include <vector>

#include "card/autodiff.hpp"

namespace card {

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::string worst_param;
    bool ok = false;
};

// Central-difference verification of reverse-mode gradients.
//
// `forward_loss` must rebuild the graph from the current parameter values and
// return the scalar loss. Step size is adaptive, delta = h * max(1, |theta|).
// Elementwise relative error is |analytic - numeric| / max(|numeric|, 1e-2):
// a true ratio for gradients of ordinary magnitude, a scaled absolute error
// for near-zero entries (keeps FD roundoff from masquerading as failure while
// still catching sign and coefficient bugs on small gradients).
// Raises TrainingError if any finite difference evaluates to NaN.
GradCheckReport grad_check(const std::function<Var()>& forward_loss,
                           const std::vector<Var>& params, double h = 1e-6,
                           double tol = 1e-4);

} // namespace card
