#include "card/grad_check.hpp"

#include <cmath>

#include "card/error.hpp"

namespace card {

GradCheckReport grad_check(const std::function<Var()>& forward_loss,
                           const std::vector<Var>& params, double h, double tol) {
    // Analytic pass.
    for (auto p : params) p.zero_grad();
    Var loss = forward_loss();
    backward(loss);
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p.grad());

    GradCheckReport rep;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Var p = params[pi];
        Tensor& theta = p.value();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double orig = theta[i];
            const double delta = h * std::max(1.0, std::abs(orig));
            theta[i] = orig + delta;
            const double fp = forward_loss().value()[0];
            theta[i] = orig - delta;
            const double fm = forward_loss().value()[0];
            theta[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw TrainingError("grad_check: non-finite loss while perturbing '" +
                                    p.name() + "'");
            const double numeric = (fp - fm) / (2.0 * delta);
            const double a = analytic[pi][i];
            const double abs_err = std::abs(a - numeric);
            const double rel_err = abs_err / std::max(std::abs(numeric), 1e-2);
            if (abs_err > rep.max_abs_err) rep.max_abs_err = abs_err;
            if (rel_err > rep.max_rel_err) {
                rep.max_rel_err = rel_err;
                rep.worst_param = p.name().empty() ? ("#" + std::to_string(pi)) : p.name();
            }
        }
    }
    rep.ok = rep.max_rel_err < tol;
    return rep;
}

} // namespace card
