#include "card/schedule.hpp"

#include <cmath>

namespace card {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(static_cast<std::size_t>(T));
    if (T == 1) {
        betas[0] = beta_start;
    } else {
        const double step = (beta_end - beta_start) / static_cast<double>(T - 1);
        for (int t = 0; t < T; ++t) betas[static_cast<std::size_t>(t)] = beta_start + step * t;
    }
    return NoiseSchedule(std::move(betas));
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) {
    if (betas.empty()) throw ConfigError("schedule: empty beta sequence");
    T_ = static_cast<int>(betas.size());
    beta_.assign(static_cast<std::size_t>(T_) + 1, 0.0);
    alpha_bar_.assign(static_cast<std::size_t>(T_) + 1, 1.0);
    sqrt_ab_.assign(static_cast<std::size_t>(T_) + 1, 1.0);
    sqrt_1m_ab_.assign(static_cast<std::size_t>(T_) + 1, 0.0);
    double prod = 1.0;
    for (int t = 1; t <= T_; ++t) {
        const double b = betas[static_cast<std::size_t>(t - 1)];
        if (!(b > 0.0 && b < 1.0))
            throw ConfigError("schedule: beta_" + std::to_string(t) + " = " + std::to_string(b) +
                              " outside (0,1)");
        beta_[static_cast<std::size_t>(t)] = b;
        prod *= 1.0 - b;
        alpha_bar_[static_cast<std::size_t>(t)] = prod;
        sqrt_ab_[static_cast<std::size_t>(t)] = std::sqrt(prod);
        sqrt_1m_ab_[static_cast<std::size_t>(t)] = std::sqrt(1.0 - prod);
    }
}

NoiseSchedule::Posterior NoiseSchedule::posterior(int t) const {
    check_t(t, "posterior");
    const double b = beta(t);
    const double a = alpha(t);
    const double ab = alpha_bar(t);
    const double ab_prev = alpha_bar(t - 1);
    const double one_m_ab = 1.0 - ab;
    Posterior p;
    p.gamma0 = b * std::sqrt(ab_prev) / one_m_ab;
    p.gamma1 = (1.0 - ab_prev) * std::sqrt(a) / one_m_ab;
    p.gamma2 = 1.0 + (std::sqrt(ab) - 1.0) * (std::sqrt(a) + std::sqrt(ab_prev)) / one_m_ab;
    p.beta_tilde = (1.0 - ab_prev) * b / one_m_ab;
    return p;
}

double NoiseSchedule::q_sample(double y0, double f, int t, double eps) const {
    check_t(t, "q_sample");
    const double s = sqrt_ab_[static_cast<std::size_t>(t)];
    return s * y0 + (1.0 - s) * f + sqrt_1m_ab_[static_cast<std::size_t>(t)] * eps;
}

Tensor NoiseSchedule::q_sample(const Tensor& y0, const Tensor& f, int t, const Tensor& eps) const {
    check_t(t, "q_sample");
    require_same_shape(y0, f, "q_sample");
    require_same_shape(y0, eps, "q_sample");
    const double s = sqrt_ab_[static_cast<std::size_t>(t)];
    const double n = sqrt_1m_ab_[static_cast<std::size_t>(t)];
    Tensor out(y0.shape());
    out.v() = s * y0.v() + (1.0 - s) * f.v() + n * eps.v();
    return out;
}

double NoiseSchedule::q_sample_one_step(double y_prev, double f, int t, double eps) const {
    check_t(t, "q_sample_one_step");
    const double b = beta(t);
    const double s = std::sqrt(1.0 - b);
    return s * y_prev + (1.0 - s) * f + std::sqrt(b) * eps;
}

Tensor NoiseSchedule::q_sample_one_step(const Tensor& y_prev, const Tensor& f, int t,
                                        const Tensor& eps) const {
    check_t(t, "q_sample_one_step");
    require_same_shape(y_prev, f, "q_sample_one_step");
    require_same_shape(y_prev, eps, "q_sample_one_step");
    const double b = beta(t);
    const double s = std::sqrt(1.0 - b);
    Tensor out(y_prev.shape());
    out.v() = s * y_prev.v() + (1.0 - s) * f.v() + std::sqrt(b) * eps.v();
    return out;
}

double NoiseSchedule::posterior_mean(double y0, double y_t, double f, int t) const {
    const Posterior p = posterior(t);
    return p.gamma0 * y0 + p.gamma1 * y_t + p.gamma2 * f;
}

double NoiseSchedule::reconstruct_y0(double y_t, double f, double eps, int t) const {
    check_t(t, "reconstruct_y0");
    const double s = sqrt_ab_[static_cast<std::size_t>(t)];
    return (y_t - (1.0 - s) * f - sqrt_1m_ab_[static_cast<std::size_t>(t)] * eps) / s;
}

} // namespace card
