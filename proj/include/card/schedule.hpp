#pragma once

#include <vector>

#include "card/tensor.hpp"

namespace card {

// Diffusion noise schedule and the closed-form Gaussian algebra of the
// conditional forward/reverse chains. Index conventions: beta/alpha run over
// t = 1..T; alpha_bar is defined for t = 0..T with alpha_bar(0) = 1.
class NoiseSchedule {
public:
    // Linear beta grid: beta_t = b1 + (t-1) * (bT - b1) / (T-1), inclusive ends.
    static NoiseSchedule linear(int T, double beta_start = 1e-4, double beta_end = 0.02);

    // Any explicit beta sequence (t = 1..T), each in (0,1).
    explicit NoiseSchedule(std::vector<double> betas);

    int T() const noexcept { return T_; }
    double beta(int t) const { check_t(t, "beta"); return beta_[static_cast<std::size_t>(t)]; }
    double alpha(int t) const { check_t(t, "alpha"); return 1.0 - beta_[static_cast<std::size_t>(t)]; }
    double alpha_bar(int t) const {
        if (t < 0 || t > T_) throw ContractError("schedule: alpha_bar index t=" + std::to_string(t) +
                                                 " outside [0," + std::to_string(T_) + "]");
        return alpha_bar_[static_cast<std::size_t>(t)];
    }
    double sqrt_alpha_bar(int t) const { return sqrt_ab_[static_cast<std::size_t>(check_t(t, "sqrt_alpha_bar"))]; }
    double sqrt_one_minus_alpha_bar(int t) const { return sqrt_1m_ab_[static_cast<std::size_t>(check_t(t, "sqrt_one_minus_alpha_bar"))]; }

    // Reverse-posterior coefficients of q(y_{t-1} | y_t, y_0, x):
    //   mean = gamma0 * y0 + gamma1 * y_t + gamma2 * f,   variance = beta_tilde.
    struct Posterior {
        double gamma0, gamma1, gamma2, beta_tilde;
    };
    Posterior posterior(int t) const;

    // Forward marginal draw: y_t = sqrt(ab_t) y0 + (1 - sqrt(ab_t)) f + sqrt(1-ab_t) eps.
    double q_sample(double y0, double f, int t, double eps) const;
    Tensor q_sample(const Tensor& y0, const Tensor& f, int t, const Tensor& eps) const;

    // Single forward transition: y_t = sqrt(1-b_t) y_{t-1} + (1 - sqrt(1-b_t)) f + sqrt(b_t) eps.
    double q_sample_one_step(double y_prev, double f, int t, double eps) const;
    Tensor q_sample_one_step(const Tensor& y_prev, const Tensor& f, int t, const Tensor& eps) const;

    // Posterior mean gamma0*y0 + gamma1*y_t + gamma2*f.
    double posterior_mean(double y0, double y_t, double f, int t) const;

    // y0 reconstruction from predicted noise:
    //   (y_t - (1 - sqrt(ab_t)) f - sqrt(1-ab_t) eps) / sqrt(ab_t).
    double reconstruct_y0(double y_t, double f, double eps, int t) const;

private:
    int check_t(int t, const char* who) const {
        if (t < 1 || t > T_)
            throw ContractError(std::string("schedule: ") + who + " index t=" + std::to_string(t) +
                                " outside [1," + std::to_string(T_) + "]");
        return t;
    }

    int T_ = 0;
    // All arrays sized T+1; index 0 unused except alpha_bar_[0] = 1.
    std::vector<double> beta_, alpha_bar_, sqrt_ab_, sqrt_1m_ab_;
};

} // namespace card
