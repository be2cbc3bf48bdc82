#include "card/optimizer.hpp"

#include <cmath>

#include "card/error.hpp"

namespace card {

Adam::Adam(std::vector<Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr <= 0.0) throw ConfigError("adam: learning rate must be positive");
    if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
        throw ConfigError("adam: betas must lie in [0, 1)");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& p : params_) {
        p.zero_grad(); // unreachable parameters then see zero gradients, not errors
        m_.emplace_back(p.value().shape());
        v_.emplace_back(p.value().shape());
        if (cfg_.amsgrad) vmax_.emplace_back(p.value().shape());
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        const Tensor& g = p.grad();
        if (!g.all_finite())
            throw TrainingError("adam: non-finite gradient in parameter '" +
                                (p.name().empty() ? ("#" + std::to_string(i)) : p.name()) + "'");
        auto ga = g.v().array();
        auto ma = m_[i].v().array();
        auto va = v_[i].v().array();
        ma = cfg_.beta1 * ma + (1.0 - cfg_.beta1) * ga;
        va = cfg_.beta2 * va + (1.0 - cfg_.beta2) * ga.square();
        Eigen::ArrayXd mhat = ma / bc1;
        Eigen::ArrayXd denom;
        if (cfg_.amsgrad) {
            auto vm = vmax_[i].v().array();
            vm = vm.max(va);
            denom = (vm / bc2).sqrt() + cfg_.eps;
        } else {
            denom = (va / bc2).sqrt() + cfg_.eps;
        }
        p.value().v().array() -= cfg_.lr * mhat / denom;
    }
}

double cosine_lr(double lr0, double lr_min, std::int64_t step, std::int64_t total_steps) {
    if (total_steps <= 0) return lr0;
    if (step >= total_steps) return lr_min;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(3.14159265358979323846 * frac));
}

EmaShadow::EmaShadow(const std::vector<Var>& params, double decay)
    : params_(params), decay_(decay) {
    if (!(decay > 0.0 && decay < 1.0))
        throw ConfigError("ema: decay must lie strictly inside (0, 1)");
    shadow_.reserve(params_.size());
    for (const auto& p : params_) shadow_.push_back(p.value());
}

void EmaShadow::update() {
    for (std::size_t i = 0; i < params_.size(); ++i)
        shadow_[i].v() = decay_ * shadow_[i].v().array().matrix() +
                         (1.0 - decay_) * params_[i].value().v();
}

void EmaShadow::write_to_params() const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Var p = params_[i];
        p.value() = shadow_[i];
    }
}

} // namespace card
