#pragma once

#include <cstdint>
#include <vector>

#include "card/autodiff.hpp"

namespace card {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool amsgrad = false;
};

// Adam / AMSGrad over a fixed parameter list. AMSGrad keeps the running max of
// the raw second moment and bias-corrects after the max, so the two variants
// coincide whenever the second moment grows monotonically.
class Adam {
public:
    Adam(std::vector<Var> params, AdamConfig cfg);

    // One update using the parameters' accumulated gradients.
    // Non-finite gradients raise TrainingError naming the parameter.
    void step();
    void zero_grad();

    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    std::int64_t step_count() const { return t_; }
    const std::vector<Var>& params() const { return params_; }

private:
    std::vector<Var> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_, vmax_;
    std::int64_t t_ = 0;
};

// Cosine learning-rate decay from lr0 to lr_min over total_steps.
double cosine_lr(double lr0, double lr_min, std::int64_t step, std::int64_t total_steps);

// Exponential moving average of a parameter list:
//   shadow <- decay * shadow + (1 - decay) * live     (initialized to live)
class EmaShadow {
public:
    EmaShadow() = default;
    EmaShadow(const std::vector<Var>& params, double decay);

    void update();
    // Overwrite live parameter values with the shadow (e.g. before sampling).
    void write_to_params() const;
    const Tensor& shadow(std::size_t i) const { return shadow_[i]; }
    std::size_t size() const { return shadow_.size(); }
    double decay() const { return decay_; }

private:
    std::vector<Var> params_;
    std::vector<Tensor> shadow_;
    double decay_ = 0.0;
};

} // namespace card
