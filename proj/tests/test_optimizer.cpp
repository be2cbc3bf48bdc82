#include <cmath>
#include <vector>

#include "card/error.hpp"
#include "card/optimizer.hpp"
#include "doctest.h"

using card::Tensor;
using card::Var;

namespace {

Var make_param(std::vector<double> v, const std::string& name) {
    return Var(Tensor::from_vector(std::move(v)), true, name);
}

void set_grad(Var& p, const std::vector<double>& g) {
    p.zero_grad();
    for (std::size_t i = 0; i < g.size(); ++i) p.grad_ref()[i] = g[i];
}

} // namespace

TEST_SUITE("optimizer") {

TEST_CASE("adam with constant gradient steps by lr * g / (|g| + eps) each time") {
    // With g fixed, bias correction makes m_hat = g and v_hat = g^2 at every
    // step, so the update is exactly lr * g / (|g| + eps).
    Var p = make_param({1.0, -2.0, 0.5}, "p");
    card::AdamConfig cfg;
    cfg.lr = 1e-3;
    card::Adam opt({p}, cfg);
    const std::vector<double> g = {0.4, -1.5, 2.0};

    std::vector<double> want = {1.0, -2.0, 0.5};
    for (int k = 1; k <= 5; ++k) {
        set_grad(p, g);
        opt.step();
        for (std::size_t i = 0; i < 3; ++i) {
            want[i] -= cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps);
            CHECK(p.value()[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
    }
    CHECK(opt.step_count() == 5);
}

TEST_CASE("amsgrad equals adam while the second moment grows") {
    // Gradient magnitude increasing -> v_t is its own running max -> the two
    // variants must produce bitwise-identical trajectories.
    Var pa = make_param({0.3, -0.7}, "a");
    Var pb = make_param({0.3, -0.7}, "b");
    card::AdamConfig plain;
    card::AdamConfig ams;
    ams.amsgrad = true;
    card::Adam oa({pa}, plain), ob({pb}, ams);

    for (int k = 1; k <= 8; ++k) {
        const double scale = 0.1 * k; // |g| strictly increasing
        set_grad(pa, {scale, -2.0 * scale});
        set_grad(pb, {scale, -2.0 * scale});
        oa.step();
        ob.step();
        for (std::size_t i = 0; i < 2; ++i) CHECK(pa.value()[i] == pb.value()[i]);
    }
}

TEST_CASE("amsgrad clamps the step after the second moment shrinks") {
    // A large gradient followed by small ones: AMSGrad's max-held denominator
    // stays big, so its later steps are strictly smaller than plain Adam's.
    auto run = [](bool amsgrad) {
        Var p = make_param({0.0}, "p");
        card::AdamConfig cfg;
        cfg.amsgrad = amsgrad;
        card::Adam opt({p}, cfg);
        set_grad(p, {10.0});
        opt.step();
        const double after_spike = p.value()[0];
        set_grad(p, {0.01});
        opt.step();
        return std::abs(p.value()[0] - after_spike); // second step size
    };
    const double adam_step = run(false);
    const double ams_step = run(true);
    CHECK(ams_step < adam_step);
    CHECK(ams_step > 0.0);
}

TEST_CASE("adam rejects bad configs and non-finite gradients") {
    Var p = make_param({1.0}, "theta");
    card::AdamConfig bad_lr;
    bad_lr.lr = 0.0;
    CHECK_THROWS_AS(card::Adam({p}, bad_lr), card::ConfigError);
    card::AdamConfig bad_beta;
    bad_beta.beta2 = 1.0;
    CHECK_THROWS_AS(card::Adam({p}, bad_beta), card::ConfigError);

    card::Adam opt({p}, card::AdamConfig{});
    set_grad(p, {std::nan("")});
    CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("theta"), card::TrainingError);
}

TEST_CASE("cosine decay endpoints and midpoint") {
    CHECK(card::cosine_lr(1e-3, 1e-5, 0, 100) == doctest::Approx(1e-3).epsilon(1e-15));
    CHECK(card::cosine_lr(1e-3, 1e-5, 100, 100) == doctest::Approx(1e-5).epsilon(1e-15));
    CHECK(card::cosine_lr(1e-3, 1e-5, 50, 100) ==
          doctest::Approx(0.5 * (1e-3 + 1e-5)).epsilon(1e-12));
    CHECK(card::cosine_lr(1e-3, 1e-5, 500, 100) == doctest::Approx(1e-5));
    // monotone non-increasing over the whole range
    double prev = card::cosine_lr(1e-3, 1e-5, 0, 100);
    for (int s = 1; s <= 100; ++s) {
        const double cur = card::cosine_lr(1e-3, 1e-5, s, 100);
        CHECK(cur <= prev + 1e-18);
        prev = cur;
    }
}

TEST_CASE("ema shadow initialization and closed-form blend") {
    Var p = make_param({2.0, -1.0}, "p");
    card::EmaShadow ema({p}, 0.9999);
    CHECK(ema.size() == 1);
    // initialized to the live values
    CHECK(ema.shadow(0)[0] == 2.0);
    CHECK(ema.shadow(0)[1] == -1.0);

    // Hold the live value fixed at L for k updates from shadow s0:
    //   shadow_k = d^k s0 + (1 - d^k) L
    p.value()[0] = 5.0;
    p.value()[1] = 3.0;
    for (int k = 0; k < 10; ++k) ema.update();
    const double dk = std::pow(0.9999, 10);
    CHECK(ema.shadow(0)[0] == doctest::Approx(dk * 2.0 + (1.0 - dk) * 5.0).epsilon(1e-14));
    CHECK(ema.shadow(0)[1] == doctest::Approx(dk * -1.0 + (1.0 - dk) * 3.0).epsilon(1e-14));

    // write_to_params overwrites the live tensors with the shadow
    ema.write_to_params();
    CHECK(p.value()[0] == ema.shadow(0)[0]);
    CHECK(p.value()[1] == ema.shadow(0)[1]);

    CHECK_THROWS_AS(card::EmaShadow({p}, 1.0), card::ConfigError);
    CHECK_THROWS_AS(card::EmaShadow({p}, 0.0), card::ConfigError);
}

TEST_CASE("adam converges on a deterministic quadratic") {
    // min 0.5 * ||p - c||^2; gradient p - c.
    Var p = make_param({4.0, -3.0}, "p");
    const std::vector<double> c = {1.0, 2.0};
    card::AdamConfig cfg;
    cfg.lr = 0.05;
    card::Adam opt({p}, cfg);
    for (int k = 0; k < 400; ++k) {
        set_grad(p, {p.value()[0] - c[0], p.value()[1] - c[1]});
        opt.step();
    }
    CHECK(std::abs(p.value()[0] - c[0]) < 1e-2);
    CHECK(std::abs(p.value()[1] - c[1]) < 1e-2);
}

} // TEST_SUITE
