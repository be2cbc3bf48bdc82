#include <cmath>
#include <vector>

#include "card/error.hpp"
#include "card/grad_check.hpp"
#include "card/layers.hpp"
#include "card/rng.hpp"
#include "doctest.h"
#include "test_util.hpp"

using card::Tensor;
using card::Var;

TEST_SUITE("layers") {

TEST_CASE("linear layer init bounds and forward") {
    card::Rng rng(21);
    card::Linear lin(16, 8, rng, "lin");
    CHECK(lin.W.value().rows() == 8);
    CHECK(lin.W.value().cols() == 16);
    CHECK(lin.b.value().size() == 8);
    const double bound = 1.0 / std::sqrt(16.0);
    for (std::size_t i = 0; i < lin.W.value().size(); ++i) {
        CHECK(lin.W.value()[i] >= -bound);
        CHECK(lin.W.value()[i] <= bound);
    }
    for (std::size_t i = 0; i < 8; ++i) CHECK(lin.b.value()[i] == 0.0);
    CHECK(lin.W.name() == "lin.weight");
    CHECK(lin.b.name() == "lin.bias");

    Tensor x = testutil::random_tensor({4, 16}, rng);
    Var out = lin.forward(Var(x));
    card::Mat want = x.m() * lin.W.value().m().transpose();
    CHECK((out.value().m() - want).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("batch norm training statistics and running-stat update") {
    card::BatchNorm1d bn(3, "bn");
    Tensor x({6, 3});
    card::Rng rng(22);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-2.0, 5.0);

    // Scale/shift so the affine part is exercised too.
    bn.gamma.value()[0] = 2.0;
    bn.beta.value()[2] = -1.0;

    Var out = bn.forward(Var(x), /*training=*/true);

    const double B = 6.0;
    for (std::size_t c = 0; c < 3; ++c) {
        double mu = 0.0;
        for (std::size_t r = 0; r < 6; ++r) mu += x.at(r, c);
        mu /= B;
        double var = 0.0;
        for (std::size_t r = 0; r < 6; ++r) var += (x.at(r, c) - mu) * (x.at(r, c) - mu);
        var /= B; // biased variance normalizes the batch
        for (std::size_t r = 0; r < 6; ++r) {
            const double xhat = (x.at(r, c) - mu) / std::sqrt(var + bn.eps);
            const double want = bn.gamma.value()[c] * xhat + bn.beta.value()[c];
            CHECK(out.value().at(r, c) == doctest::Approx(want).epsilon(1e-12));
        }
        // running stats blend from the (0, 1) init with momentum 0.1, variance unbiased
        CHECK(bn.running_mean[c] == doctest::Approx(0.9 * 0.0 + 0.1 * mu).epsilon(1e-12));
        CHECK(bn.running_var[c] ==
              doctest::Approx(0.9 * 1.0 + 0.1 * var * (B / (B - 1.0))).epsilon(1e-12));
    }
}

TEST_CASE("batch norm inference is the frozen affine map") {
    card::BatchNorm1d bn(2, "bn");
    bn.running_mean[0] = 1.5;
    bn.running_mean[1] = -0.5;
    bn.running_var[0] = 4.0;
    bn.running_var[1] = 0.25;
    bn.gamma.value()[0] = 3.0;
    bn.beta.value()[1] = 2.0;

    Tensor x({2, 2});
    x.at(0, 0) = 2.0; x.at(0, 1) = 0.0;
    x.at(1, 0) = -1.0; x.at(1, 1) = -0.5;

    const Tensor rm_before = bn.running_mean;
    Var out = bn.forward(Var(x), /*training=*/false);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c) {
            const double want = bn.gamma.value()[c] * (x.at(r, c) - bn.running_mean[c]) /
                                    std::sqrt(bn.running_var[c] + bn.eps) +
                                bn.beta.value()[c];
            CHECK(out.value().at(r, c) == doctest::Approx(want).epsilon(1e-12));
        }
    // inference must not touch the running statistics
    CHECK(testutil::max_abs_diff(bn.running_mean, rm_before) == 0.0);

    // same batch twice: training output differs from inference output
    card::BatchNorm1d bn2(2, "bn2");
    Var train_out = bn2.forward(Var(x), true);
    Var eval_out = bn2.forward(Var(x), false);
    CHECK(testutil::max_abs_diff(train_out.value(), eval_out.value()) > 1e-3);
}

TEST_CASE("batch norm contract violations") {
    card::BatchNorm1d bn(3, "bn");
    Tensor one_row({1, 3});
    CHECK_THROWS_AS(bn.forward(Var(one_row), true), card::ContractError);
    Tensor wrong({4, 2});
    CHECK_THROWS_AS(bn.forward(Var(wrong), true), card::DimensionError);
    CHECK_THROWS_AS(bn.forward(Var(wrong), false), card::DimensionError);
}

TEST_CASE("batch norm gradients pass finite differences") {
    card::Rng rng(23);
    card::BatchNorm1d bn(4, "bn");
    // randomize the affine part away from identity
    for (std::size_t i = 0; i < 4; ++i) {
        bn.gamma.value()[i] = rng.uniform(0.5, 1.5);
        bn.beta.value()[i] = rng.uniform(-0.5, 0.5);
    }
    Var x(testutil::random_tensor({7, 4}, rng, -2.0, 2.0), true, "x");
    Tensor target = testutil::random_tensor({7, 4}, rng);

    auto forward = [&] {
        Var out = bn.forward(x, /*training=*/true);
        Var diff = card::sub(out, Var(target));
        return card::mean(card::mul(diff, diff));
    };
    auto report = card::grad_check(forward, {bn.gamma, bn.beta, x});
    CHECK(report.ok);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("sequential forward, parameter and buffer collection") {
    card::Rng rng(24);
    card::Sequential net;
    net.add(card::Linear(3, 5, rng, "l1"))
        .add_leaky_relu(0.01)
        .add(card::BatchNorm1d(5, "bn1"))
        .add(card::Linear(5, 2, rng, "l2"))
        .add_softplus();

    auto named = net.named_parameters();
    REQUIRE(named.size() == 6); // 2x(W, b) + (gamma, beta)
    CHECK(named[0].name == "l1.weight");
    CHECK(named[2].name == "bn1.gamma");
    CHECK(named[4].name == "l2.weight");
    auto buffers = net.named_buffers();
    REQUIRE(buffers.size() == 2);
    CHECK(buffers[0].name == "bn1.running_mean");
    CHECK(buffers[1].name == "bn1.running_var");
    CHECK(net.parameters().size() == 6);
    CHECK(net.size() == 5);

    // forward equals the hand-chained ops (inference so BN is affine)
    Tensor x = testutil::random_tensor({4, 3}, rng);
    Var manual = Var(x);
    manual = std::get<card::Linear>(net.layer(0)).forward(manual);
    manual = card::leaky_relu(manual, 0.01);
    manual = std::get<card::BatchNorm1d>(net.layer(2)).forward(manual, false);
    manual = std::get<card::Linear>(net.layer(3)).forward(manual);
    manual = card::softplus(manual);
    Var out = net.forward(Var(x), false);
    CHECK(testutil::max_abs_diff(out.value(), manual.value()) < 1e-13);
}

TEST_CASE("hadamard layer multiplies by the fixed companion") {
    card::Rng rng(25);
    Tensor other = testutil::random_tensor({3, 4}, rng);
    card::Sequential net;
    net.add_hadamard(Var(other));
    Tensor x = testutil::random_tensor({3, 4}, rng);
    Var out = net.forward(Var(x), true);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(out.value()[i] == doctest::Approx(x[i] * other[i]).epsilon(1e-15));
}

TEST_CASE("full mlp gradient check across layer kinds") {
    card::Rng rng(26);
    card::Sequential net;
    net.add(card::Linear(3, 6, rng, "l1"))
        .add(card::BatchNorm1d(6, "bn"))
        .add_softplus()
        .add(card::Linear(6, 2, rng, "l2"))
        .add_leaky_relu(0.01);

    Tensor x = testutil::random_tensor({5, 3}, rng);
    Tensor t = testutil::random_tensor({5, 2}, rng);
    auto forward = [&] {
        Var out = net.forward(Var(x), true);
        Var diff = card::sub(out, Var(t));
        return card::mean(card::mul(diff, diff));
    };
    auto report = card::grad_check(forward, net.parameters());
    CHECK(report.ok);
    CHECK(report.max_rel_err < 1e-4);
}

} // TEST_SUITE
