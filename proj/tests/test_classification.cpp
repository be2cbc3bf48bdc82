// Classification via diffusion on one-hot class prototypes: probability
// conversion, the conditional noise net, prototype training and sampling.

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "card/checkpoint.hpp"
#include "card/classification.hpp"
#include "card/data.hpp"
#include "card/error.hpp"
#include "card/grad_check.hpp"
#include "card/mean_estimator.hpp"
#include "card/rng.hpp"
#include "card/schedule.hpp"

#include "test_util.hpp"

using namespace card;

TEST_SUITE("classification") {

TEST_CASE("one-hot prototypes place a single unit per row") {
    Tensor p = one_hot_prototypes({0, 2, 1}, 3);
    REQUIRE(p.rows() == 3);
    REQUIRE(p.cols() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        double sum = 0.0;
        for (std::size_t k = 0; k < 3; ++k) sum += p.at(i, k);
        CHECK(sum == 1.0);
    }
    CHECK(p.at(0, 0) == 1.0);
    CHECK(p.at(1, 2) == 1.0);
    CHECK(p.at(2, 1) == 1.0);

    CHECK_THROWS_AS(one_hot_prototypes({0, 3}, 3), DataError);
    CHECK_THROWS_AS(one_hot_prototypes({0, -1}, 3), DataError);
    CHECK_THROWS_AS(one_hot_prototypes({0}, 1), ContractError);
}

TEST_CASE("probability conversion softmaxes negative squared prototype distances") {
    SUBCASE("two classes, unit temperature") {
        // scores -(0.9-1)^2 = -0.01 and -(0.1-1)^2 = -0.81, so
        // p0 = 1 / (1 + exp(-0.8)) = sigmoid(0.8).
        ProbConversion pc = prob_convert({0.9, 0.1}, 1.0);
        CHECK(pc.predicted == 0);
        CHECK(pc.probs[0] == doctest::Approx(0.6899744811276125).epsilon(1e-14));
        CHECK(pc.probs[0] + pc.probs[1] == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("temperature sharpens but never reorders") {
        const std::vector<double> y = {0.7, 0.2, -0.4};
        ProbConversion hot = prob_convert(y, 10.0);
        ProbConversion cold = prob_convert(y, 0.1);
        CHECK(hot.predicted == 0);
        CHECK(cold.predicted == 0);
        CHECK(cold.probs[0] > hot.probs[0]);
        // Same ranking at both temperatures.
        CHECK(hot.probs[0] > hot.probs[1]);
        CHECK(hot.probs[1] > hot.probs[2]);
        CHECK(cold.probs[0] > cold.probs[1]);
        CHECK(cold.probs[1] > cold.probs[2]);
    }
    SUBCASE("identical reconstructions give the exact uniform vector") {
        ProbConversion pc = prob_convert({0.4, 0.4, 0.4, 0.4}, 2.0);
        CHECK(pc.predicted == 0);
        for (double p : pc.probs) CHECK(p == 0.25);
    }
    SUBCASE("distance ties resolve to the smaller class index") {
        CHECK(prob_convert({1.2, 0.8}, 1.0).predicted == 0);
        // 0.5 and 1.5 sit exactly half a unit from the prototype, so the two
        // squared distances tie bit-for-bit.
        CHECK(prob_convert({0.0, 1.5, 0.5}, 1.0).predicted == 1);
    }
    SUBCASE("contract violations") {
        CHECK_THROWS_AS(prob_convert({0.5}, 0.0), ContractError);
        CHECK_THROWS_AS(prob_convert({0.5}, -1.0), ContractError);
        CHECK_THROWS_AS(prob_convert({}, 1.0), ContractError);
    }
}

TEST_CASE("majority vote over draw predictions breaks ties downward") {
    CHECK(predict_majority({0, 1, 1, 2}, 3) == 1);
    CHECK(predict_majority({0, 0, 1, 1}, 3) == 0);
    CHECK(predict_majority({2, 2, 1, 1}, 3) == 1);
    CHECK(predict_majority({2}, 3) == 2);
    CHECK_THROWS_AS(predict_majority({}, 3), ContractError);
    CHECK_THROWS_AS(predict_majority({3}, 3), ContractError);
    CHECK_THROWS_AS(predict_majority({-1}, 3), ContractError);
}

TEST_CASE("classification noise net passes finite-difference gradient checks") {
    Rng rng(17);
    ClsEpsilonNet net(2, 3, 6, rng);
    const std::size_t B = 6;
    Tensor x = testutil::random_tensor({B, 2}, rng);
    Tensor y_t = testutil::random_tensor({B, 3}, rng);
    Tensor f = testutil::random_tensor({B, 3}, rng, 0.05, 0.9);
    Tensor tn({B, std::size_t{1}});
    for (std::size_t i = 0; i < B; ++i) tn.at(i, 0) = (i + 1) * 0.15;
    Tensor target = testutil::random_tensor({B, 3}, rng);

    auto loss = [&]() {
        return mse_rowmean(net.forward(Var(x, false), Var(y_t, false), Var(f, false),
                                       Var(tn, false), /*training=*/true),
                           Var(target, false));
    };
    auto report = grad_check(loss, net.parameters());
    CAPTURE(report.worst_param);
    CAPTURE(report.max_rel_err);
    CHECK(report.ok);
}

TEST_CASE("classification checkpoints carry normalization buffers") {
    Rng rng(23);
    ClsEpsilonNet a(2, 2, 4, rng);

    // Push the running statistics away from their initialization.
    Tensor x = testutil::random_tensor({8, 2}, rng);
    Tensor y_t = testutil::random_tensor({8, 2}, rng);
    Tensor f = testutil::random_tensor({8, 2}, rng, 0.1, 0.9);
    Tensor tn({std::size_t{8}, std::size_t{1}});
    for (std::size_t i = 0; i < 8; ++i) tn.at(i, 0) = 0.3;
    (void)a.forward(Var(x, false), Var(y_t, false), Var(f, false), Var(tn, false), true);

    auto entries = a.checkpoint_entries();
    auto has_entry = [&](const std::string& name) {
        return std::any_of(entries.begin(), entries.end(),
                           [&](const auto& e) { return e.first == name; });
    };
    CHECK(has_entry("g1y.weight"));
    CHECK(has_entry("bn1x.running_mean"));
    CHECK(has_entry("bn3a.running_var"));
    CHECK(entries.size() == 20 + 12 + 12); // 10 linears + 6 BN affine pairs + 6 BN buffer pairs

    testutil::TempDir dir("cls");
    const std::string path = dir.file("cls.ckpt");
    save_checkpoint(path, entries);

    Rng rng2(24);
    ClsEpsilonNet b(2, 2, 4, rng2);
    b.load(path);

    // Inference-mode forwards (which consume the running buffers) now agree.
    Var ya = a.forward(Var(x, false), Var(y_t, false), Var(f, false), Var(tn, false), false);
    Var yb = b.forward(Var(x, false), Var(y_t, false), Var(f, false), Var(tn, false), false);
    CHECK(testutil::max_abs_diff(ya.value(), yb.value()) == 0.0);
}

TEST_CASE("prototype training runs plain Adam and improves the objective") {
    Dataset train = generate_blobs(96, 2, 4.0, 0.4, 31);
    MeanEstimator f = MeanEstimator::null_estimator(2, 2);
    NoiseSchedule s = NoiseSchedule::linear(20, 1e-4, 0.02);

    DiffusionTrainConfig cfg;
    cfg.epochs = 25;
    cfg.batch_size = 32;
    cfg.lr = 2e-3;
    cfg.width = 8;
    cfg.seed = 3;

    cfg.amsgrad = true;
    TrainedClassification a = train_classification(train, f, s, cfg);
    cfg.amsgrad = false;
    TrainedClassification b = train_classification(train, f, s, cfg);

    REQUIRE(a.epoch_loss.size() == 25);
    // The flag is documented as ignored: classification always uses plain Adam.
    CHECK(a.epoch_loss == b.epoch_loss);

    double head = 0.0, tail = 0.0;
    for (int e = 0; e < 5; ++e) {
        head += a.epoch_loss[static_cast<std::size_t>(e)] / 5.0;
        tail += a.epoch_loss[a.epoch_loss.size() - 1 - static_cast<std::size_t>(e)] / 5.0;
    }
    CHECK(tail < 0.9 * head);
}

TEST_CASE("prototype training tolerates a trailing singleton batch") {
    Dataset train = generate_blobs(33, 2, 4.0, 0.4, 5); // 33 rows, batch 4 -> last row dropped
    MeanEstimator f = MeanEstimator::null_estimator(2, 2);
    NoiseSchedule s = NoiseSchedule::linear(10, 1e-4, 0.02);
    DiffusionTrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.width = 4;
    TrainedClassification tr = train_classification(train, f, s, cfg);
    REQUIRE(tr.epoch_loss.size() == 2);
    CHECK(std::isfinite(tr.epoch_loss.back()));
}

TEST_CASE("prototype training contract violations raise typed errors") {
    Dataset train = generate_blobs(32, 2, 4.0, 0.4, 6);
    MeanEstimator f = MeanEstimator::null_estimator(2, 2);
    NoiseSchedule s = NoiseSchedule::linear(10, 1e-4, 0.02);
    DiffusionTrainConfig cfg;
    cfg.epochs = 1;
    cfg.width = 4;

    SUBCASE("regression dataset") {
        Dataset reg = train;
        reg.task = TaskKind::regression;
        CHECK_THROWS_AS(train_classification(reg, f, s, cfg), DataError);
    }
    SUBCASE("unfrozen mean estimator") {
        MeanEstimatorConfig mc;
        MeanEstimator uf = MeanEstimator::make_untrained(TaskKind::classification, 2, 2, mc);
        CHECK_THROWS_AS(train_classification(train, uf, s, cfg), ContractError);
    }
    SUBCASE("antithetic batches need at least two rows") {
        cfg.antithetic = true;
        cfg.batch_size = 1;
        CHECK_THROWS_AS(train_classification(train, f, s, cfg), ConfigError);
    }
    SUBCASE("mean estimator must emit class probabilities") {
        MeanEstimator wrong = MeanEstimator::null_estimator(2, 3);
        CHECK_THROWS_AS(train_classification(train, wrong, s, cfg), DimensionError);
    }
}

TEST_CASE("prototype sampling produces coherent probability draws") {
    Rng rng(41);
    ClsEpsilonNet net(1, 3, 8, rng);
    MeanEstimator f = MeanEstimator::null_estimator(1, 3);
    NoiseSchedule s = NoiseSchedule::linear(20, 1e-4, 0.02);
    Tensor X = testutil::random_tensor({4, 1}, rng);

    ChainOptions opt;
    opt.S = 8;
    opt.seed = 12;
    opt.workers = 1;
    ClassificationSamples cs = sample_prototypes(X, net, f, s, opt, 1.0);

    REQUIRE(cs.N == 4);
    REQUIRE(cs.S == 8);
    REQUIRE(cs.C == 3);
    REQUIRE(cs.raw.draws.rows() == 32);
    REQUIRE(cs.probs.rows() == 32);
    REQUIRE(cs.argmax.size() == 32);

    for (std::size_t r = 0; r < 32; ++r) {
        double sum = 0.0;
        std::size_t arg = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            const double p = cs.probs.at(r, k);
            CHECK(p > 0.0);
            CHECK(p < 1.0);
            sum += p;
            if (p > cs.probs.at(r, arg)) arg = k;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(cs.argmax[r] == static_cast<int>(arg));

        // Row-wise the conversion is exactly prob_convert on the raw draw.
        std::vector<double> row(3);
        for (std::size_t k = 0; k < 3; ++k) row[k] = cs.raw.draws.at(r, k);
        ProbConversion pc = prob_convert(row, 1.0);
        for (std::size_t k = 0; k < 3; ++k) CHECK(cs.probs.at(r, k) == pc.probs[k]);
        CHECK(cs.argmax[r] == pc.predicted);
    }

    SUBCASE("instance blocks and accessors agree") {
        Tensor block = cs.instance_probs(2);
        REQUIRE(block.rows() == 8);
        REQUIRE(block.cols() == 3);
        for (std::size_t q = 0; q < 8; ++q)
            for (std::size_t k = 0; k < 3; ++k) {
                CHECK(block.at(q, k) == cs.probs.at(2 * 8 + q, k));
                CHECK(cs.prob_at(2, q, k) == block.at(q, k));
            }
        auto preds = predict_majority(cs);
        REQUIRE(preds.size() == 4);
        for (int p : preds) {
            CHECK(p >= 0);
            CHECK(p < 3);
        }
    }

    SUBCASE("temperature rescales probabilities on identical raw draws") {
        ClassificationSamples warm = sample_prototypes(X, net, f, s, opt, 5.0);
        CHECK(testutil::max_abs_diff(warm.raw.draws, cs.raw.draws) == 0.0);
        CHECK(warm.argmax == cs.argmax);
        for (std::size_t r = 0; r < 32; ++r) {
            const auto top = static_cast<std::size_t>(cs.argmax[r]);
            CHECK(warm.probs.at(r, top) <= cs.probs.at(r, top) + 1e-12);
        }
    }

    SUBCASE("dimension mismatches are rejected") {
        Tensor bad = testutil::random_tensor({2, 2}, rng);
        CHECK_THROWS_AS(sample_prototypes(bad, net, f, s, opt, 1.0), DimensionError);
        MeanEstimator wrong = MeanEstimator::null_estimator(1, 2);
        CHECK_THROWS_AS(sample_prototypes(X, net, wrong, s, opt, 1.0), DimensionError);
    }
}

TEST_CASE("prototype sampling matches a hand-stepped deterministic chain") {
    // zero_noise + fixed_init strips all randomness; the remaining recursion
    // must equal a direct loop over the inference-mode forward pass.
    Rng rng(53);
    ClsEpsilonNet net(2, 2, 4, rng);
    MeanEstimator f = MeanEstimator::null_estimator(2, 2);
    const int T = 5;
    NoiseSchedule s = NoiseSchedule::linear(T, 1e-4, 0.02);
    Tensor X = testutil::random_tensor({3, 2}, rng);

    Tensor init({std::size_t{1}, std::size_t{2}});
    init.at(0, 0) = 0.8;
    init.at(0, 1) = -0.2;

    ChainOptions opt;
    opt.S = 1;
    opt.seed = 0;
    opt.workers = 1;
    opt.zero_noise = true;
    opt.fixed_init = &init;
    ClassificationSamples cs = sample_prototypes(X, net, f, s, opt, 1.0);

    Tensor F = f.predict(X);
    Tensor y({std::size_t{3}, std::size_t{2}});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 2; ++c) y.at(i, c) = init.at(0, c);
    for (int t = T; t >= 1; --t) {
        Tensor tn({std::size_t{3}, std::size_t{1}});
        for (std::size_t i = 0; i < 3; ++i) tn.at(i, 0) = static_cast<double>(t) / T;
        Tensor eps =
            net.forward(Var(X, false), Var(y, false), Var(F, false), Var(tn, false), false).value();
        const double sab = s.sqrt_alpha_bar(t);
        const double s1m = s.sqrt_one_minus_alpha_bar(t);
        const auto g = s.posterior(t);
        Tensor next({std::size_t{3}, std::size_t{2}});
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t c = 0; c < 2; ++c) {
                const double y0_hat =
                    (y.at(i, c) - (1.0 - sab) * F.at(i, c) - s1m * eps.at(i, c)) / sab;
                next.at(i, c) = g.gamma0 * y0_hat + g.gamma1 * y.at(i, c) + g.gamma2 * F.at(i, c);
            }
        y = next;
    }

    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 2; ++c)
            CHECK(cs.raw.at(i, 0, c) == doctest::Approx(y.at(i, c)).epsilon(1e-10));
}

} // TEST_SUITE
