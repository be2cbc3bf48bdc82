// Uncertainty metrics: coverage, quantile calibration, Gaussian NLL, interval
// widths, the paired t-test with its special functions, PAvPU, and the KDE
// mode counter. Reference values were computed externally (scipy.stats /
// closed forms) and are frozen here.

#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "card/error.hpp"
#include "card/metrics.hpp"
#include "card/rng.hpp"
#include "card/tensor.hpp"

#include "test_util.hpp"

using namespace card;

namespace {

SampleMatrix make_sm(const std::vector<double>& y_true,
                     const std::vector<std::vector<double>>& rows) {
    SampleMatrix sm;
    sm.y_true = y_true;
    sm.y_samples = Tensor({rows.size(), rows.empty() ? std::size_t{0} : rows[0].size()});
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t s = 0; s < rows[i].size(); ++s) sm.y_samples.at(i, s) = rows[i][s];
    return sm;
}

std::vector<double> iota_row(std::size_t S, double scale = 1.0) {
    std::vector<double> r(S);
    for (std::size_t s = 0; s < S; ++s) r[s] = scale * static_cast<double>(s);
    return r;
}

// Probability matrix whose per-draw argmax sequence and values are explicit.
Tensor prob_matrix(const std::vector<std::vector<double>>& rows) {
    Tensor t({rows.size(), rows[0].size()});
    for (std::size_t s = 0; s < rows.size(); ++s)
        for (std::size_t k = 0; k < rows[s].size(); ++k) t.at(s, k) = rows[s][k];
    return t;
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("linear-interpolation percentiles") {
    const std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
    CHECK(percentile_sorted(v, 50.0) == 2.5);
    CHECK(percentile_sorted(v, 25.0) == 1.75);
    CHECK(percentile_sorted(v, 0.0) == 1.0);
    CHECK(percentile_sorted(v, 100.0) == 4.0);
    CHECK(percentile_sorted(v, -5.0) == 1.0);
    CHECK(percentile_sorted(v, 110.0) == 4.0);
    CHECK(percentile_sorted({10.0}, 50.0) == 10.0);
    CHECK_THROWS_AS(percentile_sorted({}, 50.0), MetricError);
}

TEST_CASE("coverage counts instances inside the inclusive percentile band") {
    // S = 41 puts the 2.5/97.5 boundaries exactly on order statistics 1 and 39.
    const auto row = iota_row(41);
    SampleMatrix sm = make_sm({1.0, 39.0, 0.999, 39.5}, {row, row, row, row});
    CHECK(picp(sm) == 0.5); // both boundary truths count as covered

    SUBCASE("narrower percentile pair") {
        // 25/75 on 0..40: boundaries 10 and 30.
        SampleMatrix sm2 = make_sm({10.0, 30.5}, {row, row});
        CHECK(picp(sm2, 25.0, 75.0) == 0.5);
    }
    SUBCASE("too few draws for the tails") {
        SampleMatrix sm39 = make_sm({1.0}, {iota_row(39)});
        CHECK_THROWS_AS(picp(sm39), MetricError);
    }
    SUBCASE("inverted band") {
        CHECK_THROWS_AS(picp(sm, 97.5, 2.5), MetricError);
    }
    SUBCASE("malformed matrices") {
        SampleMatrix empty;
        CHECK_THROWS_AS(picp(empty), MetricError);
        SampleMatrix mismatch = make_sm({1.0, 2.0, 3.0}, {row, row});
        CHECK_THROWS_AS(picp(mismatch), MetricError);
        SampleMatrix bad_truth = make_sm({std::nan("")}, {row});
        CHECK_THROWS_AS(picp(bad_truth), MetricError);
        SampleMatrix bad_sample = make_sm({1.0}, {row});
        bad_sample.y_samples.at(0, 3) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(picp(bad_sample), MetricError);
    }
}

TEST_CASE("quantile calibration error over equal-mass bins") {
    const auto row = iota_row(41); // M=10 boundaries land on 0, 4, 8, ..., 40

    SUBCASE("perfectly calibrated placement scores zero") {
        std::vector<double> truths(10);
        std::vector<std::vector<double>> rows(10, row);
        for (std::size_t i = 0; i < 10; ++i) truths[i] = 4.0 * static_cast<double>(i) + 2.0;
        CHECK(qice(make_sm(truths, rows)) == 0.0);
    }
    SUBCASE("every truth below the sampled range collapses into bin one") {
        std::vector<std::vector<double>> rows(5, row);
        CHECK(qice(make_sm(std::vector<double>(5, -3.0), rows)) == doctest::Approx(0.18).epsilon(1e-15));
    }
    SUBCASE("every truth above the sampled range collapses into the last bin") {
        std::vector<std::vector<double>> rows(5, row);
        CHECK(qice(make_sm(std::vector<double>(5, 77.0), rows)) == doctest::Approx(0.18).epsilon(1e-15));
    }
    SUBCASE("boundary ties fall into the lower bin") {
        // Truth exactly at the first interior boundary (4.0) lands in bin 0;
        // nudging it up moves it to bin 1.
        SampleMatrix sm = make_sm({4.0, 4.0001}, {row, row});
        CHECK(qice(sm) == doctest::Approx(0.16).epsilon(1e-15));
    }
    SUBCASE("alternate bin count") {
        std::vector<double> truths(5);
        std::vector<std::vector<double>> rows(5, row);
        for (std::size_t i = 0; i < 5; ++i) truths[i] = 8.0 * static_cast<double>(i) + 3.0;
        CHECK(qice(make_sm(truths, rows), 5) == 0.0);
    }
    SUBCASE("preconditions") {
        SampleMatrix sm = make_sm({1.0}, {row});
        CHECK_THROWS_AS(qice(sm, 1), MetricError);
        SampleMatrix tiny = make_sm({1.0}, {{1.0, 2.0, 3.0}});
        CHECK_THROWS_AS(qice(tiny, 10), MetricError);
    }
}

TEST_CASE("rmse uses the per-instance sample mean as the point estimate") {
    SampleMatrix sm = make_sm({6.0, 0.0}, {{2.0, 4.0}, {0.0, 8.0}});
    // means 3 and 4 -> squared errors 9 and 16 -> sqrt(12.5)
    CHECK(rmse(sm) == doctest::Approx(3.5355339059327378).epsilon(1e-15));
}

TEST_CASE("gaussian nll fits per-instance moments with a variance floor") {
    SUBCASE("closed form, no floor") {
        // Row {-1, 1}: mu = 0, unbiased var = 2.
        SampleMatrix sm = make_sm({0.0}, {{-1.0, 1.0}});
        NllReport rep = nll_gaussian_fit(sm);
        CHECK(rep.value == doctest::Approx(1.2655121234846454).epsilon(1e-14));
        CHECK(rep.floored == 0);

        SampleMatrix off = make_sm({2.0}, {{-1.0, 1.0}});
        CHECK(nll_gaussian_fit(off).value ==
              doctest::Approx(1.2655121234846454 + 1.0).epsilon(1e-14));
    }
    SUBCASE("three-draw closed form") {
        // Row {-2, 0, 2}: mu = 0, unbiased var = 4; truth 2 adds 4/8.
        SampleMatrix sm = make_sm({2.0}, {{-2.0, 0.0, 2.0}});
        CHECK(nll_gaussian_fit(sm).value == doctest::Approx(2.1120857137646181).epsilon(1e-14));
    }
    SUBCASE("degenerate rows hit the 1e-6 floor and are counted") {
        SampleMatrix sm = make_sm({5.001, 0.0}, {{5.0, 5.0, 5.0}, {-1.0, 1.0, 0.0}});
        NllReport rep = nll_gaussian_fit(sm);
        CHECK(rep.floored == 1);
        // Floored row: 0.5 log(2 pi 1e-6) + 1e-6 / 2e-6.
        const double floored_term = -5.9888167457774646 + 0.5;
        const double mu = 0.0, var = 1.0; // row {-1, 1, 0}: var = (1+1+0)/2
        const double other = 0.5 * std::log(6.283185307179586476925286766559 * var) +
                             (0.0 - mu) * (0.0 - mu) / (2.0 * var);
        CHECK(rep.value == doctest::Approx(0.5 * (floored_term + other)).epsilon(1e-13));
    }
    SUBCASE("a single draw cannot fit a variance") {
        SampleMatrix sm = make_sm({1.0}, {{1.0}});
        CHECK_THROWS_AS(nll_gaussian_fit(sm), MetricError);
    }
}

TEST_CASE("mean interval width averages the per-instance band lengths") {
    SampleMatrix sm = make_sm({0.0, 0.0}, {iota_row(100), iota_row(100, 2.0)});
    // 0..99: [2.475, 96.525] -> 94.05; doubled row -> 188.1.
    CHECK(mean_interval_width(sm) == doctest::Approx(141.075).epsilon(1e-12));
}

TEST_CASE("per-instance probability interval width") {
    Tensor probs({std::size_t{41}, std::size_t{2}});
    for (std::size_t s = 0; s < 41; ++s) {
        probs.at(s, 1) = static_cast<double>(s) / 40.0;
        probs.at(s, 0) = 1.0 - probs.at(s, 1);
    }
    CHECK(piw_instance(probs, 1) == doctest::Approx(0.95).epsilon(1e-12));
    CHECK(piw_instance(probs, 0) == doctest::Approx(0.95).epsilon(1e-12));
    CHECK_THROWS_AS(piw_instance(probs, 2), MetricError);
    CHECK_THROWS_AS(piw_instance(probs, -1), MetricError);
    Tensor small({std::size_t{39}, std::size_t{2}});
    CHECK_THROWS_AS(piw_instance(small, 0), MetricError);
}

TEST_CASE("paired t-test between the two most voted classes") {
    SUBCASE("frozen two-class example") {
        // diffs {0.2, 0.4, 0.6, 0.8}: t = 3.8729833462074175 on 3 dof,
        // two-sided p = 0.030466291662170977 (scipy.stats.ttest_rel).
        Tensor probs = prob_matrix({{0.6, 0.4}, {0.7, 0.3}, {0.8, 0.2}, {0.9, 0.1}});
        TTestResult r = paired_t_test(probs, 0.05);
        CHECK(r.top_class == 0);
        CHECK(r.second_class == 1);
        CHECK(r.t_stat == doctest::Approx(3.8729833462074175).epsilon(1e-12));
        CHECK(r.p_value == doctest::Approx(0.030466291662170977).epsilon(1e-12));
        CHECK(r.reject);
        // The same evidence fails a stricter level.
        CHECK_FALSE(paired_t_test(probs, 0.01).reject);
    }
    SUBCASE("constant nonzero gap rejects with an infinite statistic") {
        Tensor probs = prob_matrix({{0.7, 0.3}, {0.7, 0.3}, {0.7, 0.3}});
        TTestResult r = paired_t_test(probs, 0.05);
        CHECK(r.reject);
        CHECK(std::isinf(r.t_stat));
        CHECK(r.p_value == 0.0);
    }
    SUBCASE("identical probabilities never reject") {
        Tensor probs = prob_matrix({{0.5, 0.5}, {0.5, 0.5}});
        TTestResult r = paired_t_test(probs, 0.05);
        CHECK_FALSE(r.reject);
        CHECK(r.t_stat == 0.0);
        CHECK(r.p_value == 1.0);
    }
    SUBCASE("vote ties rank the smaller class index on top") {
        Tensor probs = prob_matrix({{0.6, 0.4}, {0.3, 0.7}, {0.55, 0.45}, {0.2, 0.8}});
        TTestResult r = paired_t_test(probs, 0.05);
        CHECK(r.top_class == 0);
        CHECK(r.second_class == 1);
    }
    SUBCASE("three classes rank by vote count") {
        Tensor probs = prob_matrix({{0.1, 0.2, 0.7},
                                    {0.15, 0.2, 0.65},
                                    {0.6, 0.2, 0.2},
                                    {0.1, 0.1, 0.8}});
        TTestResult r = paired_t_test(probs, 0.05);
        CHECK(r.top_class == 2);
        CHECK(r.second_class == 0);
    }
    SUBCASE("equal-vote swap keeps the smaller index on top") {
        // votes: class0 2, class1 3, class2 3 -> top 1, second 2.
        Tensor probs = prob_matrix({{0.8, 0.1, 0.1},
                                    {0.7, 0.2, 0.1},
                                    {0.1, 0.8, 0.1},
                                    {0.1, 0.7, 0.2},
                                    {0.2, 0.6, 0.2},
                                    {0.1, 0.2, 0.7},
                                    {0.1, 0.1, 0.8},
                                    {0.2, 0.2, 0.6}});
        TTestResult r = paired_t_test(probs, 0.05);
        CHECK(r.top_class == 1);
        CHECK(r.second_class == 2);
    }
    SUBCASE("preconditions") {
        Tensor one_row = prob_matrix({{0.6, 0.4}});
        CHECK_THROWS_AS(paired_t_test(one_row, 0.05), MetricError);
        Tensor one_col({std::size_t{3}, std::size_t{1}});
        CHECK_THROWS_AS(paired_t_test(one_col, 0.05), MetricError);
        Tensor ok = prob_matrix({{0.6, 0.4}, {0.7, 0.3}});
        CHECK_THROWS_AS(paired_t_test(ok, 0.0), MetricError);
        CHECK_THROWS_AS(paired_t_test(ok, 1.0), MetricError);
    }
}

TEST_CASE("t-test size matches its nominal level under the null") {
    // Complementary two-class probabilities with a symmetric random gap: the
    // vote-derived ordering only flips the sign of the paired difference, so
    // the two-sided test keeps its exact size. Binomial(4000, 0.05) has mean
    // 200 and sd 13.8; the band below is about +-3 sd.
    const std::size_t instances = 4000, S = 25;
    Rng rng(314159);
    std::size_t rejections = 0;
    Tensor probs({S, std::size_t{2}});
    for (std::size_t i = 0; i < instances; ++i) {
        for (std::size_t s = 0; s < S; ++s) {
            const double d = 0.05 * rng.normal();
            probs.at(s, 0) = 0.5 + d;
            probs.at(s, 1) = 0.5 - d;
        }
        if (paired_t_test(probs, 0.05).reject) ++rejections;
    }
    const double rate = static_cast<double>(rejections) / static_cast<double>(instances);
    CHECK(rate > 0.039);
    CHECK(rate < 0.062);
}

TEST_CASE("pavpu rewards confident hits and hesitant misses") {
    std::vector<bool> correct, certain;
    auto add = [&](int n, bool co, bool ce) {
        for (int i = 0; i < n; ++i) {
            correct.push_back(co);
            certain.push_back(ce);
        }
    };
    add(6, true, true);   // accurate and certain
    add(1, true, false);  // accurate but uncertain
    add(2, false, true);  // inaccurate and certain
    add(1, false, false); // inaccurate and uncertain
    CHECK(pavpu(correct, certain) == doctest::Approx(0.7).epsilon(1e-15));

    CHECK_THROWS_AS(pavpu({}, {}), MetricError);
    CHECK_THROWS_AS(pavpu({true}, {true, false}), MetricError);
}

TEST_CASE("regularized incomplete beta against frozen references") {
    // scipy.special.betainc
    CHECK(incomplete_beta(2.5, 0.5, 0.7) == doctest::Approx(0.2031106637200549).epsilon(1e-12));
    CHECK(incomplete_beta(0.5, 0.5, 0.3) == doctest::Approx(0.36901011956554536).epsilon(1e-12));
    CHECK(incomplete_beta(5.0, 3.0, 0.5) == doctest::Approx(0.2265625).epsilon(1e-13)); // 29/128
    CHECK(incomplete_beta(2.0, 3.0, 0.0) == 0.0);
    CHECK(incomplete_beta(2.0, 3.0, -0.5) == 0.0);
    CHECK(incomplete_beta(2.0, 3.0, 1.0) == 1.0);
    CHECK(incomplete_beta(2.0, 3.0, 1.5) == 1.0);
    CHECK_THROWS_AS(incomplete_beta(0.0, 1.0, 0.5), MetricError);
    CHECK_THROWS_AS(incomplete_beta(1.0, -1.0, 0.5), MetricError);
}

TEST_CASE("student-t cdf against frozen references") {
    // scipy.stats.t.cdf
    CHECK(student_t_cdf(1.0, 5.0) == doctest::Approx(0.81839126617543867).epsilon(1e-12));
    CHECK(student_t_cdf(2.5, 9.0) == doctest::Approx(0.98306908615850708).epsilon(1e-12));
    CHECK(student_t_cdf(-1.3, 29.0) == doctest::Approx(0.10191959183101489).epsilon(1e-12));
    CHECK(student_t_cdf(0.7, 999.0) == doctest::Approx(0.75795486153291813).epsilon(1e-12));
    CHECK(student_t_cdf(0.0, 7.0) == 0.5);
    CHECK(student_t_cdf(std::numeric_limits<double>::infinity(), 3.0) == 1.0);
    CHECK(student_t_cdf(-std::numeric_limits<double>::infinity(), 3.0) == 0.0);
    // Symmetry.
    CHECK(student_t_cdf(-2.2, 12.0) ==
          doctest::Approx(1.0 - student_t_cdf(2.2, 12.0)).epsilon(1e-14));
    // Two-sided p-value at |t| = 2 with 99 dof.
    const double p = 2.0 * (1.0 - student_t_cdf(2.0, 99.0));
    CHECK(p == doctest::Approx(0.048239693372632973).epsilon(1e-12));
    CHECK_THROWS_AS(student_t_cdf(1.0, 0.0), MetricError);
}

TEST_CASE("coverage and calibration are invariant under monotone transforms") {
    // With S = 41 every percentile boundary used by picp/qice is an exact
    // order statistic, so applying exp to truths and draws must change nothing.
    const std::size_t N = 50, S = 41;
    Rng rng(2718);
    SampleMatrix sm;
    sm.y_true.resize(N);
    sm.y_samples = Tensor({N, S});
    for (std::size_t i = 0; i < N; ++i) {
        sm.y_true[i] = rng.normal();
        for (std::size_t s = 0; s < S; ++s) sm.y_samples.at(i, s) = rng.normal();
    }
    SampleMatrix tx = sm;
    for (std::size_t i = 0; i < N; ++i) {
        tx.y_true[i] = std::exp(tx.y_true[i]);
        for (std::size_t s = 0; s < S; ++s) tx.y_samples.at(i, s) = std::exp(tx.y_samples.at(i, s));
    }
    CHECK(picp(tx) == picp(sm));
    CHECK(qice(tx) == qice(sm));
}

TEST_CASE("kde mode counting") {
    Rng rng(99);

    SUBCASE("two well-separated bumps") {
        std::vector<double> samples;
        for (int i = 0; i < 200; ++i) samples.push_back(-2.0 + 0.3 * rng.normal());
        for (int i = 0; i < 200; ++i) samples.push_back(2.0 + 0.3 * rng.normal());
        CHECK(count_sample_modes(samples, 0.25) == 2);
    }
    SUBCASE("one gaussian") {
        std::vector<double> samples;
        for (int i = 0; i < 400; ++i) samples.push_back(1.0 + 0.5 * rng.normal());
        CHECK(count_sample_modes(samples, 0.3) == 1);
    }
    SUBCASE("a bump below the relative height threshold is ignored") {
        std::vector<double> samples;
        for (int i = 0; i < 200; ++i) samples.push_back(-2.0 + 0.3 * rng.normal());
        for (int i = 0; i < 200; ++i) samples.push_back(2.0 + 0.3 * rng.normal());
        for (int i = 0; i < 6; ++i) samples.push_back(6.0 + 0.02 * rng.normal());
        CHECK(count_sample_modes(samples, 0.25) == 2);
        // Lowering the threshold far enough surfaces it.
        CHECK(count_sample_modes(samples, 0.25, 512, 0.01) == 3);
    }
    SUBCASE("a point mass is one mode") {
        CHECK(count_sample_modes({2.0, 2.0, 2.0, 2.0}, 0.5) == 1);
    }
    SUBCASE("preconditions") {
        CHECK_THROWS_AS(count_sample_modes({1.0}, 0.5), MetricError);
        CHECK_THROWS_AS(count_sample_modes({1.0, 2.0}, 0.0), MetricError);
    }
}

} // TEST_SUITE
