#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "card/tensor.hpp"

namespace card {

// N true responses paired with N x S sampled draws.
struct SampleMatrix {
    std::vector<double> y_true;
    Tensor y_samples; // (N, S)

    std::size_t N() const { return y_true.size(); }
    std::size_t S() const { return y_samples.cols(); }
    void validate(const char* who) const;
};

// Linear-interpolation percentile of an ascending-sorted vector (h = (n-1)p).
double percentile_sorted(const std::vector<double>& sorted, double pct);

// Prediction interval coverage: fraction of instances whose truth falls inside
// the per-instance [low_pct, high_pct] sample percentile band. Requires S >= 40.
double picp(const SampleMatrix& sm, double low_pct = 2.5, double high_pct = 97.5);

// Quantile calibration error over M equal-mass bins per instance: mean absolute
// deviation of the per-bin truth frequencies from 1/M. Boundary ties go to the
// lower bin, values outside the sampled range clamp to the outermost bins.
double qice(const SampleMatrix& sm, int M = 10);

// sqrt(mean_n (mean_s y_samples[n] - y_true[n])^2): per-instance sample mean
// as the point estimate, all S draws included.
double rmse(const SampleMatrix& sm);

// Per-instance Gaussian moment fit (unbiased variance, floored at 1e-6);
// reports mean negative log density of the truth and how many floors fired.
struct NllReport {
    double value = 0.0;
    std::size_t floored = 0;
};
NllReport nll_gaussian_fit(const SampleMatrix& sm);

// Mean prediction interval width of the per-instance bands (regression).
double mean_interval_width(const SampleMatrix& sm, double low_pct = 2.5, double high_pct = 97.5);

// PIW: percentile width of the true class's probability across draws.
double piw_instance(const Tensor& prob_samples /* S x C */, int true_class,
                    double low_pct = 2.5, double high_pct = 97.5);

// Paired two-sample t-test between the probabilities of the most- and
// second-most-predicted classes (ranked by argmax vote count, ties to the
// smaller index) across S paired draws; two-sided p-value, S-1 dof.
struct TTestResult {
    bool reject = false;
    double t_stat = 0.0;
    double p_value = 1.0;
    int top_class = 0;
    int second_class = 0;
};
TTestResult paired_t_test(const Tensor& prob_samples /* S x C */, double alpha);

// Patch accuracy vs uncertainty: (accurate-and-certain + inaccurate-and-uncertain) / total.
double pavpu(const std::vector<bool>& correct, const std::vector<bool>& certain);

// ----- special functions (exposed for verification) -----

// Regularized incomplete beta I_x(a, b) via Lentz continued fraction.
double incomplete_beta(double a, double b, double x);
// Student-t CDF with nu degrees of freedom.
double student_t_cdf(double t, double nu);

// ----- distribution shape helpers -----

// Count modes of a 1-D sample set: Gaussian-KDE on a uniform grid, strict
// local maxima with height >= min_rel_height * global max.
int count_sample_modes(std::vector<double> samples, double bandwidth,
                       int grid_points = 512, double min_rel_height = 0.2);

} // namespace card
