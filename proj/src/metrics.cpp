#include "card/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "card/error.hpp"

namespace card {

void SampleMatrix::validate(const char* who) const {
    if (y_true.empty()) throw MetricError(std::string(who) + ": empty sample matrix");
    if (y_samples.rows() != y_true.size())
        throw MetricError(std::string(who) + ": rows " + std::to_string(y_samples.rows()) +
                          " vs truths " + std::to_string(y_true.size()));
    if (y_samples.cols() < 1) throw MetricError(std::string(who) + ": no draws");
    for (double v : y_true)
        if (!std::isfinite(v)) throw MetricError(std::string(who) + ": non-finite truth");
    if (!y_samples.all_finite()) throw MetricError(std::string(who) + ": non-finite sample");
}

double percentile_sorted(const std::vector<double>& sorted, double pct) {
    if (sorted.empty()) throw MetricError("percentile: empty input");
    if (pct <= 0.0) return sorted.front();
    if (pct >= 100.0) return sorted.back();
    const double h = (static_cast<double>(sorted.size()) - 1.0) * pct / 100.0;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const double frac = h - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

namespace {

std::vector<double> sorted_row(const Tensor& samples, std::size_t i) {
    std::vector<double> row(samples.cols());
    for (std::size_t s = 0; s < row.size(); ++s) row[s] = samples.at(i, s);
    std::sort(row.begin(), row.end());
    return row;
}

} // namespace

double picp(const SampleMatrix& sm, double low_pct, double high_pct) {
    sm.validate("picp");
    if (!(low_pct < high_pct)) throw MetricError("picp: low_pct must be below high_pct");
    if (sm.S() < 40)
        throw MetricError("picp: needs S >= 40 draws for tail percentiles, got " +
                          std::to_string(sm.S()));
    std::size_t inside = 0;
    for (std::size_t i = 0; i < sm.N(); ++i) {
        const auto row = sorted_row(sm.y_samples, i);
        const double lo = percentile_sorted(row, low_pct);
        const double hi = percentile_sorted(row, high_pct);
        if (sm.y_true[i] >= lo && sm.y_true[i] <= hi) ++inside;
    }
    return static_cast<double>(inside) / static_cast<double>(sm.N());
}

double qice(const SampleMatrix& sm, int M) {
    sm.validate("qice");
    if (M < 2) throw MetricError("qice: M must be >= 2");
    if (sm.S() < static_cast<std::size_t>(M))
        throw MetricError("qice: needs S >= M draws, got S=" + std::to_string(sm.S()));
    std::vector<std::size_t> counts(static_cast<std::size_t>(M), 0);
    std::vector<double> q(static_cast<std::size_t>(M) + 1);
    for (std::size_t i = 0; i < sm.N(); ++i) {
        const auto row = sorted_row(sm.y_samples, i);
        for (int m = 0; m <= M; ++m)
            q[static_cast<std::size_t>(m)] = percentile_sorted(row, 100.0 * m / M);
        const double y = sm.y_true[i];
        // Boundary ties to the lower bin; outside the range clamps to the edges.
        int bin = M - 1;
        for (int m = 0; m < M; ++m) {
            if (y <= q[static_cast<std::size_t>(m) + 1]) {
                bin = m;
                break;
            }
        }
        ++counts[static_cast<std::size_t>(bin)];
    }
    const double ideal = 1.0 / static_cast<double>(M);
    double acc = 0.0;
    for (int m = 0; m < M; ++m)
        acc += std::abs(static_cast<double>(counts[static_cast<std::size_t>(m)]) /
                            static_cast<double>(sm.N()) -
                        ideal);
    return acc / static_cast<double>(M);
}

double rmse(const SampleMatrix& sm) {
    sm.validate("rmse");
    double acc = 0.0;
    for (std::size_t i = 0; i < sm.N(); ++i) {
        const double mean = sm.y_samples.m().row(static_cast<Eigen::Index>(i)).mean();
        const double d = mean - sm.y_true[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(sm.N()));
}

NllReport nll_gaussian_fit(const SampleMatrix& sm) {
    sm.validate("nll");
    if (sm.S() < 2) throw MetricError("nll: needs S >= 2 draws to fit a variance");
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    constexpr double kVarFloor = 1e-6;
    NllReport rep;
    double acc = 0.0;
    const double S = static_cast<double>(sm.S());
    for (std::size_t i = 0; i < sm.N(); ++i) {
        const auto row = sm.y_samples.m().row(static_cast<Eigen::Index>(i));
        const double mu = row.mean();
        double var = (row.array() - mu).square().sum() / (S - 1.0);
        if (var < kVarFloor) {
            var = kVarFloor;
            ++rep.floored;
        }
        const double d = sm.y_true[i] - mu;
        acc += 0.5 * std::log(kTwoPi * var) + d * d / (2.0 * var);
    }
    rep.value = acc / static_cast<double>(sm.N());
    return rep;
}

double mean_interval_width(const SampleMatrix& sm, double low_pct, double high_pct) {
    sm.validate("piw");
    double acc = 0.0;
    for (std::size_t i = 0; i < sm.N(); ++i) {
        const auto row = sorted_row(sm.y_samples, i);
        acc += percentile_sorted(row, high_pct) - percentile_sorted(row, low_pct);
    }
    return acc / static_cast<double>(sm.N());
}

double piw_instance(const Tensor& prob_samples, int true_class, double low_pct, double high_pct) {
    const std::size_t S = prob_samples.rows(), C = prob_samples.cols();
    if (S < 40) throw MetricError("piw: needs S >= 40 draws, got " + std::to_string(S));
    if (true_class < 0 || static_cast<std::size_t>(true_class) >= C)
        throw MetricError("piw: class index outside range");
    std::vector<double> col(S);
    for (std::size_t s = 0; s < S; ++s) col[s] = prob_samples.at(s, static_cast<std::size_t>(true_class));
    std::sort(col.begin(), col.end());
    return percentile_sorted(col, high_pct) - percentile_sorted(col, low_pct);
}

TTestResult paired_t_test(const Tensor& prob_samples, double alpha) {
    const std::size_t S = prob_samples.rows(), C = prob_samples.cols();
    if (S < 2) throw MetricError("t-test: needs S >= 2 draws");
    if (C < 2) throw MetricError("t-test: needs at least 2 classes");
    if (!(alpha > 0.0 && alpha < 1.0)) throw MetricError("t-test: alpha must lie in (0,1)");

    // Rank classes by argmax vote count (ties to the smaller index).
    std::vector<std::size_t> votes(C, 0);
    for (std::size_t s = 0; s < S; ++s) {
        std::size_t arg = 0;
        for (std::size_t k = 1; k < C; ++k)
            if (prob_samples.at(s, k) > prob_samples.at(s, arg)) arg = k;
        ++votes[arg];
    }
    std::size_t top = 0, second = 1;
    if (votes[1] > votes[0]) { top = 1; second = 0; }
    for (std::size_t k = 2; k < C; ++k) {
        if (votes[k] > votes[top]) {
            second = top;
            top = k;
        } else if (votes[k] > votes[second]) {
            second = k;
        }
    }
    if (second < top && votes[second] == votes[top]) std::swap(top, second);

    TTestResult res;
    res.top_class = static_cast<int>(top);
    res.second_class = static_cast<int>(second);

    double mean_d = 0.0;
    for (std::size_t s = 0; s < S; ++s) mean_d += prob_samples.at(s, top) - prob_samples.at(s, second);
    mean_d /= static_cast<double>(S);
    double var_d = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
        const double d = prob_samples.at(s, top) - prob_samples.at(s, second) - mean_d;
        var_d += d * d;
    }
    var_d /= static_cast<double>(S - 1);

    if (var_d <= 0.0) {
        // Zero-variance differences: reject exactly when the gap is nonzero.
        res.reject = mean_d != 0.0;
        res.t_stat = res.reject ? std::numeric_limits<double>::infinity() : 0.0;
        res.p_value = res.reject ? 0.0 : 1.0;
        return res;
    }
    res.t_stat = mean_d / std::sqrt(var_d / static_cast<double>(S));
    const double cdf = student_t_cdf(std::abs(res.t_stat), static_cast<double>(S - 1));
    res.p_value = 2.0 * (1.0 - cdf);
    res.reject = res.p_value < alpha;
    return res;
}

double pavpu(const std::vector<bool>& correct, const std::vector<bool>& certain) {
    if (correct.empty()) throw MetricError("pavpu: empty input");
    if (correct.size() != certain.size())
        throw MetricError("pavpu: flag vectors differ in length");
    std::size_t n_ac = 0, n_iu = 0;
    for (std::size_t i = 0; i < correct.size(); ++i) {
        if (correct[i] && certain[i]) ++n_ac;
        if (!correct[i] && !certain[i]) ++n_iu;
    }
    return static_cast<double>(n_ac + n_iu) / static_cast<double>(correct.size());
}

// ----- special functions -----

namespace {

double log_beta(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Continued fraction for I_x(a,b) (Lentz's method).
double beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    return h; // converged to working precision for all practical (a,b)
}

} // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw MetricError("incomplete_beta: a, b must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double front = std::exp(a * std::log(x) + b * std::log(1.0 - x) - log_beta(a, b));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
    return 1.0 - std::exp(b * std::log(1.0 - x) + a * std::log(x) - log_beta(b, a)) *
                     beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double nu) {
    if (!(nu > 0.0)) throw MetricError("student_t_cdf: dof must be positive");
    if (t == 0.0) return 0.5;
    if (std::isinf(t)) return t > 0.0 ? 1.0 : 0.0;
    const double u = nu / (nu + t * t);
    const double ib = incomplete_beta(0.5 * nu, 0.5, u);
    return t > 0.0 ? 1.0 - 0.5 * ib : 0.5 * ib;
}

int count_sample_modes(std::vector<double> samples, double bandwidth, int grid_points,
                       double min_rel_height) {
    if (samples.size() < 2) throw MetricError("count_sample_modes: too few samples");
    if (!(bandwidth > 0.0)) throw MetricError("count_sample_modes: bandwidth must be positive");
    std::sort(samples.begin(), samples.end());
    const double lo = samples.front() - 3.0 * bandwidth;
    const double hi = samples.back() + 3.0 * bandwidth;
    const double step = (hi - lo) / static_cast<double>(grid_points - 1);
    std::vector<double> dens(static_cast<std::size_t>(grid_points), 0.0);
    const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    for (int g = 0; g < grid_points; ++g) {
        const double c = lo + g * step;
        // Samples are sorted; only a +-4 bandwidth window contributes.
        auto first = std::lower_bound(samples.begin(), samples.end(), c - 4.0 * bandwidth);
        auto last = std::upper_bound(samples.begin(), samples.end(), c + 4.0 * bandwidth);
        double acc = 0.0;
        for (auto it = first; it != last; ++it) {
            const double d = *it - c;
            acc += std::exp(-d * d * inv2h2);
        }
        dens[static_cast<std::size_t>(g)] = acc;
    }
    const double peak = *std::max_element(dens.begin(), dens.end());
    if (peak <= 0.0) return 0;
    const double floor = min_rel_height * peak;
    int modes = 0;
    int g = 0;
    while (g < grid_points) {
        const double v = dens[static_cast<std::size_t>(g)];
        // Walk across any plateau of equal values; it counts as one candidate.
        int e = g;
        while (e + 1 < grid_points && dens[static_cast<std::size_t>(e + 1)] == v) ++e;
        const bool rises_in = g == 0 || dens[static_cast<std::size_t>(g - 1)] < v;
        const bool falls_out = e + 1 == grid_points || dens[static_cast<std::size_t>(e + 1)] < v;
        if (v >= floor && rises_in && falls_out) ++modes;
        g = e + 1;
    }
    return modes;
}

} // namespace card
