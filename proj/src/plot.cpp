#include "card/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "card/error.hpp"

namespace card {

namespace {

constexpr double kWidth = 900.0, kHeight = 600.0, kMargin = 60.0;

struct Axis {
    double lo = 0.0, hi = 1.0;
    void include(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void pad() {
        const double span = hi - lo;
        const double p = span > 0.0 ? 0.05 * span : 1.0;
        lo -= p;
        hi += p;
    }
};

std::string num(double v) {
    std::ostringstream out;
    out.precision(6);
    out << v;
    return out.str();
}

// Round tick label for axis annotation.
std::string tick_label(double v) {
    std::ostringstream out;
    out.precision(4);
    out << v;
    return out.str();
}

} // namespace

void plot_scatter(const std::string& path, const Dataset& test, const SampleMatrix& sm,
                  const std::vector<double>& true_mean, const PlotOptions& opt) {
    sm.validate("plot_scatter");
    if (test.x_dim() != 1)
        throw ConfigError("plot_scatter: scatter plots support 1-D covariates only, got x_dim=" +
                          std::to_string(test.x_dim()));
    if (test.n() != sm.N())
        throw ConfigError("plot_scatter: dataset rows " + std::to_string(test.n()) +
                          " vs sample matrix rows " + std::to_string(sm.N()));
    if (!true_mean.empty() && true_mean.size() != sm.N())
        throw ConfigError("plot_scatter: true-mean vector length mismatch");

    const std::size_t N = sm.N(), S = sm.S();

    // Per-instance band edges and sampled means, ordered by covariate.
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return test.X.at(a, 0) < test.X.at(b, 0);
    });
    std::vector<double> band_lo(N), band_hi(N), smean(N);
    std::vector<double> row(S);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t s = 0; s < S; ++s) row[s] = sm.y_samples.at(i, s);
        std::sort(row.begin(), row.end());
        band_lo[i] = percentile_sorted(row, opt.low_pct);
        band_hi[i] = percentile_sorted(row, opt.high_pct);
        smean[i] = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(S);
    }

    Axis ax{test.X.at(order.front(), 0), test.X.at(order.front(), 0)};
    Axis ay{sm.y_true.front(), sm.y_true.front()};
    for (std::size_t i = 0; i < N; ++i) {
        ax.include(test.X.at(i, 0));
        ay.include(sm.y_true[i]);
        ay.include(band_lo[i]);
        ay.include(band_hi[i]);
    }
    ax.pad();
    ay.pad();
    const auto px = [&](double x) {
        return kMargin + (x - ax.lo) / (ax.hi - ax.lo) * (kWidth - 2 * kMargin);
    };
    const auto py = [&](double y) {
        return kHeight - kMargin - (y - ay.lo) / (ay.hi - ay.lo) * (kHeight - 2 * kMargin);
    };

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n"
        << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" fill=\"white\"/>\n";

    // Percentile band as a closed polygon: upper edge left-to-right, lower back.
    svg << "<polygon fill=\"#bcd9f2\" fill-opacity=\"0.7\" stroke=\"none\" points=\"";
    for (std::size_t k = 0; k < N; ++k) {
        const std::size_t i = order[k];
        svg << num(px(test.X.at(i, 0))) << "," << num(py(band_hi[i])) << " ";
    }
    for (std::size_t k = N; k-- > 0;) {
        const std::size_t i = order[k];
        svg << num(px(test.X.at(i, 0))) << "," << num(py(band_lo[i])) << " ";
    }
    svg << "\"/>\n";

    // Thinned generated points.
    const std::size_t total = N * S;
    const std::size_t stride =
        std::max<std::size_t>(1, total / static_cast<std::size_t>(std::max(1, opt.max_generated_points)));
    svg << "<g fill=\"#e4784d\" fill-opacity=\"0.35\">\n";
    for (std::size_t flat = 0; flat < total; flat += stride) {
        const std::size_t i = flat / S, s = flat % S;
        const double y = sm.y_samples.at(i, s);
        if (y < ay.lo || y > ay.hi) continue;
        svg << "<circle cx=\"" << num(px(test.X.at(i, 0))) << "\" cy=\"" << num(py(y))
            << "\" r=\"1.6\"/>\n";
    }
    svg << "</g>\n";

    // Observed points.
    svg << "<g fill=\"#2d3142\" fill-opacity=\"0.65\">\n";
    for (std::size_t i = 0; i < N; ++i)
        svg << "<circle cx=\"" << num(px(test.X.at(i, 0))) << "\" cy=\""
            << num(py(sm.y_true[i])) << "\" r=\"2.2\"/>\n";
    svg << "</g>\n";

    const auto polyline = [&](const std::vector<double>& ys, const char* color,
                              const char* dash) {
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"";
        if (dash[0] != '\0') svg << " stroke-dasharray=\"" << dash << "\"";
        svg << " points=\"";
        for (std::size_t k = 0; k < N; ++k) {
            const std::size_t i = order[k];
            svg << num(px(test.X.at(i, 0))) << "," << num(py(ys[i])) << " ";
        }
        svg << "\"/>\n";
    };
    polyline(smean, "#1f77b4", "");
    if (!true_mean.empty()) polyline(true_mean, "#2ca02c", "6,4");

    // Axes, ticks, labels.
    svg << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\""
        << kWidth - kMargin << "\" y2=\"" << kHeight - kMargin
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n"
        << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin
        << "\" y2=\"" << kHeight - kMargin << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    for (int k = 0; k <= 5; ++k) {
        const double fx = ax.lo + (ax.hi - ax.lo) * k / 5.0;
        const double fy = ay.lo + (ay.hi - ay.lo) * k / 5.0;
        svg << "<line x1=\"" << num(px(fx)) << "\" y1=\"" << kHeight - kMargin << "\" x2=\""
            << num(px(fx)) << "\" y2=\"" << kHeight - kMargin + 5
            << "\" stroke=\"black\"/>\n"
            << "<text x=\"" << num(px(fx)) << "\" y=\"" << kHeight - kMargin + 20
            << "\" font-size=\"11\" text-anchor=\"middle\">" << tick_label(fx) << "</text>\n"
            << "<line x1=\"" << kMargin - 5 << "\" y1=\"" << num(py(fy)) << "\" x2=\"" << kMargin
            << "\" y2=\"" << num(py(fy)) << "\" stroke=\"black\"/>\n"
            << "<text x=\"" << kMargin - 8 << "\" y=\"" << num(py(fy) + 4)
            << "\" font-size=\"11\" text-anchor=\"end\">" << tick_label(fy) << "</text>\n";
    }
    if (!opt.title.empty())
        svg << "<text x=\"" << kWidth / 2 << "\" y=\"" << kMargin / 2
            << "\" font-size=\"15\" text-anchor=\"middle\">" << opt.title << "</text>\n";

    // Legend.
    const double lx = kWidth - kMargin - 210, ly = kMargin + 8;
    svg << "<rect x=\"" << lx - 10 << "\" y=\"" << ly - 14 << "\" width=\"220\" height=\""
        << (true_mean.empty() ? 76 : 94)
        << "\" fill=\"white\" fill-opacity=\"0.85\" stroke=\"#999\"/>\n";
    int row_i = 0;
    const auto legend = [&](const std::string& marker, const std::string& label) {
        const double y = ly + 18.0 * row_i++;
        svg << marker << "<text x=\"" << lx + 26 << "\" y=\"" << y + 4
            << "\" font-size=\"12\">" << label << "</text>\n";
    };
    legend("<circle cx=\"" + num(lx + 8) + "\" cy=\"" + num(ly + 18.0 * row_i) +
               "\" r=\"2.2\" fill=\"#2d3142\"/>\n",
           "observed");
    legend("<circle cx=\"" + num(lx + 8) + "\" cy=\"" + num(ly + 18.0 * row_i) +
               "\" r=\"1.6\" fill=\"#e4784d\"/>\n",
           "generated");
    legend("<rect x=\"" + num(lx) + "\" y=\"" + num(ly + 18.0 * row_i - 5) +
               "\" width=\"16\" height=\"10\" fill=\"#bcd9f2\"/>\n",
           "percentile band");
    legend("<line x1=\"" + num(lx) + "\" y1=\"" + num(ly + 18.0 * row_i) + "\" x2=\"" +
               num(lx + 16) + "\" y2=\"" + num(ly + 18.0 * row_i) +
               "\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
           "sampled mean");
    if (!true_mean.empty())
        legend("<line x1=\"" + num(lx) + "\" y1=\"" + num(ly + 18.0 * row_i) + "\" x2=\"" +
                   num(lx + 16) + "\" y2=\"" + num(ly + 18.0 * row_i) +
                   "\" stroke=\"#2ca02c\" stroke-width=\"2\" stroke-dasharray=\"6,4\"/>\n",
               "true mean");

    svg << "</svg>\n";

    std::ofstream out(path);
    if (!out) throw DataError("plot_scatter: cannot open output file " + path);
    out << svg.str();
    if (!out) throw DataError("plot_scatter: write failed for " + path);
}

} // namespace card
