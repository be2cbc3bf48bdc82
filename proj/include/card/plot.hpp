#pragma once

#include <string>
#include <vector>

#include "card/data.hpp"
#include "card/metrics.hpp"

namespace card {

struct PlotOptions {
    double low_pct = 2.5;
    double high_pct = 97.5;
    int max_generated_points = 4000; // per-draw dots are thinned to about this many
    std::string title;
};

// Scatter of the held-out set against its sampled predictive distribution:
// observed points, thinned generated points, the shaded percentile band, and
// the sampled conditional mean (plus the true mean when it is known).
// 1-D covariates only; the sample matrix must be non-empty. No file is
// written when validation fails.
void plot_scatter(const std::string& path, const Dataset& test, const SampleMatrix& sm,
                  const std::vector<double>& true_mean = {}, const PlotOptions& opt = {});

} // namespace card
