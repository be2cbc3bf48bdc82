#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "card/config.hpp"
#include "card/metrics.hpp"

namespace card {

// Named scalar metrics plus provenance strings and optional per-class tables,
// serialized as sectioned key-value text (metrics.ini).
struct MetricReport {
    std::vector<std::pair<std::string, double>> values;
    std::vector<std::pair<std::string, std::string>> provenance;
    // class_tables[k] holds (key, value) rows for class k+1.
    std::vector<std::vector<std::pair<std::string, double>>> class_tables;

    bool has(const std::string& key) const;
    double get(const std::string& key) const; // MetricError when absent
    void put(const std::string& key, double v);
    void note(const std::string& key, const std::string& v);

    Config to_config() const;
    static MetricReport from_config(const Config& c);
};

enum class Stage { pretrain, train, sample, evaluate, plot, all };
Stage stage_from_name(const std::string& name); // config error on unknown names
const char* stage_name(Stage s);

struct RunResult {
    std::string run_dir;
    std::vector<MetricReport> folds;
    MetricReport summary; // <key>_mean / <key>_std across folds
};

// End-to-end chain per fold: data -> pretrain f -> train eps -> sample ->
// evaluate -> plot, stopping after `upto`. Every stage first looks for its
// artifacts in the run directory and loads them instead of recomputing, so a
// failed or truncated run resumes where it stopped. evaluate and plot work
// exclusively from the persisted samples.csv / truths.csv.
RunResult run_pipeline(const ExperimentConfig& cfg, Stage upto = Stage::all,
                       std::ostream* log = nullptr);

// Re-derive the metric report of one fold directory from its CSV artifacts.
MetricReport evaluate_artifacts(const std::string& fold_dir, const ExperimentConfig& cfg,
                                int fold);

// Render scatter.svg for one fold directory from its CSV artifacts.
// Config error for classification tasks or non-scalar covariates.
void plot_artifacts(const std::string& fold_dir, const ExperimentConfig& cfg);

// Mean/std aggregation of fold reports (sample std, 0 for a single fold).
MetricReport summarize_folds(const std::vector<MetricReport>& folds);

// Resolve the run directory: cfg.run_dir verbatim when set, otherwise a fresh
// `<output_dir>/<name>-<hash8>-<timestamp>` path.
std::string resolve_run_dir(const ExperimentConfig& cfg);

} // namespace card
