#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "card/data.hpp"
#include "card/error.hpp"
#include "card/pipeline.hpp"

namespace {

struct GlobalArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string output_dir;
};

card::ExperimentConfig load_cfg(const GlobalArgs& g) {
    if (g.config_path.empty())
        throw card::ConfigError("--config is required (see configs/ for examples)");
    card::ExperimentConfig cfg = card::ExperimentConfig::load(g.config_path);
    if (g.seed) cfg.seed = *g.seed;
    if (!g.output_dir.empty()) cfg.run_dir = g.output_dir;
    return cfg;
}

void run_upto(const GlobalArgs& g, card::Stage stage) {
    const card::RunResult res = card::run_pipeline(load_cfg(g), stage, &std::cout);
    std::cout << "artifacts: " << res.run_dir << "\n";
}

struct ToyArgs {
    int epochs = 5000;
    std::uint64_t n = 10240;
    std::uint64_t n_test = 1024;
    std::uint64_t draws = 1000;
};

// Run every synthetic regression task end to end and print one summary row per
// task (PICP / QICE / RMSE / NLL), mirroring the usual benchmark table layout.
void reproduce_toys(const GlobalArgs& g, const ToyArgs& t) {
    const std::string parent = g.output_dir.empty() ? "runs/toys" : g.output_dir;
    std::vector<std::pair<std::string, card::MetricReport>> rows;
    for (const card::ToyTask task : card::all_toy_tasks()) {
        const std::string name = card::toy_task_name(task);
        card::ExperimentConfig cfg;
        cfg.name = "toy-" + name;
        cfg.seed = g.seed.value_or(7);
        cfg.toy = name;
        cfg.n = t.n;
        cfg.n_test = t.n_test;
        cfg.draws = t.draws;
        cfg.diffusion.epochs = t.epochs;
        cfg.run_dir = parent + "/" + name;
        std::cout << "=== " << name << " ===\n";
        const card::RunResult res = card::run_pipeline(cfg, card::Stage::all, &std::cout);
        rows.emplace_back(name, res.folds.front());
    }
    std::cout << "\ntask                     PICP%      QICE      RMSE       NLL\n";
    for (const auto& [name, rep] : rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-20s %9.2f %9.4f %9.4f %9.4f\n", name.c_str(),
                      100.0 * rep.get("picp"), rep.get("qice"), rep.get("rmse"),
                      rep.get("nll"));
        std::cout << line;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"card: conditional denoising diffusion for regression and classification "
                 "with uncertainty metrics"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "experiment config file (sectioned key = value)")
        ->expected(1);
    app.add_option("--seed", g.seed, "override the config seed")->expected(1);
    app.add_option("--output", g.output_dir,
                   "run directory for artifacts; an existing one is resumed")
        ->expected(1);

    std::string run_stage = "all";
    CLI::App* sub_run = app.add_subcommand("run", "full pipeline (or up to --stage)");
    sub_run->add_option("--stage", run_stage, "pretrain | train | sample | evaluate | plot | all");
    CLI::App* sub_pre = app.add_subcommand("pretrain", "train and freeze the mean estimator");
    CLI::App* sub_train = app.add_subcommand("train", "train the conditional noise network");
    sub_train->alias("train-regression");
    CLI::App* sub_sample = app.add_subcommand("sample", "draw reverse-chain samples to CSV");
    sub_sample->alias("sample-regression");
    CLI::App* sub_eval =
        app.add_subcommand("evaluate", "compute metrics from persisted sample CSVs");
    CLI::App* sub_plot = app.add_subcommand("plot", "render the scatter/band plot");

    ToyArgs toys;
    CLI::App* sub_toys =
        app.add_subcommand("reproduce-toy", "run all synthetic tasks and print a summary table");
    sub_toys->add_option("--epochs", toys.epochs, "diffusion epochs per task");
    sub_toys->add_option("--n", toys.n, "training set size per task");
    sub_toys->add_option("--n-test", toys.n_test, "held-out set size per task");
    sub_toys->add_option("--draws", toys.draws, "samples per test instance");

    for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
        if (sub_run->parsed()) run_upto(g, card::stage_from_name(run_stage));
        else if (sub_pre->parsed()) run_upto(g, card::Stage::pretrain);
        else if (sub_train->parsed()) run_upto(g, card::Stage::train);
        else if (sub_sample->parsed()) run_upto(g, card::Stage::sample);
        else if (sub_eval->parsed()) run_upto(g, card::Stage::evaluate);
        else if (sub_plot->parsed()) run_upto(g, card::Stage::plot);
        else if (sub_toys->parsed()) reproduce_toys(g, toys);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const card::CardError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
