#include "card/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string_view>

#include "card/checkpoint.hpp"
#include "card/classification.hpp"
#include "card/error.hpp"
#include "card/plot.hpp"
#include "card/regression.hpp"
#include "card/rng.hpp"

namespace card {

namespace fs = std::filesystem;

// ----- MetricReport -----

bool MetricReport::has(const std::string& key) const {
    for (const auto& kv : values)
        if (kv.first == key) return true;
    return false;
}

double MetricReport::get(const std::string& key) const {
    for (const auto& kv : values)
        if (kv.first == key) return kv.second;
    throw MetricError("metric '" + key + "' is not in the report");
}

void MetricReport::put(const std::string& key, double v) {
    for (auto& kv : values)
        if (kv.first == key) {
            kv.second = v;
            return;
        }
    values.emplace_back(key, v);
}

void MetricReport::note(const std::string& key, const std::string& v) {
    for (auto& kv : provenance)
        if (kv.first == key) {
            kv.second = v;
            return;
        }
    provenance.emplace_back(key, v);
}

Config MetricReport::to_config() const {
    Config c;
    for (const auto& kv : provenance) c.set("provenance", kv.first, kv.second);
    for (const auto& kv : values) c.set_double("metrics", kv.first, kv.second);
    for (std::size_t k = 0; k < class_tables.size(); ++k)
        for (const auto& kv : class_tables[k])
            c.set_double("class_" + std::to_string(k + 1), kv.first, kv.second);
    return c;
}

MetricReport MetricReport::from_config(const Config& c) {
    MetricReport r;
    for (const auto& key : c.keys("provenance")) r.note(key, c.get("provenance", key));
    for (const auto& key : c.keys("metrics")) r.put(key, c.get_double("metrics", key, 0.0));
    for (std::size_t k = 1;; ++k) {
        const std::string sec = "class_" + std::to_string(k);
        const auto keys = c.keys(sec);
        if (keys.empty()) break;
        std::vector<std::pair<std::string, double>> table;
        for (const auto& key : keys) table.emplace_back(key, c.get_double(sec, key, 0.0));
        r.class_tables.push_back(std::move(table));
    }
    return r;
}

// ----- stages -----

Stage stage_from_name(const std::string& name) {
    if (name == "pretrain") return Stage::pretrain;
    if (name == "train") return Stage::train;
    if (name == "sample") return Stage::sample;
    if (name == "evaluate") return Stage::evaluate;
    if (name == "plot") return Stage::plot;
    if (name == "all") return Stage::all;
    throw ConfigError("unknown stage '" + name +
                      "' (expected pretrain, train, sample, evaluate, plot, or all)");
}

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::pretrain: return "pretrain";
        case Stage::train: return "train";
        case Stage::sample: return "sample";
        case Stage::evaluate: return "evaluate";
        case Stage::plot: return "plot";
        case Stage::all: return "all";
    }
    return "?";
}

std::string resolve_run_dir(const ExperimentConfig& cfg) {
    if (!cfg.run_dir.empty()) return cfg.run_dir;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
    return cfg.output_dir + "/" + cfg.name + "-" + cfg.config_hash().substr(0, 8) + "-" + stamp;
}

namespace {

// ----- flat CSV table I/O (sample/truth artifacts) -----

struct CsvTable {
    std::vector<std::string> header;
    std::vector<double> data; // row-major
    std::size_t rows = 0, cols = 0;

    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    int col(const std::string& name) const {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return static_cast<int>(c);
        return -1;
    }
    int require_col(const std::string& name, const std::string& path) const {
        const int c = col(name);
        if (c < 0) throw DataError(path + ": missing column '" + name + "'");
        return c;
    }
};

CsvTable read_csv_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open artifact: " + path);
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) t.header.push_back(cell);
    t.cols = t.header.size();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::size_t start = 0, seen = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            const std::string field = line.substr(
                start, comma == std::string::npos ? std::string::npos : comma - start);
            char* end = nullptr;
            const double v = std::strtod(field.c_str(), &end);
            if (end == field.c_str() || *end != '\0')
                throw DataError(path + " line " + std::to_string(line_no) +
                                ": bad numeric field '" + field + "'");
            t.data.push_back(v);
            ++seen;
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (seen != t.cols)
            throw DataError(path + " line " + std::to_string(line_no) + ": expected " +
                            std::to_string(t.cols) + " fields, got " + std::to_string(seen));
        ++t.rows;
    }
    return t;
}

std::ofstream open_artifact(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write artifact: " + path);
    return out;
}

// ----- per-fold data preparation -----

struct FoldData {
    Dataset train, test;          // original units
    Dataset train_std, test_std;  // network-facing (standardized) copies
    std::optional<Standardizer> x_std, y_std;
    std::vector<double> true_mean; // per test row, original units; empty if unknown
};

void decide_standardization(const ExperimentConfig& cfg, bool& std_x, bool& std_y) {
    const bool classification = cfg.is_classification();
    if (cfg.standardize == "off") {
        std_x = std_y = false;
    } else if (cfg.standardize == "on") {
        std_x = true;
        std_y = !classification;
    } else if (cfg.standardize == "response") {
        if (classification)
            throw ConfigError("[data] standardize = response requires a regression task");
        std_x = false;
        std_y = true;
    } else { // auto
        if (cfg.source == DataSource::csv) {
            std_x = true;
            std_y = !classification;
        } else if (cfg.source == DataSource::toy) {
            std_x = false;
            std_y = toy_task_from_name(cfg.toy) == ToyTask::loglog_cubic;
        } else {
            std_x = std_y = false;
        }
    }
}

FoldData prepare_fold(const ExperimentConfig& cfg, int fold,
                      const std::vector<FoldSplit>& csv_folds) {
    FoldData fd;
    const std::uint64_t train_seed = splitmix64_at(cfg.seed, 0x10000u + 2u * fold);
    const std::uint64_t test_seed = splitmix64_at(cfg.seed, 0x10000u + 2u * fold + 1u);
    switch (cfg.source) {
        case DataSource::toy: {
            const ToyTask task = toy_task_from_name(cfg.toy);
            fd.train = generate_toy(task, cfg.n, train_seed, cfg.circle_literal);
            fd.test = generate_toy(task, cfg.n_test, test_seed, cfg.circle_literal);
            bool known = true;
            std::vector<double> means(fd.test.n());
            for (std::size_t i = 0; i < fd.test.n() && known; ++i) {
                const auto m = toy_conditional_mean(task, fd.test.X.at(i, 0));
                if (m) means[i] = *m;
                else known = false;
            }
            if (known) fd.true_mean = std::move(means);
            break;
        }
        case DataSource::csv:
            fd.train = csv_folds[static_cast<std::size_t>(fold)].train;
            fd.test = csv_folds[static_cast<std::size_t>(fold)].test;
            break;
        case DataSource::blobs:
            fd.train = generate_blobs(cfg.n, cfg.classes, cfg.blob_radius, cfg.blob_sigma,
                                      train_seed);
            fd.test = generate_blobs(cfg.n_test, cfg.classes, cfg.blob_radius, cfg.blob_sigma,
                                     test_seed);
            break;
        case DataSource::moons:
            fd.train = generate_moons(cfg.n, cfg.moon_noise, train_seed);
            fd.test = generate_moons(cfg.n_test, cfg.moon_noise, test_seed);
            break;
    }

    bool std_x = false, std_y = false;
    decide_standardization(cfg, std_x, std_y);
    fd.train_std = fd.train;
    fd.test_std = fd.test;
    if (std_x) {
        fd.x_std = Standardizer::fit(fd.train.X);
        fd.x_std->apply(fd.train_std.X);
        fd.x_std->apply(fd.test_std.X);
    }
    if (std_y) {
        fd.y_std = Standardizer::fit(fd.train.Y);
        fd.y_std->apply(fd.train_std.Y);
        fd.y_std->apply(fd.test_std.Y);
    }
    return fd;
}

// ----- artifact writers -----

void write_regression_artifacts(const std::string& fold_dir, const FoldData& fd,
                                SampleSet& draws, const std::optional<Standardizer>& y_std) {
    if (y_std) {
        auto m = draws.draws.m();
        for (std::size_t c = 0; c < draws.C; ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                m(r, static_cast<Eigen::Index>(c)) =
                    y_std->invert_one(c, m(r, static_cast<Eigen::Index>(c)));
    }
    {
        auto out = open_artifact(fold_dir + "/samples.csv");
        out << "instance_id,draw_id";
        for (std::size_t d = 0; d < draws.C; ++d) out << ",y_" << d;
        out << "\n";
        for (std::size_t i = 0; i < draws.N; ++i)
            for (std::size_t s = 0; s < draws.S; ++s) {
                out << i << "," << s;
                for (std::size_t d = 0; d < draws.C; ++d)
                    out << "," << format_double(draws.at(i, s, d));
                out << "\n";
            }
    }
    {
        auto out = open_artifact(fold_dir + "/truths.csv");
        out << "instance_id";
        for (std::size_t p = 0; p < fd.test.x_dim(); ++p) out << ",x_" << p;
        for (std::size_t d = 0; d < fd.test.y_dim(); ++d) out << ",y_" << d;
        if (!fd.true_mean.empty()) out << ",mean_0";
        out << "\n";
        for (std::size_t i = 0; i < fd.test.n(); ++i) {
            out << i;
            for (std::size_t p = 0; p < fd.test.x_dim(); ++p)
                out << "," << format_double(fd.test.X.at(i, p));
            for (std::size_t d = 0; d < fd.test.y_dim(); ++d)
                out << "," << format_double(fd.test.Y.at(i, d));
            if (!fd.true_mean.empty()) out << "," << format_double(fd.true_mean[i]);
            out << "\n";
        }
    }
}

void write_classification_artifacts(const std::string& fold_dir, const FoldData& fd,
                                    const ClassificationSamples& cs,
                                    const std::vector<int>& fphi_pred) {
    {
        auto out = open_artifact(fold_dir + "/samples.csv");
        out << "instance_id,draw_id";
        for (std::size_t k = 1; k <= cs.C; ++k) out << ",prob_" << k;
        out << ",predicted_class\n";
        for (std::size_t i = 0; i < cs.N; ++i)
            for (std::size_t s = 0; s < cs.S; ++s) {
                out << i << "," << s;
                for (std::size_t k = 0; k < cs.C; ++k)
                    out << "," << format_double(cs.prob_at(i, s, k));
                out << "," << cs.pred_at(i, s) + 1 << "\n";
            }
    }
    {
        auto out = open_artifact(fold_dir + "/truths.csv");
        out << "instance_id";
        for (std::size_t p = 0; p < fd.test.x_dim(); ++p) out << ",x_" << p;
        out << ",class,fphi_class\n";
        for (std::size_t i = 0; i < fd.test.n(); ++i) {
            out << i;
            for (std::size_t p = 0; p < fd.test.x_dim(); ++p)
                out << "," << format_double(fd.test.X.at(i, p));
            out << "," << fd.test.label(i) + 1 << "," << fphi_pred[i] + 1 << "\n";
        }
    }
}

// ----- evaluation from artifacts -----

struct SampleLayout {
    std::size_t N = 0, S = 0;
};

SampleLayout infer_layout(const CsvTable& samples, const CsvTable& truths,
                          const std::string& path) {
    SampleLayout lay;
    lay.N = truths.rows;
    if (lay.N == 0) throw DataError(path + ": no instances in truths.csv");
    if (samples.rows % lay.N != 0)
        throw DataError(path + ": sample rows " + std::to_string(samples.rows) +
                        " are not a multiple of " + std::to_string(lay.N) + " instances");
    lay.S = samples.rows / lay.N;
    return lay;
}

MetricReport evaluate_regression_csv(const std::string& fold_dir, const ExperimentConfig& cfg,
                                     int fold) {
    const std::string spath = fold_dir + "/samples.csv", tpath = fold_dir + "/truths.csv";
    const CsvTable samples = read_csv_table(spath);
    const CsvTable truths = read_csv_table(tpath);
    const auto lay = infer_layout(samples, truths, fold_dir);

    std::size_t y_dim = 0;
    while (samples.col("y_" + std::to_string(y_dim)) >= 0) ++y_dim;
    if (y_dim == 0) throw DataError(spath + ": no response columns (y_0, ...)");
    const int s_iid = samples.require_col("instance_id", spath);
    const int s_did = samples.require_col("draw_id", spath);

    MetricReport rep;
    rep.note("config_hash", cfg.config_hash());
    rep.note("task", "regression");
    rep.note("seed", std::to_string(cfg.seed));
    rep.note("fold", std::to_string(fold));
    rep.put("n_instances", static_cast<double>(lay.N));
    rep.put("draws", static_cast<double>(lay.S));

    for (std::size_t d = 0; d < y_dim; ++d) {
        const int sy = samples.require_col("y_" + std::to_string(d), spath);
        const int ty = truths.require_col("y_" + std::to_string(d), tpath);
        const int tm = truths.col("mean_" + std::to_string(d));

        SampleMatrix sm;
        sm.y_true.resize(lay.N);
        for (std::size_t i = 0; i < lay.N; ++i)
            sm.y_true[i] = truths.at(i, static_cast<std::size_t>(ty));
        sm.y_samples = Tensor::zeros({lay.N, lay.S});
        for (std::size_t r = 0; r < samples.rows; ++r) {
            const auto i = static_cast<std::size_t>(samples.at(r, static_cast<std::size_t>(s_iid)));
            const auto s = static_cast<std::size_t>(samples.at(r, static_cast<std::size_t>(s_did)));
            if (i >= lay.N || s >= lay.S)
                throw DataError(spath + ": instance/draw id out of range at data row " +
                                std::to_string(r));
            sm.y_samples.at(i, s) = samples.at(r, static_cast<std::size_t>(sy));
        }

        const std::string sfx = y_dim == 1 ? "" : "_y" + std::to_string(d);
        const double rmse_obs = rmse(sm);
        rep.put("rmse_observed" + sfx, rmse_obs);
        if (tm >= 0) {
            SampleMatrix sm_mean;
            sm_mean.y_true.resize(lay.N);
            for (std::size_t i = 0; i < lay.N; ++i)
                sm_mean.y_true[i] = truths.at(i, static_cast<std::size_t>(tm));
            sm_mean.y_samples = sm.y_samples;
            rep.put("rmse" + sfx, rmse(sm_mean));
        } else {
            rep.put("rmse" + sfx, rmse_obs);
        }
        rep.put("picp" + sfx, picp(sm, cfg.picp_low, cfg.picp_high));
        rep.put("qice" + sfx, qice(sm, cfg.qice_bins));
        const NllReport nll = nll_gaussian_fit(sm);
        rep.put("nll" + sfx, nll.value);
        rep.put("nll_floored" + sfx, static_cast<double>(nll.floored));
        rep.put("interval_width" + sfx, mean_interval_width(sm, cfg.picp_low, cfg.picp_high));
    }
    return rep;
}

MetricReport evaluate_classification_csv(const std::string& fold_dir,
                                         const ExperimentConfig& cfg, int fold) {
    const std::string spath = fold_dir + "/samples.csv", tpath = fold_dir + "/truths.csv";
    const CsvTable samples = read_csv_table(spath);
    const CsvTable truths = read_csv_table(tpath);
    const auto lay = infer_layout(samples, truths, fold_dir);

    std::size_t C = 0;
    while (samples.col("prob_" + std::to_string(C + 1)) >= 0) ++C;
    if (C < 2) throw DataError(spath + ": needs prob_1..prob_C columns with C >= 2");
    const int s_iid = samples.require_col("instance_id", spath);
    const int s_did = samples.require_col("draw_id", spath);
    const int s_pred = samples.require_col("predicted_class", spath);
    const int t_cls = truths.require_col("class", tpath);
    const int t_f = truths.col("fphi_class");

    std::vector<std::size_t> prob_cols(C);
    for (std::size_t k = 0; k < C; ++k)
        prob_cols[k] = static_cast<std::size_t>(
            samples.require_col("prob_" + std::to_string(k + 1), spath));

    // Per-instance (S, C) probability blocks and per-draw argmax predictions.
    std::vector<Tensor> probs(lay.N, Tensor::zeros({lay.S, C}));
    std::vector<std::vector<int>> preds(lay.N, std::vector<int>(lay.S, 0));
    for (std::size_t r = 0; r < samples.rows; ++r) {
        const auto i = static_cast<std::size_t>(samples.at(r, static_cast<std::size_t>(s_iid)));
        const auto s = static_cast<std::size_t>(samples.at(r, static_cast<std::size_t>(s_did)));
        if (i >= lay.N || s >= lay.S)
            throw DataError(spath + ": instance/draw id out of range at data row " +
                            std::to_string(r));
        for (std::size_t k = 0; k < C; ++k) probs[i].at(s, k) = samples.at(r, prob_cols[k]);
        preds[i][s] = static_cast<int>(samples.at(r, static_cast<std::size_t>(s_pred))) - 1;
    }

    std::vector<bool> correct(lay.N), certain(lay.N), fphi_correct(lay.N);
    std::vector<double> piw(lay.N);
    std::vector<int> true_cls(lay.N), majority(lay.N);
    for (std::size_t i = 0; i < lay.N; ++i) {
        true_cls[i] = static_cast<int>(truths.at(i, static_cast<std::size_t>(t_cls))) - 1;
        if (true_cls[i] < 0 || static_cast<std::size_t>(true_cls[i]) >= C)
            throw DataError(tpath + ": class outside 1.." + std::to_string(C) + " at instance " +
                            std::to_string(i));
        majority[i] = predict_majority(preds[i], static_cast<int>(C));
        correct[i] = majority[i] == true_cls[i];
        piw[i] = piw_instance(probs[i], true_cls[i], cfg.picp_low, cfg.picp_high);
        certain[i] = paired_t_test(probs[i], cfg.alpha).reject;
        if (t_f >= 0)
            fphi_correct[i] =
                static_cast<int>(truths.at(i, static_cast<std::size_t>(t_f))) - 1 == true_cls[i];
    }

    MetricReport rep;
    rep.note("config_hash", cfg.config_hash());
    rep.note("task", "classification");
    rep.note("seed", std::to_string(cfg.seed));
    rep.note("fold", std::to_string(fold));
    rep.put("n_instances", static_cast<double>(lay.N));
    rep.put("draws", static_cast<double>(lay.S));
    rep.put("classes", static_cast<double>(C));

    const auto mean_over = [&](const std::vector<bool>& mask, const std::vector<double>& v,
                               bool flag) -> std::optional<double> {
        double acc = 0.0;
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i] == flag) {
                acc += v[i];
                ++cnt;
            }
        if (cnt == 0) return std::nullopt;
        return acc / static_cast<double>(cnt);
    };
    const auto frac_true = [](const std::vector<bool>& v) {
        return static_cast<double>(std::count(v.begin(), v.end(), true)) /
               static_cast<double>(v.size());
    };

    rep.put("accuracy", frac_true(correct));
    if (t_f >= 0) rep.put("fphi_accuracy", frac_true(fphi_correct));
    if (const auto m = mean_over(correct, piw, true)) rep.put("piw_correct", *m);
    if (const auto m = mean_over(correct, piw, false)) rep.put("piw_incorrect", *m);
    rep.put("ttest_reject_fraction", frac_true(certain));
    std::vector<double> correct_val(lay.N);
    for (std::size_t i = 0; i < lay.N; ++i) correct_val[i] = correct[i] ? 1.0 : 0.0;
    if (const auto m = mean_over(certain, correct_val, true)) rep.put("accuracy_rejected", *m);
    if (const auto m = mean_over(certain, correct_val, false))
        rep.put("accuracy_not_rejected", *m);
    rep.put("pavpu", pavpu(correct, certain));

    rep.class_tables.resize(C);
    for (std::size_t k = 0; k < C; ++k) {
        std::size_t cnt = 0, hit = 0;
        double piw_acc = 0.0;
        for (std::size_t i = 0; i < lay.N; ++i)
            if (static_cast<std::size_t>(true_cls[i]) == k) {
                ++cnt;
                piw_acc += piw[i];
                if (correct[i]) ++hit;
            }
        auto& table = rep.class_tables[k];
        table.emplace_back("count", static_cast<double>(cnt));
        if (cnt > 0) {
            table.emplace_back("accuracy",
                               static_cast<double>(hit) / static_cast<double>(cnt));
            table.emplace_back("mean_piw", piw_acc / static_cast<double>(cnt));
        }
    }
    return rep;
}

void write_report(const std::string& path, const MetricReport& rep) {
    auto out = open_artifact(path);
    out << rep.to_config().serialize();
}

} // namespace

MetricReport evaluate_artifacts(const std::string& fold_dir, const ExperimentConfig& cfg,
                                int fold) {
    return cfg.is_classification() ? evaluate_classification_csv(fold_dir, cfg, fold)
                                   : evaluate_regression_csv(fold_dir, cfg, fold);
}

void plot_artifacts(const std::string& fold_dir, const ExperimentConfig& cfg) {
    if (cfg.is_classification())
        throw ConfigError("plot: scatter plots are defined for regression tasks only");
    const std::string spath = fold_dir + "/samples.csv", tpath = fold_dir + "/truths.csv";
    const CsvTable samples = read_csv_table(spath);
    const CsvTable truths = read_csv_table(tpath);
    const auto lay = infer_layout(samples, truths, fold_dir);

    std::size_t x_dim = 0;
    while (truths.col("x_" + std::to_string(x_dim)) >= 0) ++x_dim;
    if (x_dim != 1)
        throw ConfigError("plot: scatter plots support 1-D covariates only, got x_dim=" +
                          std::to_string(x_dim));
    const int tx = truths.require_col("x_0", tpath);
    const int ty = truths.require_col("y_0", tpath);
    const int tm = truths.col("mean_0");
    const int sy = samples.require_col("y_0", spath);
    const int s_iid = samples.require_col("instance_id", spath);
    const int s_did = samples.require_col("draw_id", spath);

    Dataset view;
    view.X = Tensor::zeros({lay.N, 1});
    view.Y = Tensor::zeros({lay.N, 1});
    SampleMatrix sm;
    sm.y_true.resize(lay.N);
    sm.y_samples = Tensor::zeros({lay.N, lay.S});
    std::vector<double> mean;
    if (tm >= 0) mean.resize(lay.N);
    for (std::size_t i = 0; i < lay.N; ++i) {
        view.X.at(i, 0) = truths.at(i, static_cast<std::size_t>(tx));
        view.Y.at(i, 0) = truths.at(i, static_cast<std::size_t>(ty));
        sm.y_true[i] = view.Y.at(i, 0);
        if (tm >= 0) mean[i] = truths.at(i, static_cast<std::size_t>(tm));
    }
    for (std::size_t r = 0; r < samples.rows; ++r) {
        const auto i = static_cast<std::size_t>(samples.at(r, static_cast<std::size_t>(s_iid)));
        const auto s = static_cast<std::size_t>(samples.at(r, static_cast<std::size_t>(s_did)));
        if (i >= lay.N || s >= lay.S)
            throw DataError(spath + ": instance/draw id out of range at data row " +
                            std::to_string(r));
        sm.y_samples.at(i, s) = samples.at(r, static_cast<std::size_t>(sy));
    }

    PlotOptions opt;
    opt.low_pct = cfg.picp_low;
    opt.high_pct = cfg.picp_high;
    opt.title = cfg.name + (cfg.source == DataSource::toy ? " / " + cfg.toy : "");
    plot_scatter(fold_dir + "/scatter.svg", view, sm, mean, opt);
}

MetricReport summarize_folds(const std::vector<MetricReport>& folds) {
    MetricReport out;
    std::vector<std::string> order;
    for (const auto& f : folds)
        for (const auto& kv : f.values)
            if (std::find(order.begin(), order.end(), kv.first) == order.end())
                order.push_back(kv.first);
    for (const auto& key : order) {
        std::vector<double> vals;
        for (const auto& f : folds)
            if (f.has(key)) vals.push_back(f.get(key));
        const double n = static_cast<double>(vals.size());
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        const double sd = vals.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
        out.put(key + "_mean", mean);
        out.put(key + "_std", sd);
    }
    return out;
}

namespace {

std::string fold_dir_name(const std::string& run_dir, int fold) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "fold_%02d", fold);
    return run_dir + "/" + buf;
}

template <typename Fn>
void run_stage(Stage st, int fold, std::ostream* log, Fn&& fn) {
    try {
        fn();
    } catch (const CardError& e) {
        // An inner stage (e.g. pretrain reached lazily from train) has already
        // attributed the failure; keep the original message.
        if (std::string_view(e.what()).substr(0, 6) == "stage ") throw;
        const std::string msg = std::string("stage ") + stage_name(st) + " (fold " +
                                std::to_string(fold) + ") failed: " + e.what();
        if (log) (*log) << msg << "\n";
        throw CardError(msg, e.exit_code());
    }
}

} // namespace

RunResult run_pipeline(const ExperimentConfig& cfg_in, Stage upto, std::ostream* log) {
    ExperimentConfig cfg = cfg_in;
    cfg.validate();
    const auto say = [&](const std::string& s) {
        if (log) (*log) << s << std::endl;
    };

    cfg.run_dir = resolve_run_dir(cfg);
    fs::create_directories(cfg.run_dir);
    const std::string resolved_path = cfg.run_dir + "/resolved.ini";
    if (fs::exists(resolved_path)) {
        const Config prior = Config::parse_file(resolved_path);
        if (ExperimentConfig::from_config(prior).config_hash() != cfg.config_hash())
            throw ConfigError("run directory " + cfg.run_dir +
                              " holds artifacts of a different configuration; choose a fresh "
                              "directory or matching config");
    }
    {
        auto out = open_artifact(resolved_path);
        out << cfg.to_config().serialize();
    }
    say("run directory: " + cfg.run_dir);

    const NoiseSchedule sched = NoiseSchedule::linear(cfg.T, cfg.beta1, cfg.betaT);
    std::vector<FoldSplit> csv_folds;
    if (cfg.source == DataSource::csv) {
        CsvSchema schema;
        schema.has_header = cfg.csv_header;
        schema.response_cols = cfg.response_cols;
        schema.task = cfg.is_classification() ? TaskKind::classification : TaskKind::regression;
        const Dataset full = load_csv(cfg.csv_path, schema);
        SplitSpec split;
        split.ratio = cfg.split_ratio;
        split.fold_count = cfg.folds;
        split.seed = cfg.seed;
        csv_folds = make_folds(full, split);
    }

    RunResult result;
    result.run_dir = cfg.run_dir;
    const int level = std::min(static_cast<int>(upto), static_cast<int>(Stage::plot));

    for (int fold = 0; fold < cfg.folds; ++fold) {
        const std::string fdir = fold_dir_name(cfg.run_dir, fold);
        fs::create_directories(fdir);
        const FoldData fd = prepare_fold(cfg, fold, csv_folds);
        const bool classification = cfg.is_classification();
        const std::size_t out_dim =
            classification ? static_cast<std::size_t>(fd.train.class_count) : fd.train.y_dim();

        const std::string fphi_path = fdir + "/fphi.ckpt";
        const std::string net_path = fdir + "/epsnet.ckpt";
        const std::string ema_path = fdir + "/epsnet_ema.ckpt";
        const bool have_samples =
            fs::exists(fdir + "/samples.csv") && fs::exists(fdir + "/truths.csv");

        std::optional<MeanEstimator> f;
        const auto ensure_f = [&]() -> MeanEstimator& {
            if (f) return *f;
            run_stage(Stage::pretrain, fold, log, [&] {
                MeanEstimatorConfig pc = cfg.pretrain;
                pc.seed = splitmix64_at(cfg.seed, 0x20000u + static_cast<std::uint64_t>(fold));
                const TaskKind kind =
                    classification ? TaskKind::classification : TaskKind::regression;
                if (fs::exists(fphi_path)) {
                    f = MeanEstimator::make_untrained(kind, fd.train.x_dim(), out_dim, pc);
                    f->load_params(fphi_path);
                    say("fold " + std::to_string(fold) + ": loaded " + fphi_path);
                } else {
                    f = classification ? MeanEstimator::pretrain_classifier(fd.train_std, pc)
                                       : MeanEstimator::pretrain_regressor(fd.train_std, pc);
                    save_checkpoint(fphi_path, f->checkpoint_entries());
                    say("fold " + std::to_string(fold) + ": pretrained f_phi (stopped epoch " +
                        std::to_string(f->stopped_epoch()) + ", valid loss " +
                        format_double(f->best_valid_loss()) + ")");
                }
            });
            return *f;
        };

        DiffusionTrainConfig dc = cfg.diffusion;
        dc.seed = splitmix64_at(cfg.seed, 0x30000u + static_cast<std::uint64_t>(fold));
        dc.checkpoint_dir = fdir;
        if (log) {
            const int every = std::max(1, dc.epochs / 10);
            dc.on_epoch = [log, every, fold, total = dc.epochs](int epoch, double loss) {
                if (epoch % every == 0 || epoch == total)
                    (*log) << "fold " << fold << ": epoch " << epoch << "/" << total
                           << " loss " << format_double(loss) << std::endl;
            };
        }

        std::optional<EpsilonNetReg> rnet;
        const auto ensure_rnet = [&]() -> EpsilonNetReg& {
            if (rnet) return *rnet;
            run_stage(Stage::train, fold, log, [&] {
                if (fs::exists(net_path) && fs::exists(ema_path)) {
                    Rng shape_rng(0);
                    rnet.emplace(fd.train.x_dim(), fd.train.y_dim(), cfg.diffusion.width,
                                 shape_rng);
                    rnet->load(cfg.use_ema ? ema_path : net_path);
                    say("fold " + std::to_string(fold) + ": loaded " +
                        (cfg.use_ema ? ema_path : net_path));
                } else {
                    TrainedRegression tr = train_regression(fd.train_std, ensure_f(), sched, dc);
                    save_checkpoint(net_path, tr.net.checkpoint_entries());
                    tr.use_ema();
                    save_checkpoint(ema_path, tr.net.checkpoint_entries());
                    rnet = std::move(tr.net);
                    if (!cfg.use_ema) rnet->load(net_path);
                    say("fold " + std::to_string(fold) + ": trained eps net (final loss " +
                        format_double(tr.epoch_loss.back()) + ")");
                }
            });
            return *rnet;
        };

        std::optional<ClsEpsilonNet> cnet;
        const auto ensure_cnet = [&]() -> ClsEpsilonNet& {
            if (cnet) return *cnet;
            run_stage(Stage::train, fold, log, [&] {
                if (fs::exists(net_path) && fs::exists(ema_path)) {
                    Rng shape_rng(0);
                    cnet.emplace(fd.train.x_dim(), out_dim, cfg.diffusion.width, shape_rng);
                    cnet->load(cfg.use_ema ? ema_path : net_path);
                    say("fold " + std::to_string(fold) + ": loaded " +
                        (cfg.use_ema ? ema_path : net_path));
                } else {
                    TrainedClassification tr =
                        train_classification(fd.train_std, ensure_f(), sched, dc);
                    save_checkpoint(net_path, tr.net.checkpoint_entries());
                    tr.use_ema();
                    save_checkpoint(ema_path, tr.net.checkpoint_entries());
                    cnet = std::move(tr.net);
                    if (!cfg.use_ema) cnet->load(net_path);
                    say("fold " + std::to_string(fold) + ": trained eps net (final loss " +
                        format_double(tr.epoch_loss.back()) + ")");
                }
            });
            return *cnet;
        };

        if (upto == Stage::pretrain) {
            ensure_f();
            continue;
        }
        if (upto == Stage::train) {
            if (!(fs::exists(net_path) && fs::exists(ema_path))) {
                if (classification) ensure_cnet();
                else ensure_rnet();
            } else {
                say("fold " + std::to_string(fold) + ": training artifacts already present");
            }
            continue;
        }

        if (!have_samples) {
            ChainOptions opt;
            opt.S = cfg.draws;
            opt.seed = splitmix64_at(cfg.seed, 0x40000u + static_cast<std::uint64_t>(fold));
            opt.chunk_size = cfg.chunk_size;
            opt.workers = cfg.workers;
            if (log) {
                opt.progress = [log, fold, last = std::make_shared<std::size_t>(0)](
                                   std::size_t done, std::size_t total) {
                    const std::size_t pct = done * 10 / std::max<std::size_t>(1, total);
                    if (pct > *last || done == total) {
                        *last = pct;
                        (*log) << "fold " << fold << ": sampled " << done << "/" << total
                               << " chains" << std::endl;
                    }
                };
            }
            if (classification) {
                ClsEpsilonNet& net = ensure_cnet();
                MeanEstimator& fm = ensure_f();
                run_stage(Stage::sample, fold, log, [&] {
                    const ClassificationSamples cs =
                        sample_prototypes(fd.test_std.X, net, fm, sched, opt, cfg.tau);
                    const Tensor fprob = fm.predict(fd.test_std.X);
                    std::vector<int> fpred(fd.test.n(), 0);
                    for (std::size_t i = 0; i < fd.test.n(); ++i) {
                        int arg = 0;
                        for (std::size_t k = 1; k < out_dim; ++k)
                            if (fprob.at(i, k) > fprob.at(i, static_cast<std::size_t>(arg)))
                                arg = static_cast<int>(k);
                        fpred[i] = arg;
                    }
                    write_classification_artifacts(fdir, fd, cs, fpred);
                });
            } else {
                EpsilonNetReg& net = ensure_rnet();
                MeanEstimator& fm = ensure_f();
                run_stage(Stage::sample, fold, log, [&] {
                    SampleSet ss = sample_regression(fd.test_std.X, net, fm, sched, opt);
                    write_regression_artifacts(fdir, fd, ss, fd.y_std);
                });
            }
            say("fold " + std::to_string(fold) + ": wrote samples.csv / truths.csv");
        } else {
            say("fold " + std::to_string(fold) + ": sample artifacts already present");
        }
        if (upto == Stage::sample) continue;

        MetricReport rep;
        run_stage(Stage::evaluate, fold, log, [&] {
            rep = evaluate_artifacts(fdir, cfg, fold);
            write_report(fdir + "/metrics.ini", rep);
        });
        result.folds.push_back(rep);
        say("fold " + std::to_string(fold) + ": wrote metrics.ini");

        if (level >= static_cast<int>(Stage::plot)) {
            const bool applicable = !classification && fd.test.x_dim() == 1;
            if (!cfg.plot)
                say("fold " + std::to_string(fold) + ": plotting disabled in config");
            else if (applicable || upto == Stage::plot)
                // Unsupported tasks raise only when the plot stage was asked
                // for explicitly; a full run just skips them.
                run_stage(Stage::plot, fold, log, [&] { plot_artifacts(fdir, cfg); });
            else
                say("fold " + std::to_string(fold) + ": plot skipped (not a 1-D regression)");
        }
    }

    if (!result.folds.empty()) {
        result.summary = summarize_folds(result.folds);
        result.summary.note("config_hash", cfg.config_hash());
        result.summary.note("seed", std::to_string(cfg.seed));
        result.summary.note("folds", std::to_string(result.folds.size()));
        write_report(cfg.run_dir + "/summary.ini", result.summary);
        std::ostringstream table;
        table << "metric                        mean          std   (over "
              << result.folds.size() << " fold" << (result.folds.size() == 1 ? "" : "s")
              << ")\n";
        for (const auto& kv : result.summary.values) {
            const std::string& key = kv.first;
            if (key.size() > 5 && key.substr(key.size() - 5) == "_mean") {
                const std::string base = key.substr(0, key.size() - 5);
                char line[128];
                std::snprintf(line, sizeof(line), "%-24s %12.6g %12.6g\n", base.c_str(),
                              kv.second, result.summary.get(base + "_std"));
                table << line;
            }
        }
        auto out = open_artifact(cfg.run_dir + "/summary.txt");
        out << table.str();
        say(table.str());
    }
    return result;
}

} // namespace card
