#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "card/tensor.hpp"

namespace card {

enum class TaskKind { regression, classification };

struct Dataset {
    Tensor X;                 // (n, P)
    Tensor Y;                 // (n, C) responses; (n, 1) 0-based class ids
    TaskKind task = TaskKind::regression;
    int class_count = 0;      // classification only
    std::vector<std::string> feature_names; // optional (CSV header)

    std::size_t n() const { return X.rows(); }
    std::size_t x_dim() const { return X.cols(); }
    std::size_t y_dim() const { return Y.cols(); }
    int label(std::size_t i) const { return static_cast<int>(Y.at(i, 0)); }
};

// ----- synthetic task generators -----

enum class ToyTask {
    linear,
    quadratic,
    loglog_linear,
    loglog_cubic,
    sinusoidal,
    inverse_sinusoidal,
    eight_gaussians,
    full_circle,
};

ToyTask toy_task_from_name(const std::string& name); // config error on unknown
std::string toy_task_name(ToyTask task);
const std::vector<ToyTask>& all_toy_tasks();

// Deterministic for (task, n, seed). `circle_literal` switches the full-circle
// task to the scalar formula y = (10+eps)(cos 2pi x + sin 2pi x) as printed.
Dataset generate_toy(ToyTask task, std::size_t n, std::uint64_t seed,
                     bool circle_literal = false);

// Analytic E[y|x] where defined (unimodal tasks); nullopt for multimodal ones.
std::optional<double> toy_conditional_mean(ToyTask task, double x);
// True residual-σ around E[y|x] for tasks with x-independent noise (plot band).
std::optional<double> toy_noise_sigma(ToyTask task);

// ----- synthetic classification -----

// C Gaussian blobs on a circle of given radius, equal class sizes (remainder
// spread over the first classes), per-coordinate noise sigma.
Dataset generate_blobs(std::size_t n, int classes, double radius, double sigma,
                       std::uint64_t seed);
// Interleaved half-moons, 2 classes.
Dataset generate_moons(std::size_t n, double noise_sigma, std::uint64_t seed);

// ----- tabular I/O -----

struct CsvSchema {
    bool has_header = false;
    int response_cols = 1; // last k columns are responses
    TaskKind task = TaskKind::regression;
};

Dataset load_csv(const std::string& path, const CsvSchema& schema);

// IDX (MNIST-family) reader: images (magic 0x00000803) + labels (0x00000801).
// Pixel values scaled to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// ----- standardization -----

// Per-column affine transform fitted on a training fold (population std;
// constant columns floored to std 1, reported via floored_columns).
struct Standardizer {
    std::vector<double> mean, stdev;
    std::vector<std::size_t> floored_columns;

    static Standardizer fit(const Tensor& columns);
    void apply(Tensor& columns) const;
    void invert(Tensor& columns) const;
    double apply_one(std::size_t col, double v) const { return (v - mean[col]) / stdev[col]; }
    double invert_one(std::size_t col, double v) const { return v * stdev[col] + mean[col]; }
};

// ----- splits -----

struct SplitSpec {
    double ratio = 0.8; // train fraction
    int fold_count = 1;
    std::uint64_t seed = 0;
};

struct FoldSplit {
    Dataset train, test;
};

// Each fold: independent seeded shuffle (stream splitmix64(seed, fold)), then
// train = floor(n * ratio) rows, test = remainder.
std::vector<FoldSplit> make_folds(const Dataset& ds, const SplitSpec& spec);

// Rows of `ds` at `idx`, preserving metadata.
Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& idx);

} // namespace card
