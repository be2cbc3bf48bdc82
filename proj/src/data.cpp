#include "card/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "card/error.hpp"
#include "card/rng.hpp"

namespace card {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

ToyTask toy_task_from_name(const std::string& name) {
    if (name == "linear") return ToyTask::linear;
    if (name == "quadratic") return ToyTask::quadratic;
    if (name == "loglog_linear" || name == "log-log-linear") return ToyTask::loglog_linear;
    if (name == "loglog_cubic" || name == "log-log-cubic") return ToyTask::loglog_cubic;
    if (name == "sinusoidal") return ToyTask::sinusoidal;
    if (name == "inverse_sinusoidal" || name == "inverse-sinusoidal")
        return ToyTask::inverse_sinusoidal;
    if (name == "eight_gaussians" || name == "8gaussians" || name == "8-gaussians")
        return ToyTask::eight_gaussians;
    if (name == "full_circle" || name == "full-circle") return ToyTask::full_circle;
    throw ConfigError("unknown toy task '" + name + "'");
}

std::string toy_task_name(ToyTask task) {
    switch (task) {
        case ToyTask::linear: return "linear";
        case ToyTask::quadratic: return "quadratic";
        case ToyTask::loglog_linear: return "loglog_linear";
        case ToyTask::loglog_cubic: return "loglog_cubic";
        case ToyTask::sinusoidal: return "sinusoidal";
        case ToyTask::inverse_sinusoidal: return "inverse_sinusoidal";
        case ToyTask::eight_gaussians: return "eight_gaussians";
        case ToyTask::full_circle: return "full_circle";
    }
    throw ConfigError("unknown toy task enum value");
}

const std::vector<ToyTask>& all_toy_tasks() {
    static const std::vector<ToyTask> tasks = {
        ToyTask::linear,         ToyTask::quadratic,      ToyTask::loglog_linear,
        ToyTask::loglog_cubic,   ToyTask::sinusoidal,     ToyTask::inverse_sinusoidal,
        ToyTask::eight_gaussians, ToyTask::full_circle,
    };
    return tasks;
}

Dataset generate_toy(ToyTask task, std::size_t n, std::uint64_t seed, bool circle_literal) {
    if (n < 1) throw ConfigError("generate_toy: n must be >= 1");
    Rng rng(seed);
    Dataset ds;
    ds.task = TaskKind::regression;
    ds.X = Tensor({n, std::size_t{1}});
    ds.Y = Tensor({n, std::size_t{1}});

    // Per row the draw order is fixed (covariate first, then noise) so that
    // (task, n, seed) is bitwise reproducible.
    switch (task) {
        case ToyTask::linear:
            for (std::size_t i = 0; i < n; ++i) {
                const double x = rng.uniform(-5.0, 5.0);
                const double e = rng.normal(0.0, 2.0);
                ds.X.at(i, 0) = x;
                ds.Y.at(i, 0) = 2.0 * x + 3.0 + e;
            }
            break;
        case ToyTask::quadratic:
            for (std::size_t i = 0; i < n; ++i) {
                const double x = rng.uniform(-5.0, 5.0);
                const double e = rng.normal(0.0, 2.0);
                ds.X.at(i, 0) = x;
                ds.Y.at(i, 0) = 3.0 * x * x + 2.0 * x + 1.0 + e;
            }
            break;
        case ToyTask::loglog_linear:
            for (std::size_t i = 0; i < n; ++i) {
                const double x = rng.uniform(0.0, 10.0);
                const double e = rng.normal(0.0, 0.15);
                ds.X.at(i, 0) = x;
                ds.Y.at(i, 0) = std::exp(std::log(x) + e);
            }
            break;
        case ToyTask::loglog_cubic:
            for (std::size_t i = 0; i < n; ++i) {
                const double x = rng.uniform(0.0, 10.0);
                const double e = rng.normal(0.0, 0.15);
                ds.X.at(i, 0) = x;
                ds.Y.at(i, 0) = std::exp(3.0 * std::log(x) + e);
            }
            break;
        case ToyTask::sinusoidal:
            for (std::size_t i = 0; i < n; ++i) {
                const double x = rng.uniform(0.0, 1.0);
                const double e = rng.normal(0.0, 0.08);
                ds.X.at(i, 0) = x;
                ds.Y.at(i, 0) = x + 0.3 * std::sin(kTwoPi * x) + e;
            }
            break;
        case ToyTask::inverse_sinusoidal:
            for (std::size_t i = 0; i < n; ++i) {
                const double x = rng.uniform(0.0, 1.0);
                const double e = rng.normal(0.0, 0.08);
                ds.X.at(i, 0) = x + 0.3 * std::sin(kTwoPi * x) + e; // swapped roles
                ds.Y.at(i, 0) = x;
            }
            break;
        case ToyTask::eight_gaussians: {
            const double r = std::sqrt(2.0);
            static const double modes[8][2] = {{r, 0.0},  {-r, 0.0}, {0.0, r},  {0.0, -r},
                                               {1.0, 1.0}, {1.0, -1.0}, {-1.0, 1.0}, {-1.0, -1.0}};
            for (std::size_t i = 0; i < n; ++i) {
                const auto m = static_cast<std::size_t>(rng.uniform_int(0, 7));
                const double ex = rng.normal(0.0, 0.1);
                const double ey = rng.normal(0.0, 0.1);
                ds.X.at(i, 0) = modes[m][0] + ex; // horizontal = covariate
                ds.Y.at(i, 0) = modes[m][1] + ey; // vertical = response
            }
            break;
        }
        case ToyTask::full_circle:
            for (std::size_t i = 0; i < n; ++i) {
                const double u = rng.uniform(0.0, 1.0);
                const double e = rng.normal(0.0, 0.5);
                if (circle_literal) {
                    ds.X.at(i, 0) = u;
                    ds.Y.at(i, 0) = (10.0 + e) * (std::cos(kTwoPi * u) + std::sin(kTwoPi * u));
                } else {
                    ds.X.at(i, 0) = (10.0 + e) * std::cos(kTwoPi * u);
                    ds.Y.at(i, 0) = (10.0 + e) * std::sin(kTwoPi * u);
                }
            }
            break;
    }
    return ds;
}

std::optional<double> toy_conditional_mean(ToyTask task, double x) {
    switch (task) {
        case ToyTask::linear: return 2.0 * x + 3.0;
        case ToyTask::quadratic: return 3.0 * x * x + 2.0 * x + 1.0;
        // E[x * e^eps] = x * exp(sigma^2 / 2)
        case ToyTask::loglog_linear: return x * std::exp(0.5 * 0.15 * 0.15);
        case ToyTask::loglog_cubic: return x * x * x * std::exp(0.5 * 0.15 * 0.15);
        case ToyTask::sinusoidal: return x + 0.3 * std::sin(kTwoPi * x);
        default: return std::nullopt; // multimodal conditionals
    }
}

std::optional<double> toy_noise_sigma(ToyTask task) {
    switch (task) {
        case ToyTask::linear:
        case ToyTask::quadratic: return 2.0;
        case ToyTask::sinusoidal: return 0.08;
        default: return std::nullopt;
    }
}

Dataset generate_blobs(std::size_t n, int classes, double radius, double sigma,
                       std::uint64_t seed) {
    if (n < 1 || classes < 2) throw ConfigError("generate_blobs: need n >= 1 and classes >= 2");
    Rng rng(seed);
    Dataset ds;
    ds.task = TaskKind::classification;
    ds.class_count = classes;
    ds.X = Tensor({n, std::size_t{2}});
    ds.Y = Tensor({n, std::size_t{1}});
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % static_cast<std::size_t>(classes));
        const double ang = kTwoPi * c / classes;
        ds.X.at(i, 0) = radius * std::cos(ang) + rng.normal(0.0, sigma);
        ds.X.at(i, 1) = radius * std::sin(ang) + rng.normal(0.0, sigma);
        ds.Y.at(i, 0) = c;
    }
    return ds;
}

Dataset generate_moons(std::size_t n, double noise_sigma, std::uint64_t seed) {
    if (n < 2) throw ConfigError("generate_moons: need n >= 2");
    Rng rng(seed);
    Dataset ds;
    ds.task = TaskKind::classification;
    ds.class_count = 2;
    ds.X = Tensor({n, std::size_t{2}});
    ds.Y = Tensor({n, std::size_t{1}});
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % 2);
        const double t = rng.uniform(0.0, 3.14159265358979323846);
        double h, v;
        if (c == 0) {
            h = std::cos(t);
            v = std::sin(t);
        } else {
            h = 1.0 - std::cos(t);
            v = 0.5 - std::sin(t);
        }
        ds.X.at(i, 0) = h + rng.normal(0.0, noise_sigma);
        ds.X.at(i, 1) = v + rng.normal(0.0, noise_sigma);
        ds.Y.at(i, 0) = c;
    }
    return ds;
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream is(path);
    if (!is) throw DataError("csv: cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::vector<std::string> header;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && schema.has_header) {
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) header.push_back(cell);
            continue;
        }
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                const double v = std::stod(cell, &used);
                // allow trailing spaces only
                while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
                if (used != cell.size())
                    throw DataError("csv: non-numeric cell '" + cell + "' at line " +
                                    std::to_string(line_no) + " of " + path);
                row.push_back(v);
            } catch (const std::invalid_argument&) {
                throw DataError("csv: non-numeric cell '" + cell + "' at line " +
                                std::to_string(line_no) + " of " + path);
            } catch (const std::out_of_range&) {
                throw DataError("csv: out-of-range value '" + cell + "' at line " +
                                std::to_string(line_no) + " of " + path);
            }
        }
        if (row.empty()) continue;
        if (width == 0) {
            width = row.size();
        } else if (row.size() != width) {
            throw DataError("csv: malformed row at line " + std::to_string(line_no) + " of " +
                            path + " (" + std::to_string(row.size()) + " cells, expected " +
                            std::to_string(width) + ")");
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("csv: no data rows in " + path);
    const auto k = static_cast<std::size_t>(schema.response_cols);
    if (k < 1 || k >= width)
        throw DataError("csv: response_cols=" + std::to_string(schema.response_cols) +
                        " invalid for " + std::to_string(width) + "-column file " + path);
    Dataset ds;
    ds.task = schema.task;
    const std::size_t n = rows.size(), p = width - k;
    ds.X = Tensor({n, p});
    ds.Y = Tensor({n, k});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) ds.X.at(i, j) = rows[i][j];
        for (std::size_t j = 0; j < k; ++j) ds.Y.at(i, j) = rows[i][p + j];
    }
    if (!header.empty() && header.size() == width)
        ds.feature_names.assign(header.begin(), header.begin() + static_cast<std::ptrdiff_t>(p));
    if (schema.task == TaskKind::classification) {
        if (k != 1) throw DataError("csv: classification expects a single label column");
        int cmax = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = ds.Y.at(i, 0);
            if (v != std::floor(v) || v < 0)
                throw DataError("csv: label " + std::to_string(v) + " at data row " +
                                std::to_string(i + 1) + " is not a class index");
            cmax = std::max(cmax, static_cast<int>(v));
        }
        ds.class_count = cmax + 1;
    }
    return ds;
}

namespace {

std::uint32_t read_be32(std::ifstream& is, const std::string& path) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("idx: truncated file " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

} // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream im(images_path, std::ios::binary);
    if (!im) throw DataError("idx: cannot open " + images_path);
    if (read_be32(im, images_path) != 0x00000803u)
        throw DataError("idx: bad image magic in " + images_path);
    const std::size_t n = read_be32(im, images_path);
    const std::size_t rows = read_be32(im, images_path);
    const std::size_t cols = read_be32(im, images_path);
    std::vector<unsigned char> pix(n * rows * cols);
    im.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
    if (!im) throw DataError("idx: truncated pixel data in " + images_path);

    std::ifstream lb(labels_path, std::ios::binary);
    if (!lb) throw DataError("idx: cannot open " + labels_path);
    if (read_be32(lb, labels_path) != 0x00000801u)
        throw DataError("idx: bad label magic in " + labels_path);
    const std::size_t nl = read_be32(lb, labels_path);
    if (nl != n)
        throw DataError("idx: image/label count mismatch (" + std::to_string(n) + " vs " +
                        std::to_string(nl) + ")");
    std::vector<unsigned char> lab(n);
    lb.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
    if (!lb) throw DataError("idx: truncated label data in " + labels_path);

    Dataset ds;
    ds.task = TaskKind::classification;
    const std::size_t p = rows * cols;
    ds.X = Tensor({n, p});
    ds.Y = Tensor({n, std::size_t{1}});
    int cmax = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) ds.X.at(i, j) = pix[i * p + j] / 255.0;
        ds.Y.at(i, 0) = lab[i];
        cmax = std::max(cmax, static_cast<int>(lab[i]));
    }
    ds.class_count = cmax + 1;
    return ds;
}

Standardizer Standardizer::fit(const Tensor& columns) {
    const std::size_t n = columns.rows(), p = columns.cols();
    if (n == 0) throw DataError("standardize: empty input");
    Standardizer s;
    s.mean.resize(p);
    s.stdev.resize(p);
    for (std::size_t j = 0; j < p; ++j) {
        const auto col = columns.m().col(static_cast<Eigen::Index>(j));
        const double mu = col.mean();
        const double var = (col.array() - mu).square().sum() / static_cast<double>(n);
        s.mean[j] = mu;
        double sd = std::sqrt(var);
        if (!(sd > 0.0)) {
            sd = 1.0;
            s.floored_columns.push_back(j);
        }
        s.stdev[j] = sd;
    }
    return s;
}

void Standardizer::apply(Tensor& columns) const {
    if (columns.cols() != mean.size())
        throw DimensionError("standardize: column count mismatch");
    for (std::size_t j = 0; j < mean.size(); ++j)
        columns.m().col(static_cast<Eigen::Index>(j)) =
            (columns.m().col(static_cast<Eigen::Index>(j)).array() - mean[j]) / stdev[j];
}

void Standardizer::invert(Tensor& columns) const {
    if (columns.cols() != mean.size())
        throw DimensionError("destandardize: column count mismatch");
    for (std::size_t j = 0; j < mean.size(); ++j)
        columns.m().col(static_cast<Eigen::Index>(j)) =
            columns.m().col(static_cast<Eigen::Index>(j)).array() * stdev[j] + mean[j];
}

Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Dataset out;
    out.task = ds.task;
    out.class_count = ds.class_count;
    out.feature_names = ds.feature_names;
    out.X = Tensor({idx.size(), ds.x_dim()});
    out.Y = Tensor({idx.size(), ds.y_dim()});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= ds.n()) throw ContractError("take_rows: index out of range");
        out.X.m().row(static_cast<Eigen::Index>(i)) = ds.X.m().row(static_cast<Eigen::Index>(idx[i]));
        out.Y.m().row(static_cast<Eigen::Index>(i)) = ds.Y.m().row(static_cast<Eigen::Index>(idx[i]));
    }
    return out;
}

std::vector<FoldSplit> make_folds(const Dataset& ds, const SplitSpec& spec) {
    if (!(spec.ratio > 0.0 && spec.ratio < 1.0))
        throw ConfigError("make_folds: ratio must lie in (0,1)");
    if (spec.fold_count < 1) throw ConfigError("make_folds: fold_count must be >= 1");
    const std::size_t n = ds.n();
    const auto n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * spec.ratio));
    if (n_train == 0 || n_train == n)
        throw ConfigError("make_folds: degenerate split for n=" + std::to_string(n));
    std::vector<FoldSplit> folds;
    folds.reserve(static_cast<std::size_t>(spec.fold_count));
    for (int f = 0; f < spec.fold_count; ++f) {
        Rng rng(splitmix64_at(spec.seed, static_cast<std::uint64_t>(f)));
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        rng.shuffle(idx);
        std::vector<std::size_t> tr(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        std::vector<std::size_t> te(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
        folds.push_back({take_rows(ds, tr), take_rows(ds, te)});
    }
    return folds;
}

} // namespace card
