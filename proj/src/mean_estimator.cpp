#include "card/mean_estimator.hpp"

#include <cmath>

#include "card/checkpoint.hpp"
#include "card/error.hpp"
#include "card/optimizer.hpp"
#include "card/rng.hpp"

namespace card {

namespace {

Sequential build_mlp(std::size_t in, std::size_t out, const MeanEstimatorConfig& cfg, Rng& rng) {
    Sequential net;
    std::size_t prev = in;
    int idx = 1;
    for (std::size_t h : cfg.hidden) {
        net.add(Linear(prev, h, rng, "fc" + std::to_string(idx)));
        net.add_leaky_relu(cfg.leaky_slope);
        prev = h;
        ++idx;
    }
    net.add(Linear(prev, out, rng, "fc" + std::to_string(idx)));
    return net;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    return idx;
}

Tensor rows_of(const Tensor& t, const std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi) {
    Tensor out({hi - lo, t.cols()});
    for (std::size_t i = lo; i < hi; ++i)
        out.m().row(static_cast<Eigen::Index>(i - lo)) =
            t.m().row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

std::vector<int> labels_of(const Dataset& ds) {
    std::vector<int> out(ds.n());
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const double v = ds.Y.at(i, 0);
        if (v != std::floor(v) || v < 0.0 || v >= static_cast<double>(ds.class_count))
            throw DataError("pretrain_classifier: label " + std::to_string(v) + " at row " +
                            std::to_string(i) + " outside [0," +
                            std::to_string(ds.class_count) + ")");
        out[i] = static_cast<int>(v);
    }
    return out;
}

} // namespace

MeanEstimator MeanEstimator::train_impl(const Dataset& train, const Dataset& valid,
                                        const MeanEstimatorConfig& cfg, TaskKind task) {
    if (train.n() == 0) throw DataError("pretrain: empty training set");
    if (valid.n() == 0) throw DataError("pretrain: empty validation set");
    if (cfg.epochs < 1) throw ConfigError("pretrain: epochs must be >= 1");

    MeanEstimator est;
    est.task_ = task;
    est.x_dim_ = train.x_dim();
    est.out_dim_ = task == TaskKind::classification
                       ? static_cast<std::size_t>(train.class_count)
                       : train.y_dim();
    if (task == TaskKind::classification && train.class_count < 2)
        throw DataError("pretrain_classifier: need class_count >= 2");

    Rng rng(cfg.seed);
    est.net_ = build_mlp(est.x_dim_, est.out_dim_, cfg, rng);
    auto params = est.net_.parameters();
    Adam opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, false});

    std::vector<int> train_labels, valid_labels;
    if (task == TaskKind::classification) {
        train_labels = labels_of(train);
        valid_labels = labels_of(valid);
    }

    const Var vx(valid.X, false);
    const Var vy(valid.Y, false);

    auto valid_loss = [&]() -> double {
        Var out = est.net_.forward(vx, /*training=*/false);
        if (task == TaskKind::classification)
            return softmax_cross_entropy(out, valid_labels).value()[0];
        Var diff = sub(out, vy);
        return mean(mul(diff, diff)).value()[0];
    };

    double best = std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_params;
    int stale = 0;
    int epoch = 0;
    const std::size_t n = train.n();
    const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);

    for (epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto idx = shuffled_indices(n, rng);
        for (std::size_t lo = 0; lo < n; lo += bs) {
            const std::size_t hi = std::min(n, lo + bs);
            Var bx(rows_of(train.X, idx, lo, hi), false);
            opt.zero_grad();
            Var out = est.net_.forward(bx, /*training=*/true);
            Var loss;
            if (task == TaskKind::classification) {
                std::vector<int> bl(hi - lo);
                for (std::size_t i = lo; i < hi; ++i) bl[i - lo] = train_labels[idx[i]];
                loss = softmax_cross_entropy(out, bl);
            } else {
                Var by(rows_of(train.Y, idx, lo, hi), false);
                Var diff = sub(out, by);
                loss = mean(mul(diff, diff));
            }
            if (!std::isfinite(loss.value()[0]))
                throw TrainingError("pretrain: loss diverged (NaN/inf) at epoch " +
                                    std::to_string(epoch));
            backward(loss);
            opt.step();
        }
        const double vloss = valid_loss();
        if (!std::isfinite(vloss))
            throw TrainingError("pretrain: validation loss diverged at epoch " +
                                std::to_string(epoch));
        if (vloss < best) {
            best = vloss;
            best_params.clear();
            for (const auto& p : params) best_params.push_back(p.value());
            stale = 0;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }
    est.stopped_epoch_ = std::min(epoch, cfg.epochs);
    est.best_valid_loss_ = best;
    for (std::size_t i = 0; i < params.size(); ++i) params[i].value() = best_params[i];
    est.frozen_ = true;
    return est;
}

MeanEstimator MeanEstimator::pretrain_regressor(const Dataset& train, const Dataset& valid,
                                                const MeanEstimatorConfig& cfg) {
    return train_impl(train, valid, cfg, TaskKind::regression);
}

MeanEstimator MeanEstimator::pretrain_classifier(const Dataset& train, const Dataset& valid,
                                                 const MeanEstimatorConfig& cfg) {
    return train_impl(train, valid, cfg, TaskKind::classification);
}

namespace {

std::pair<Dataset, Dataset> carve_validation(const Dataset& ds, double fraction,
                                             std::uint64_t seed) {
    const std::size_t n = ds.n();
    auto n_valid = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
    n_valid = std::max<std::size_t>(1, std::min(n_valid, n - 1));
    Rng rng(splitmix64_at(seed, 0xf0f0f0f0ULL));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    std::vector<std::size_t> tr(idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(n_valid));
    std::vector<std::size_t> va(idx.end() - static_cast<std::ptrdiff_t>(n_valid), idx.end());
    return {take_rows(ds, tr), take_rows(ds, va)};
}

} // namespace

MeanEstimator MeanEstimator::pretrain_regressor(const Dataset& train,
                                                const MeanEstimatorConfig& cfg) {
    auto [tr, va] = carve_validation(train, cfg.valid_fraction, cfg.seed);
    return pretrain_regressor(tr, va, cfg);
}

MeanEstimator MeanEstimator::pretrain_classifier(const Dataset& train,
                                                 const MeanEstimatorConfig& cfg) {
    auto [tr, va] = carve_validation(train, cfg.valid_fraction, cfg.seed);
    return pretrain_classifier(tr, va, cfg);
}

MeanEstimator MeanEstimator::null_estimator(std::size_t x_dim, std::size_t out_dim) {
    MeanEstimator est;
    est.null_ = true;
    est.frozen_ = true;
    est.x_dim_ = x_dim;
    est.out_dim_ = out_dim;
    return est;
}

MeanEstimator MeanEstimator::make_untrained(TaskKind task, std::size_t x_dim, std::size_t out_dim,
                                            const MeanEstimatorConfig& cfg) {
    MeanEstimator est;
    est.task_ = task;
    est.x_dim_ = x_dim;
    est.out_dim_ = out_dim;
    Rng rng(cfg.seed);
    est.net_ = build_mlp(x_dim, out_dim, cfg, rng);
    return est;
}

Tensor MeanEstimator::predict(const Tensor& x) const {
    if (!frozen_)
        throw ContractError("mean_estimator: predict() on an unfrozen estimator");
    if (x.cols() != x_dim_)
        throw DimensionError("mean_estimator: input has " + std::to_string(x.cols()) +
                             " features, expected " + std::to_string(x_dim_));
    if (null_) return Tensor({x.rows(), out_dim_});
    Var out = net_.forward(Var(x, false), /*training=*/false);
    if (task_ == TaskKind::classification) return softmax_rows(out.value());
    return out.value();
}

std::uint64_t MeanEstimator::checksum() const {
    std::uint64_t h = 1469598103934665603ULL; // FNV-1a offset basis
    auto mix = [&h](const Tensor& t) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
        for (std::size_t i = 0; i < t.size() * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& p : net_.named_parameters()) mix(p.var.value());
    return h;
}

std::vector<std::pair<std::string, const Tensor*>> MeanEstimator::checkpoint_entries() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (const auto& p : net_.named_parameters())
        out.emplace_back(p.name, &p.var.node()->value);
    return out;
}

void MeanEstimator::load_params(const std::string& path) {
    auto loaded = load_checkpoint(path);
    std::vector<std::pair<std::string, Tensor*>> dests;
    for (auto& p : net_.named_parameters())
        dests.emplace_back(p.name, &p.var.node()->value);
    restore_into(loaded, dests);
    frozen_ = true;
}

} // namespace card
