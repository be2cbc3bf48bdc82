#include "card/regression.hpp"

#include <cmath>
#include <filesystem>

#include "card/checkpoint.hpp"
#include "card/error.hpp"

namespace card {

EpsilonNetReg::EpsilonNetReg(std::size_t x_dim_, std::size_t y_dim_, std::size_t width_, Rng& rng)
    : x_dim(x_dim_), y_dim(y_dim_), width(width_) {
    const std::size_t in = x_dim + 2 * y_dim; // x (+) y_t (+) f
    g1a = Linear(in, width, rng, "g1a");
    g1b = Linear(1, width, rng, "g1b");
    g2a = Linear(width, width, rng, "g2a");
    g2b = Linear(1, width, rng, "g2b");
    g3a = Linear(width, width, rng, "g3a");
    g3b = Linear(1, width, rng, "g3b");
    g4 = Linear(width, y_dim, rng, "g4");
}

Var EpsilonNetReg::forward(const Var& x, const Var& y_t, const Var& f, const Var& t_norm) const {
    Var in = concat_cols({x, y_t, f});
    Var l1 = softplus(mul(g1a.forward(in), g1b.forward(t_norm)));
    Var l2 = softplus(mul(g2a.forward(l1), g2b.forward(t_norm)));
    Var l3 = softplus(mul(g3a.forward(l2), g3b.forward(t_norm)));
    return g4.forward(l3);
}

std::vector<ParamRef> EpsilonNetReg::named_parameters() const {
    std::vector<ParamRef> out;
    for (const Linear* l : {&g1a, &g1b, &g2a, &g2b, &g3a, &g3b, &g4}) {
        out.push_back({l->W.name(), l->W});
        out.push_back({l->b.name(), l->b});
    }
    return out;
}

std::vector<Var> EpsilonNetReg::parameters() const {
    std::vector<Var> out;
    for (const auto& p : named_parameters()) out.push_back(p.var);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> EpsilonNetReg::checkpoint_entries() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (const auto& p : named_parameters()) out.emplace_back(p.name, &p.var.node()->value);
    return out;
}

void EpsilonNetReg::load(const std::string& path) {
    auto loaded = load_checkpoint(path);
    std::vector<std::pair<std::string, Tensor*>> dests;
    for (auto& p : named_parameters()) dests.emplace_back(p.name, &p.var.node()->value);
    restore_into(loaded, dests);
}

std::uint64_t EpsilonNetReg::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : named_parameters()) {
        const Tensor& t = p.var.value();
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
        for (std::size_t i = 0; i < t.size() * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    }
    return h;
}

std::vector<int> antithetic_timesteps(std::size_t batch_size, int T, Rng& rng) {
    if (batch_size < 1) throw ContractError("antithetic_timesteps: batch_size must be >= 1");
    std::vector<int> out(batch_size);
    const std::size_t half = (batch_size + 1) / 2;
    for (std::size_t i = 0; i < half; ++i)
        out[i] = static_cast<int>(rng.uniform_int(1, T));
    for (std::size_t i = half; i < batch_size; ++i) out[i] = T + 1 - out[i - half];
    return out;
}

Var noise_loss_fn(const Tensor& X, const Tensor& Y0, const Tensor& F, const EpsForward& eps,
                  const NoiseSchedule& s, Rng& rng, bool antithetic) {
    const std::size_t B = X.rows(), C = Y0.cols();
    if (B == 0) throw ContractError("noise_loss: empty batch");
    if (Y0.rows() != B || F.rows() != B || F.cols() != C)
        throw DimensionError("noise_loss: inconsistent batch shapes");

    std::vector<int> ts;
    if (antithetic) {
        ts = antithetic_timesteps(B, s.T(), rng);
    } else {
        ts.resize(B);
        for (auto& t : ts) t = static_cast<int>(rng.uniform_int(1, s.T()));
    }

    Tensor eps_target({B, C});
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t c = 0; c < C; ++c) eps_target.at(i, c) = rng.normal();

    Tensor y_t({B, C});
    Tensor t_norm({B, std::size_t{1}});
    const double invT = 1.0 / static_cast<double>(s.T());
    for (std::size_t i = 0; i < B; ++i) {
        const int t = ts[i];
        const double sab = s.sqrt_alpha_bar(t);
        const double s1m = s.sqrt_one_minus_alpha_bar(t);
        for (std::size_t c = 0; c < C; ++c)
            y_t.at(i, c) = sab * Y0.at(i, c) + (1.0 - sab) * F.at(i, c) + s1m * eps_target.at(i, c);
        t_norm.at(i, 0) = t * invT;
    }
    if (!y_t.all_finite()) throw TrainingError("noise_loss: non-finite y_t");

    Var pred = eps(Var(X, false), Var(y_t, false), Var(F, false), Var(t_norm, false));
    return mse_rowmean(pred, Var(eps_target, false));
}

Var noise_loss(const Tensor& X, const Tensor& Y0, const Tensor& F, const EpsilonNetReg& net,
               const NoiseSchedule& s, Rng& rng, bool antithetic) {
    return noise_loss_fn(
        X, Y0, F,
        [&net](const Var& x, const Var& y_t, const Var& f, const Var& t_norm) {
            return net.forward(x, y_t, f, t_norm);
        },
        s, rng, antithetic);
}

namespace {

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx, std::size_t lo,
                   std::size_t hi) {
    Tensor out({hi - lo, t.cols()});
    for (std::size_t i = lo; i < hi; ++i)
        out.m().row(static_cast<Eigen::Index>(i - lo)) =
            t.m().row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

} // namespace

TrainedRegression train_regression(const Dataset& train, const MeanEstimator& f,
                                   const NoiseSchedule& s, const DiffusionTrainConfig& cfg) {
    if (!f.frozen()) throw ContractError("train_regression: mean estimator must be frozen");
    if (cfg.epochs < 1) throw ConfigError("train_regression: epochs must be >= 1");
    if (cfg.antithetic && cfg.batch_size < 2)
        throw ConfigError("train_regression: antithetic sampling requires batch_size >= 2");
    if (train.n() == 0) throw DataError("train_regression: empty training set");

    Rng init_rng(splitmix64_at(cfg.seed, 1));
    Rng draw_rng(splitmix64_at(cfg.seed, 2));

    TrainedRegression out;
    out.net = EpsilonNetReg(train.x_dim(), train.y_dim(), cfg.width, init_rng);
    auto params = out.net.parameters();
    Adam opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.amsgrad});
    out.ema = EmaShadow(params, cfg.ema_decay);

    const Tensor F = f.predict(train.X); // frozen -> once
    const std::size_t n = train.n();
    const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
    const auto steps_per_epoch = static_cast<std::int64_t>((n + bs - 1) / bs);
    const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        draw_rng.shuffle(idx);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t lo = 0; lo < n; lo += bs) {
            const std::size_t hi = std::min(n, lo + bs);
            Tensor bx = gather_rows(train.X, idx, lo, hi);
            Tensor by = gather_rows(train.Y, idx, lo, hi);
            Tensor bf = gather_rows(F, idx, lo, hi);
            if (cfg.lr_schedule == LrSchedule::cosine)
                opt.set_lr(cosine_lr(cfg.lr, 0.0, opt.step_count(), total_steps));
            opt.zero_grad();
            Var loss = noise_loss(bx, by, bf, out.net, s, draw_rng, cfg.antithetic);
            const double lv = loss.value()[0];
            if (!std::isfinite(lv))
                throw TrainingError("train_regression: loss diverged at epoch " +
                                    std::to_string(epoch) + "; last good checkpoint: " +
                                    (out.last_checkpoint.empty() ? "none" : out.last_checkpoint));
            backward(loss);
            opt.step();
            out.ema.update();
            loss_sum += lv;
            ++batches;
        }
        out.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
        if (cfg.on_epoch) cfg.on_epoch(epoch, out.epoch_loss.back());
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
            epoch % cfg.checkpoint_every == 0) {
            const std::string path =
                (std::filesystem::path(cfg.checkpoint_dir) /
                 ("epsnet_epoch" + std::to_string(epoch) + ".ckpt")).string();
            save_checkpoint(path, out.net.checkpoint_entries());
            out.last_checkpoint = path;
        }
    }
    return out;
}

namespace {

// Preallocated fast-path evaluator for the regression noise net. Weight matrices
// are copied out of the graph once; per chunk only the y_t columns change.
struct RegEval {
    const Tensor* X;
    const Tensor* F;
    std::size_t S = 1;
    double invT = 0.0;
    std::size_t P = 0, C = 0, W = 0;
    Mat W1, W2, W3, W4; // (out, in) copies
    Eigen::RowVectorXd b1, b2, b3, b4;
    Eigen::RowVectorXd e1w, e1b, e2w, e2b, e3w, e3b; // width embeddings
    Mat in, z, h1, h2, h3;
    std::size_t cached_lo = static_cast<std::size_t>(-1);
    Eigen::Index cached_rows = -1;

    void materialize(const EpsilonNetReg& net) {
        W1 = net.g1a.W.value().m();
        W2 = net.g2a.W.value().m();
        W3 = net.g3a.W.value().m();
        W4 = net.g4.W.value().m();
        b1 = net.g1a.b.value().v().transpose();
        b2 = net.g2a.b.value().v().transpose();
        b3 = net.g3a.b.value().v().transpose();
        b4 = net.g4.b.value().v().transpose();
        e1w = net.g1b.W.value().v().transpose();
        e1b = net.g1b.b.value().v().transpose();
        e2w = net.g2b.W.value().v().transpose();
        e2b = net.g2b.b.value().v().transpose();
        e3w = net.g3b.W.value().v().transpose();
        e3b = net.g3b.b.value().v().transpose();
    }

    void operator()(std::size_t chain_lo, const Mat& Y, int t, Mat& eps_out) {
        const Eigen::Index rows = Y.rows();
        if (chain_lo != cached_lo || rows != cached_rows) {
            in.resize(rows, static_cast<Eigen::Index>(P + 2 * C));
            for (Eigen::Index r = 0; r < rows; ++r) {
                const auto inst = static_cast<Eigen::Index>((chain_lo + static_cast<std::size_t>(r)) / S);
                in.row(r).segment(0, static_cast<Eigen::Index>(P)) = X->m().row(inst);
                in.row(r).segment(static_cast<Eigen::Index>(P + C), static_cast<Eigen::Index>(C)) =
                    F->m().row(inst);
            }
            cached_lo = chain_lo;
            cached_rows = rows;
        }
        in.middleCols(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(C)) = Y;

        const double tn = t * invT;
        auto block = [&](const Mat& src, const Mat& Wk, const Eigen::RowVectorXd& bk,
                         const Eigen::RowVectorXd& ew, const Eigen::RowVectorXd& eb, Mat& dst) {
            z.noalias() = src * Wk.transpose();
            z.rowwise() += bk;
            z.array().rowwise() *= (ew * tn + eb).array();
            dst = z.array().max(0.0) + (1.0 + (-z.array().abs()).exp()).log();
        };
        block(in, W1, b1, e1w, e1b, h1);
        block(h1, W2, b2, e2w, e2b, h2);
        block(h2, W3, b3, e3w, e3b, h3);
        eps_out.noalias() = h3 * W4.transpose();
        eps_out.rowwise() += b4;
    }
};

} // namespace

EpsFactory reg_eps_factory(const Tensor& X, const Tensor& F, const EpsilonNetReg& net,
                           std::size_t S, int T) {
    return [&X, &F, &net, S, T](unsigned) -> ChunkEpsFn {
        auto ev = std::make_shared<RegEval>();
        ev->X = &X;
        ev->F = &F;
        ev->S = S;
        ev->invT = 1.0 / static_cast<double>(T);
        ev->P = net.x_dim;
        ev->C = net.y_dim;
        ev->W = net.width;
        ev->materialize(net);
        return [ev](std::size_t chain_lo, const Mat& Y, int t, Mat& eps_out) {
            (*ev)(chain_lo, Y, t, eps_out);
        };
    };
}

SampleSet sample_regression(const Tensor& X, const EpsilonNetReg& net, const MeanEstimator& f,
                            const NoiseSchedule& s, const ChainOptions& opt) {
    if (X.cols() != net.x_dim)
        throw DimensionError("sample_regression: covariate dim " + std::to_string(X.cols()) +
                             " vs net " + std::to_string(net.x_dim));
    const Tensor F = f.predict(X);
    return sample_chains(s, F, opt.S, opt, reg_eps_factory(X, F, net, opt.S, s.T()));
}

} // namespace card
