#include "card/classification.hpp"

#include <cmath>

#include "card/checkpoint.hpp"
#include "card/error.hpp"

namespace card {

Tensor one_hot_prototypes(const std::vector<int>& labels, int class_count) {
    if (class_count < 2) throw ContractError("one_hot_prototypes: class_count must be >= 2");
    Tensor out({labels.size(), static_cast<std::size_t>(class_count)});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= class_count)
            throw DataError("one_hot_prototypes: label " + std::to_string(labels[i]) +
                            " outside [0," + std::to_string(class_count) + ")");
        out.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return out;
}

ProbConversion prob_convert(const std::vector<double>& y0_hat, double tau) {
    if (!(tau > 0.0)) throw ContractError("prob_convert: tau must be positive");
    if (y0_hat.empty()) throw ContractError("prob_convert: empty input");
    const std::size_t C = y0_hat.size();
    std::vector<double> score(C); // -(y_k - 1)^2
    for (std::size_t k = 0; k < C; ++k) {
        const double d = y0_hat[k] - 1.0;
        score[k] = -d * d;
    }
    ProbConversion out;
    out.predicted = 0;
    double best = score[0];
    for (std::size_t k = 1; k < C; ++k)
        if (score[k] > best) { // strict: ties keep the smaller index
            best = score[k];
            out.predicted = static_cast<int>(k);
        }
    out.probs.resize(C);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < C; ++k) mx = std::max(mx, score[k] / tau);
    double sum = 0.0;
    for (std::size_t k = 0; k < C; ++k) {
        out.probs[k] = std::exp(score[k] / tau - mx);
        sum += out.probs[k];
    }
    for (auto& p : out.probs) p /= sum;
    return out;
}

ClsEpsilonNet::ClsEpsilonNet(std::size_t x_dim_, std::size_t class_count_, std::size_t width_,
                             Rng& rng)
    : x_dim(x_dim_), class_count(class_count_), width(width_) {
    g1x = Linear(x_dim, width, rng, "g1x");
    bn1x = BatchNorm1d(width, "bn1x");
    g2x = Linear(width, width, rng, "g2x");
    bn2x = BatchNorm1d(width, "bn2x");
    g3x = Linear(width, width, rng, "g3x");
    bn3x = BatchNorm1d(width, "bn3x");
    g1y = Linear(2 * class_count, width, rng, "g1y");
    bn1y = BatchNorm1d(width, "bn1y");
    g2a = Linear(width, width, rng, "g2a");
    bn2a = BatchNorm1d(width, "bn2a");
    g3a = Linear(width, width, rng, "g3a");
    bn3a = BatchNorm1d(width, "bn3a");
    g4 = Linear(width, class_count, rng, "g4");
    g1b = Linear(1, width, rng, "g1b");
    g2b = Linear(1, width, rng, "g2b");
    g3b = Linear(1, width, rng, "g3b");
}

Var ClsEpsilonNet::forward(const Var& x, const Var& y_t, const Var& f, const Var& t_norm,
                           bool training) {
    Var l1x = softplus(bn1x.forward(g1x.forward(x), training));
    Var l2x = softplus(bn2x.forward(g2x.forward(l1x), training));
    Var l3x = bn3x.forward(g3x.forward(l2x), training); // final encoder layer: BN only
    Var l1y = softplus(bn1y.forward(
        mul(g1y.forward(concat_cols({y_t, f})), g1b.forward(t_norm)), training));
    Var l1 = mul(l3x, l1y);
    Var l2 = softplus(bn2a.forward(mul(g2a.forward(l1), g2b.forward(t_norm)), training));
    Var l3 = softplus(bn3a.forward(mul(g3a.forward(l2), g3b.forward(t_norm)), training));
    return g4.forward(l3);
}

std::vector<ParamRef> ClsEpsilonNet::named_parameters() const {
    std::vector<ParamRef> out;
    for (const Linear* l : {&g1x, &g2x, &g3x, &g1y, &g2a, &g3a, &g4, &g1b, &g2b, &g3b}) {
        out.push_back({l->W.name(), l->W});
        out.push_back({l->b.name(), l->b});
    }
    for (const BatchNorm1d* bn : {&bn1x, &bn2x, &bn3x, &bn1y, &bn2a, &bn3a}) {
        out.push_back({bn->gamma.name(), bn->gamma});
        out.push_back({bn->beta.name(), bn->beta});
    }
    return out;
}

std::vector<Var> ClsEpsilonNet::parameters() const {
    std::vector<Var> out;
    for (const auto& p : named_parameters()) out.push_back(p.var);
    return out;
}

std::vector<BufferRef> ClsEpsilonNet::named_buffers() {
    std::vector<BufferRef> out;
    for (BatchNorm1d* bn : {&bn1x, &bn2x, &bn3x, &bn1y, &bn2a, &bn3a}) {
        out.push_back({bn->name + ".running_mean", &bn->running_mean});
        out.push_back({bn->name + ".running_var", &bn->running_var});
    }
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ClsEpsilonNet::checkpoint_entries() {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (const auto& p : named_parameters()) out.emplace_back(p.name, &p.var.node()->value);
    for (const auto& b : named_buffers()) out.emplace_back(b.name, b.tensor);
    return out;
}

void ClsEpsilonNet::load(const std::string& path) {
    auto loaded = load_checkpoint(path);
    std::vector<std::pair<std::string, Tensor*>> dests;
    for (auto& p : named_parameters()) dests.emplace_back(p.name, &p.var.node()->value);
    for (auto& b : named_buffers()) dests.emplace_back(b.name, b.tensor);
    restore_into(loaded, dests);
}

TrainedClassification train_classification(const Dataset& train, const MeanEstimator& f,
                                           const NoiseSchedule& s,
                                           const DiffusionTrainConfig& cfg) {
    if (!f.frozen()) throw ContractError("train_classification: mean estimator must be frozen");
    if (train.task != TaskKind::classification || train.class_count < 2)
        throw DataError("train_classification: classification dataset required");
    if (cfg.antithetic && cfg.batch_size < 2)
        throw ConfigError("train_classification: antithetic sampling requires batch_size >= 2");

    Rng init_rng(splitmix64_at(cfg.seed, 1));
    Rng draw_rng(splitmix64_at(cfg.seed, 2));

    TrainedClassification out;
    out.net = ClsEpsilonNet(train.x_dim(), static_cast<std::size_t>(train.class_count),
                            cfg.width, init_rng);
    auto params = out.net.parameters();
    Adam opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, /*amsgrad=*/false});
    out.ema = EmaShadow(params, cfg.ema_decay);

    std::vector<int> labels(train.n());
    for (std::size_t i = 0; i < train.n(); ++i) labels[i] = train.label(i);
    const Tensor Y0 = one_hot_prototypes(labels, train.class_count);
    const Tensor F = f.predict(train.X);
    if (F.cols() != static_cast<std::size_t>(train.class_count))
        throw DimensionError("train_classification: f must emit class probabilities");

    const std::size_t n = train.n();
    const std::size_t bs = std::max<std::size_t>(2, cfg.batch_size);
    const auto steps_per_epoch = static_cast<std::int64_t>((n + bs - 1) / bs);
    const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        draw_rng.shuffle(idx);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t lo = 0; lo < n; lo += bs) {
            std::size_t hi = std::min(n, lo + bs);
            if (hi - lo < 2) break; // BN needs >= 2 rows; drop a trailing singleton
            Tensor bx({hi - lo, train.x_dim()}), by({hi - lo, static_cast<std::size_t>(train.class_count)}),
                bf({hi - lo, static_cast<std::size_t>(train.class_count)});
            for (std::size_t i = lo; i < hi; ++i) {
                bx.m().row(static_cast<Eigen::Index>(i - lo)) = train.X.m().row(static_cast<Eigen::Index>(idx[i]));
                by.m().row(static_cast<Eigen::Index>(i - lo)) = Y0.m().row(static_cast<Eigen::Index>(idx[i]));
                bf.m().row(static_cast<Eigen::Index>(i - lo)) = F.m().row(static_cast<Eigen::Index>(idx[i]));
            }
            if (cfg.lr_schedule == LrSchedule::cosine)
                opt.set_lr(cosine_lr(cfg.lr, 0.0, opt.step_count(), total_steps));
            opt.zero_grad();
            Var loss = noise_loss_fn(
                bx, by, bf,
                [&out](const Var& x, const Var& y_t, const Var& ff, const Var& tn) {
                    return out.net.forward(x, y_t, ff, tn, /*training=*/true);
                },
                s, draw_rng, cfg.antithetic);
            const double lv = loss.value()[0];
            if (!std::isfinite(lv))
                throw TrainingError("train_classification: loss diverged at epoch " +
                                    std::to_string(epoch));
            backward(loss);
            opt.step();
            out.ema.update();
            loss_sum += lv;
            ++batches;
        }
        out.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
        if (cfg.on_epoch) cfg.on_epoch(epoch, out.epoch_loss.back());
    }
    return out;
}

namespace {

struct BnAffine {
    Eigen::RowVectorXd scale, shift;
    void from(const BatchNorm1d& bn) {
        Eigen::ArrayXd invstd = (bn.running_var.v().array() + bn.eps).sqrt().inverse();
        scale = (bn.gamma.value().v().array() * invstd).matrix().transpose();
        shift = (bn.beta.value().v().array() -
                 bn.running_mean.v().array() * bn.gamma.value().v().array() * invstd)
                    .matrix()
                    .transpose();
    }
    void apply(Mat& z) const {
        z.array().rowwise() *= scale.array();
        z.array().rowwise() += shift.array();
    }
};

void softplus_inplace(Mat& z) {
    z = z.array().max(0.0) + (1.0 + (-z.array().abs()).exp()).log();
}

// Inference evaluator for the classification net. The x-encoder is a pure function of the
// instance, so its output is precomputed once for all N instances.
struct ClsEval {
    const Tensor* F;
    Mat enc; // (N, width) encoder outputs
    std::size_t S = 1;
    double invT = 0.0;
    std::size_t C = 0, W = 0;
    Mat W1y, W2a, W3a, W4;
    Eigen::RowVectorXd b1y, b2a, b3a, b4;
    BnAffine a1y, a2a, a3a;
    Eigen::RowVectorXd e1w, e1b, e2w, e2b, e3w, e3b;
    Mat enc_chunk, yf, z, l1, l2, l3;
    std::size_t cached_lo = static_cast<std::size_t>(-1);
    Eigen::Index cached_rows = -1;

    void materialize(ClsEpsilonNet& net, const Tensor& X) {
        W1y = net.g1y.W.value().m();
        W2a = net.g2a.W.value().m();
        W3a = net.g3a.W.value().m();
        W4 = net.g4.W.value().m();
        b1y = net.g1y.b.value().v().transpose();
        b2a = net.g2a.b.value().v().transpose();
        b3a = net.g3a.b.value().v().transpose();
        b4 = net.g4.b.value().v().transpose();
        a1y.from(net.bn1y);
        a2a.from(net.bn2a);
        a3a.from(net.bn3a);
        e1w = net.g1b.W.value().v().transpose();
        e1b = net.g1b.b.value().v().transpose();
        e2w = net.g2b.W.value().v().transpose();
        e2b = net.g2b.b.value().v().transpose();
        e3w = net.g3b.W.value().v().transpose();
        e3b = net.g3b.b.value().v().transpose();

        BnAffine a1x, a2x, a3x;
        a1x.from(net.bn1x);
        a2x.from(net.bn2x);
        a3x.from(net.bn3x);
        enc.noalias() = X.m() * net.g1x.W.value().m().transpose();
        enc.rowwise() += net.g1x.b.value().v().transpose();
        a1x.apply(enc);
        softplus_inplace(enc);
        Mat tmp;
        tmp.noalias() = enc * net.g2x.W.value().m().transpose();
        tmp.rowwise() += net.g2x.b.value().v().transpose();
        a2x.apply(tmp);
        softplus_inplace(tmp);
        enc.noalias() = tmp * net.g3x.W.value().m().transpose();
        enc.rowwise() += net.g3x.b.value().v().transpose();
        a3x.apply(enc); // final encoder layer: BN only, no softplus
    }

    void operator()(std::size_t chain_lo, const Mat& Y, int t, Mat& eps_out) {
        const Eigen::Index rows = Y.rows();
        const auto cc = static_cast<Eigen::Index>(C);
        if (chain_lo != cached_lo || rows != cached_rows) {
            enc_chunk.resize(rows, static_cast<Eigen::Index>(W));
            yf.resize(rows, 2 * cc);
            for (Eigen::Index r = 0; r < rows; ++r) {
                const auto inst = static_cast<Eigen::Index>((chain_lo + static_cast<std::size_t>(r)) / S);
                enc_chunk.row(r) = enc.row(inst);
                yf.row(r).segment(cc, cc) = F->m().row(inst);
            }
            cached_lo = chain_lo;
            cached_rows = rows;
        }
        yf.middleCols(0, cc) = Y;

        const double tn = t * invT;
        z.noalias() = yf * W1y.transpose();
        z.rowwise() += b1y;
        z.array().rowwise() *= (e1w * tn + e1b).array();
        a1y.apply(z);
        softplus_inplace(z);
        l1 = z.cwiseProduct(enc_chunk);

        z.noalias() = l1 * W2a.transpose();
        z.rowwise() += b2a;
        z.array().rowwise() *= (e2w * tn + e2b).array();
        a2a.apply(z);
        softplus_inplace(z);
        l2 = z;

        z.noalias() = l2 * W3a.transpose();
        z.rowwise() += b3a;
        z.array().rowwise() *= (e3w * tn + e3b).array();
        a3a.apply(z);
        softplus_inplace(z);
        l3 = z;

        eps_out.noalias() = l3 * W4.transpose();
        eps_out.rowwise() += b4;
    }
};

} // namespace

Tensor ClassificationSamples::instance_probs(std::size_t i) const {
    Tensor out({S, C});
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t k = 0; k < C; ++k) out.at(s, k) = probs.at(i * S + s, k);
    return out;
}

ClassificationSamples sample_prototypes(const Tensor& X, ClsEpsilonNet& net,
                                        const MeanEstimator& f, const NoiseSchedule& s,
                                        const ChainOptions& opt, double tau) {
    if (X.cols() != net.x_dim)
        throw DimensionError("sample_prototypes: covariate dim " + std::to_string(X.cols()) +
                             " vs net " + std::to_string(net.x_dim));
    const Tensor F = f.predict(X);
    if (F.cols() != net.class_count)
        throw DimensionError("sample_prototypes: f must emit class probabilities");

    EpsFactory factory = [&X, &F, &net, S = opt.S, T = s.T()](unsigned) -> ChunkEpsFn {
        auto ev = std::make_shared<ClsEval>();
        ev->F = &F;
        ev->S = S;
        ev->invT = 1.0 / static_cast<double>(T);
        ev->C = net.class_count;
        ev->W = net.width;
        ev->materialize(net, X);
        return [ev](std::size_t chain_lo, const Mat& Y, int t, Mat& eps_out) {
            (*ev)(chain_lo, Y, t, eps_out);
        };
    };

    ClassificationSamples cs;
    cs.raw = sample_chains(s, F, opt.S, opt, factory);
    cs.N = cs.raw.N;
    cs.S = cs.raw.S;
    cs.C = cs.raw.C;
    cs.probs = Tensor({cs.N * cs.S, cs.C});
    cs.argmax.resize(cs.N * cs.S);
    std::vector<double> row(cs.C);
    for (std::size_t r = 0; r < cs.N * cs.S; ++r) {
        for (std::size_t k = 0; k < cs.C; ++k) row[k] = cs.raw.draws.at(r, k);
        ProbConversion pc = prob_convert(row, tau);
        for (std::size_t k = 0; k < cs.C; ++k) cs.probs.at(r, k) = pc.probs[k];
        cs.argmax[r] = pc.predicted;
    }
    return cs;
}

int predict_majority(const std::vector<int>& draw_predictions, int class_count) {
    if (draw_predictions.empty()) throw ContractError("predict_majority: no draws");
    std::vector<std::size_t> votes(static_cast<std::size_t>(class_count), 0);
    for (int p : draw_predictions) {
        if (p < 0 || p >= class_count)
            throw ContractError("predict_majority: prediction outside class range");
        ++votes[static_cast<std::size_t>(p)];
    }
    int best = 0;
    for (int k = 1; k < class_count; ++k)
        if (votes[static_cast<std::size_t>(k)] > votes[static_cast<std::size_t>(best)]) best = k;
    return best; // strict '>' keeps the smaller index on ties
}

std::vector<int> predict_majority(const ClassificationSamples& cs) {
    std::vector<int> out(cs.N);
    std::vector<int> draws(cs.S);
    for (std::size_t i = 0; i < cs.N; ++i) {
        for (std::size_t s = 0; s < cs.S; ++s) draws[s] = cs.pred_at(i, s);
        out[i] = predict_majority(draws, static_cast<int>(cs.C));
    }
    return out;
}

} // namespace card
