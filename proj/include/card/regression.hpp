#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "card/data.hpp"
#include "card/layers.hpp"
#include "card/mean_estimator.hpp"
#include "card/optimizer.hpp"
#include "card/sampling.hpp"
#include "card/schedule.hpp"

namespace card {

// Conditional noise-prediction network for regression:
//   l_k = softplus(g_ka(prev) (.) g_kb(t)),  k = 1..3 at `width`, head g4 -> C.
// Input of block 1 is x (+) y_t (+) f; the timestep enters each block through a
// learned linear embedding of the normalized scalar t/T.
struct EpsilonNetReg {
    Linear g1a, g2a, g3a, g4;
    Linear g1b, g2b, g3b; // 1 -> width timestep embeddings
    std::size_t x_dim = 0, y_dim = 0, width = 0;

    EpsilonNetReg() = default;
    EpsilonNetReg(std::size_t x_dim, std::size_t y_dim, std::size_t width, Rng& rng);

    // Training-path forward; t_norm is a (B x 1) column of t/T values.
    Var forward(const Var& x, const Var& y_t, const Var& f, const Var& t_norm) const;

    std::vector<ParamRef> named_parameters() const;
    std::vector<Var> parameters() const;
    std::vector<std::pair<std::string, const Tensor*>> checkpoint_entries() const;
    void load(const std::string& path);
    std::uint64_t checksum() const;
};

// Antithetic timestep batch: first ceil(B/2) entries uniform on {1..T}, each
// remaining entry T+1-t of its partner (pair i <-> i + ceil(B/2)).
std::vector<int> antithetic_timesteps(std::size_t batch_size, int T, Rng& rng);

// Noise-matching objective: draws timesteps (antithetic or
// uniform) and eps ~ N(0,I), forms y_t = sqrt(ab) y0 + (1-sqrt(ab)) f +
// sqrt(1-ab) eps, and returns mean_i ||eps_i - eps_theta(...)||^2.
// RNG draw order: timesteps first, then eps elements instance-major
// (row by row, response column fastest) — tests rely on replaying this.
using EpsForward =
    std::function<Var(const Var& x, const Var& y_t, const Var& f, const Var& t_norm)>;

Var noise_loss_fn(const Tensor& X, const Tensor& Y0, const Tensor& F, const EpsForward& eps,
                  const NoiseSchedule& s, Rng& rng, bool antithetic);
Var noise_loss(const Tensor& X, const Tensor& Y0, const Tensor& F, const EpsilonNetReg& net,
               const NoiseSchedule& s, Rng& rng, bool antithetic);

enum class LrSchedule { constant, cosine };

struct DiffusionTrainConfig {
    int epochs = 5000;
    std::size_t batch_size = 256;
    double lr = 1e-3;
    double ema_decay = 0.9999;
    bool antithetic = true;
    bool amsgrad = true; // regression default; classification uses plain Adam
    LrSchedule lr_schedule = LrSchedule::constant;
    std::size_t width = 128;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;           // epochs; 0 = only on request
    std::string checkpoint_dir;         // where periodic checkpoints go
    std::function<void(int, double)> on_epoch; // (epoch, mean loss)
};

struct TrainedRegression {
    EpsilonNetReg net;
    EmaShadow ema;
    std::vector<double> epoch_loss;
    std::string last_checkpoint; // most recent periodic checkpoint, if any

    // Overwrite live weights with the EMA shadow (inference configuration).
    void use_ema() { ema.write_to_params(); }
};

// Noise-matching training over the full set. `f` must be frozen. Deterministic
// for fixed (seed, config, data).
TrainedRegression train_regression(const Dataset& train, const MeanEstimator& f,
                                   const NoiseSchedule& s, const DiffusionTrainConfig& cfg);

// Reverse-chain sampling for a block of test covariates; S draws per row of X.
// Uses the net's current (typically EMA) weights via the fast inference path.
SampleSet sample_regression(const Tensor& X, const EpsilonNetReg& net, const MeanEstimator& f,
                            const NoiseSchedule& s, const ChainOptions& opt);

// Fast-path evaluator factory used by sample_regression; exposed for the
// training-vs-inference equality test.
EpsFactory reg_eps_factory(const Tensor& X, const Tensor& F, const EpsilonNetReg& net,
                           std::size_t S, int T);

} // namespace card
