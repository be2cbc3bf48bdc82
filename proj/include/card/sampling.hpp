#pragma once

#include <cstdint>
#include <functional>

#include "card/schedule.hpp"
#include "card/tensor.hpp"

namespace card {

// S draws for each of N instances, stored chain-major: row i*S + s is draw s
// of instance i (C response columns).
struct SampleSet {
    Tensor draws;
    std::size_t N = 0, S = 0, C = 0;

    double at(std::size_t i, std::size_t s, std::size_t c = 0) const {
        return draws.at(i * S + s, c);
    }
    // (N x S) view for scalar responses.
    Tensor matrix_for_metric(std::size_t c = 0) const;
};

struct ChainOptions {
    std::size_t S = 1000;
    std::uint64_t seed = 0;
    std::size_t chunk_size = 1024;
    unsigned workers = 0;         // 0 -> hardware concurrency
    bool zero_noise = false;      // tests: suppress z and the y_T perturbation
    const Tensor* fixed_init = nullptr; // tests: start every chain at this (C) vector
    std::function<void(std::size_t, std::size_t)> progress; // (chains done, total)
};

// Noise-net evaluation for one chunk of chains: fill eps_out (rows x C) with
// eps_theta(x, Y, f, t) for chains [chain_lo, chain_lo + rows).
using ChunkEpsFn =
    std::function<void(std::size_t chain_lo, const Mat& Y, int t, Mat& eps_out)>;
// One evaluator per worker (owns its scratch space).
using EpsFactory = std::function<ChunkEpsFn(unsigned worker_id)>;

// Ancestral reverse chains: y_T ~ N(f, I); for t = T..1
//   y0_hat = (y_t - (1 - sqrt(ab_t)) f - sqrt(1-ab_t) eps_theta) / sqrt(ab_t)
//   y_{t-1} = gamma0 y0_hat + gamma1 y_t + gamma2 f + z sqrt(beta_tilde_t),  z = 0 at t = 1.
//
// Chains are (instance, draw) pairs vectorized in chunks; chain k uses an RNG
// seeded splitmix64(opt.seed, k) drawing y_T first and then one z row per step
// t = T..2, so results are independent of chunking and worker count.
// NaN in any chain raises SamplingError with the offending timestep.
SampleSet sample_chains(const NoiseSchedule& s, const Tensor& F /* N x C */, std::size_t S,
                        const ChainOptions& opt, const EpsFactory& factory);

} // namespace card
