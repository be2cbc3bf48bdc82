#include "card/sampling.hpp"

#include <atomic>
#include <mutex>
#include <thread>
#include <vector>

#include "card/error.hpp"
#include "card/rng.hpp"

namespace card {

Tensor SampleSet::matrix_for_metric(std::size_t c) const {
    Tensor out({N, S});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t s = 0; s < S; ++s) out.at(i, s) = at(i, s, c);
    return out;
}

namespace {

struct ChunkJob {
    std::size_t lo, hi; // chain range
};

} // namespace

SampleSet sample_chains(const NoiseSchedule& s, const Tensor& F, std::size_t S,
                        const ChainOptions& opt, const EpsFactory& factory) {
    if (S < 1) throw ContractError("sample_chains: S must be >= 1");
    const std::size_t N = F.rows(), C = F.cols();
    if (N == 0) throw ContractError("sample_chains: no instances");
    if (opt.fixed_init && opt.fixed_init->size() != C)
        throw DimensionError("sample_chains: fixed_init size mismatch");

    SampleSet out;
    out.N = N;
    out.S = S;
    out.C = C;
    out.draws = Tensor({N * S, C});

    const std::size_t total = N * S;
    const std::size_t chunk = std::max<std::size_t>(1, opt.chunk_size);
    std::vector<ChunkJob> jobs;
    for (std::size_t lo = 0; lo < total; lo += chunk) jobs.push_back({lo, std::min(total, lo + chunk)});

    const int T = s.T();
    std::mutex progress_mu;
    std::atomic<std::size_t> next_job{0};
    std::atomic<std::size_t> done_chains{0};
    std::mutex err_mu;
    std::exception_ptr first_error;

    auto run_worker = [&](unsigned worker_id) {
        ChunkEpsFn eps_fn;
        try {
            eps_fn = factory(worker_id);
        } catch (...) {
            std::lock_guard<std::mutex> lk(err_mu);
            if (!first_error) first_error = std::current_exception();
            return;
        }
        Mat Y, F_chunk, Y0hat, Z, Eps;
        std::vector<Rng> rngs;
        for (;;) {
            const std::size_t ji = next_job.fetch_add(1);
            if (ji >= jobs.size()) break;
            {
                std::lock_guard<std::mutex> lk(err_mu);
                if (first_error) break; // another worker failed; stop early
            }
            const auto [lo, hi] = jobs[ji];
            const auto rows = static_cast<Eigen::Index>(hi - lo);
            const auto cc = static_cast<Eigen::Index>(C);
            try {
                Y.resize(rows, cc);
                F_chunk.resize(rows, cc);
                Y0hat.resize(rows, cc);
                Z.resize(rows, cc);
                Eps.resize(rows, cc);
                rngs.clear();
                rngs.reserve(static_cast<std::size_t>(rows));
                for (std::size_t k = lo; k < hi; ++k)
                    rngs.emplace_back(splitmix64_at(opt.seed, k));

                for (std::size_t k = lo; k < hi; ++k)
                    F_chunk.row(static_cast<Eigen::Index>(k - lo)) =
                        F.m().row(static_cast<Eigen::Index>(k / S));

                // y_T ~ N(f, I) (or the test override).
                if (opt.fixed_init) {
                    for (Eigen::Index r = 0; r < rows; ++r)
                        for (Eigen::Index c = 0; c < cc; ++c) Y(r, c) = (*opt.fixed_init)[static_cast<std::size_t>(c)];
                } else if (opt.zero_noise) {
                    Y = F_chunk;
                } else {
                    for (Eigen::Index r = 0; r < rows; ++r)
                        for (Eigen::Index c = 0; c < cc; ++c)
                            Y(r, c) = rngs[static_cast<std::size_t>(r)].normal();
                    Y += F_chunk;
                }

                for (int t = T; t >= 1; --t) {
                    eps_fn(lo, Y, t, Eps);
                    const double sab = s.sqrt_alpha_bar(t);
                    const double s1m = s.sqrt_one_minus_alpha_bar(t);
                    const auto p = s.posterior(t);
                    Y0hat = (Y - (1.0 - sab) * F_chunk - s1m * Eps) / sab;
                    Y = p.gamma0 * Y0hat + p.gamma1 * Y + p.gamma2 * F_chunk;
                    if (t > 1 && !opt.zero_noise) {
                        const double sd = std::sqrt(p.beta_tilde);
                        for (Eigen::Index r = 0; r < rows; ++r)
                            for (Eigen::Index c = 0; c < cc; ++c)
                                Z(r, c) = rngs[static_cast<std::size_t>(r)].normal();
                        Y += sd * Z;
                    }
                    if (!Y.allFinite())
                        throw SamplingError("sample_chains: non-finite chain value", t);
                }

                out.draws.m().middleRows(static_cast<Eigen::Index>(lo), rows) = Y;
                const std::size_t done = done_chains.fetch_add(hi - lo) + (hi - lo);
                if (opt.progress) {
                    std::lock_guard<std::mutex> lk(progress_mu);
                    opt.progress(done, total);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!first_error) first_error = std::current_exception();
                break;
            }
        }
    };

    unsigned workers = opt.workers;
    if (workers == 0) {
        workers = std::thread::hardware_concurrency();
        if (workers == 0) workers = 1;
    }
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, jobs.size()));

    if (workers <= 1) {
        run_worker(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run_worker, w);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

} // namespace card
