#pragma once

#include <cstdint>
#include <vector>

#include "card/data.hpp"
#include "card/layers.hpp"

namespace card {

struct MeanEstimatorConfig {
    std::vector<std::size_t> hidden = {100, 50};
    double leaky_slope = 0.01;
    int epochs = 100;
    int patience = 30;
    double lr = 1e-3;
    std::size_t batch_size = 32;
    double valid_fraction = 0.2; // used when no explicit validation set is given
    std::uint64_t seed = 0;
};

// The frozen conditional-mean network f_phi(x) anchoring both diffusion
// endpoints. Regression: plain MLP. Classification: MLP + softmax output.
// Null mode (f == 0) reduces CARD to an unconditional DDPM.
class MeanEstimator {
public:
    // Early-stopped MSE training; returns the frozen best-validation snapshot.
    static MeanEstimator pretrain_regressor(const Dataset& train, const Dataset& valid,
                                            const MeanEstimatorConfig& cfg);
    // Convenience: carve cfg.valid_fraction of `train` (seeded shuffle) first.
    static MeanEstimator pretrain_regressor(const Dataset& train, const MeanEstimatorConfig& cfg);

    // Early-stopped cross-entropy training; predictions are softmax vectors.
    static MeanEstimator pretrain_classifier(const Dataset& train, const Dataset& valid,
                                             const MeanEstimatorConfig& cfg);
    static MeanEstimator pretrain_classifier(const Dataset& train, const MeanEstimatorConfig& cfg);

    // f == 0 ("relation unknown"); also the DDPM-reduction fixture.
    static MeanEstimator null_estimator(std::size_t x_dim, std::size_t out_dim);

    // Deterministic batch prediction (inference mode). Requires frozen.
    Tensor predict(const Tensor& x) const;

    bool frozen() const noexcept { return frozen_; }
    bool is_null() const noexcept { return null_; }
    std::size_t x_dim() const noexcept { return x_dim_; }
    std::size_t out_dim() const noexcept { return out_dim_; }
    TaskKind task() const noexcept { return task_; }

    // FNV-1a over parameter bytes; stable while frozen.
    std::uint64_t checksum() const;

    double best_valid_loss() const noexcept { return best_valid_loss_; }
    int stopped_epoch() const noexcept { return stopped_epoch_; }

    std::vector<std::pair<std::string, const Tensor*>> checkpoint_entries() const;
    void load_params(const std::string& path);

    // Build an untrained estimator (for checkpoint loading).
    static MeanEstimator make_untrained(TaskKind task, std::size_t x_dim, std::size_t out_dim,
                                        const MeanEstimatorConfig& cfg);

private:
    MeanEstimator() = default;

    static MeanEstimator train_impl(const Dataset& train, const Dataset& valid,
                                    const MeanEstimatorConfig& cfg, TaskKind task);

    Sequential net_;
    bool frozen_ = false;
    bool null_ = false;
    TaskKind task_ = TaskKind::regression;
    std::size_t x_dim_ = 0, out_dim_ = 0;
    double best_valid_loss_ = 0.0;
    int stopped_epoch_ = 0;
};

} // namespace card
