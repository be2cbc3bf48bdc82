#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "card/data.hpp"
#include "card/layers.hpp"
#include "card/mean_estimator.hpp"
#include "card/regression.hpp"

namespace card {

// One-hot class prototypes (rows) for labels in [0, C).
Tensor one_hot_prototypes(const std::vector<int>& labels, int class_count);

// Pr(y=k) = softmax_k( -(y0_hat_k - 1)^2 / tau ); prediction is the
// distance argmax (independent of tau), ties to the smaller class index.
struct ProbConversion {
    std::vector<double> probs;
    int predicted = 0;
};
ProbConversion prob_convert(const std::vector<double>& y0_hat, double tau);

// Conditional noise net for classification: a 3-layer BN encoder of
// x (final layer BN without softplus), a response branch
// softplus(BN(g1y(y_t (+) f) (.) g1b(t))), Hadamard fusion, two more
// FC (.) emb -> BN -> softplus blocks, and a linear head to C.
struct ClsEpsilonNet {
    Linear g1x, g2x, g3x;
    BatchNorm1d bn1x, bn2x, bn3x;
    Linear g1y, g2a, g3a, g4;
    BatchNorm1d bn1y, bn2a, bn3a;
    Linear g1b, g2b, g3b; // timestep embeddings
    std::size_t x_dim = 0, class_count = 0, width = 0;

    ClsEpsilonNet() = default;
    ClsEpsilonNet(std::size_t x_dim, std::size_t class_count, std::size_t width, Rng& rng);

    Var forward(const Var& x, const Var& y_t, const Var& f, const Var& t_norm, bool training);

    std::vector<ParamRef> named_parameters() const;
    std::vector<Var> parameters() const;
    std::vector<BufferRef> named_buffers();
    std::vector<std::pair<std::string, const Tensor*>> checkpoint_entries();
    void load(const std::string& path);
};

struct TrainedClassification {
    ClsEpsilonNet net;
    EmaShadow ema;
    std::vector<double> epoch_loss;

    void use_ema() { ema.write_to_params(); }
};

// Noise-matching training with y0 = one-hot prototypes and f = classifier
// softmax output. cfg.amsgrad is ignored: classification uses plain Adam.
TrainedClassification train_classification(const Dataset& train, const MeanEstimator& f,
                                           const NoiseSchedule& s,
                                           const DiffusionTrainConfig& cfg);

// Reverse-chain draws of reconstructed prototypes plus their probability
// conversion.
struct ClassificationSamples {
    SampleSet raw;            // y0 draws, (N*S, C)
    Tensor probs;             // converted probabilities, (N*S, C)
    std::vector<int> argmax;  // per-draw predicted class, length N*S
    std::size_t N = 0, S = 0, C = 0;

    double prob_at(std::size_t i, std::size_t s, std::size_t k) const {
        return probs.at(i * S + s, k);
    }
    int pred_at(std::size_t i, std::size_t s) const { return argmax[i * S + s]; }
    // (S, C) probability block of one instance.
    Tensor instance_probs(std::size_t i) const;
};

ClassificationSamples sample_prototypes(const Tensor& X, ClsEpsilonNet& net,
                                        const MeanEstimator& f, const NoiseSchedule& s,
                                        const ChainOptions& opt, double tau);

// Most frequently argmaxed class across draws; ties to the smaller index.
int predict_majority(const std::vector<int>& draw_predictions, int class_count);
std::vector<int> predict_majority(const ClassificationSamples& cs);

} // namespace card
