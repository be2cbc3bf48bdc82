#pragma once

#include <string>
#include <variant>
#include <vector>

#include "card/autodiff.hpp"
#include "card/rng.hpp"

namespace card {

// Named handle to a trainable parameter (checkpointing / optimizers).
struct ParamRef {
    std::string name;
    Var var;
};

// Named handle to a non-trainable state tensor (BN running stats).
struct BufferRef {
    std::string name;
    Tensor* tensor;
};

// Fully-connected layer; weight (out, in), bias (out).
// Init: W ~ U(-1/sqrt(in), +1/sqrt(in)) drawn in storage order, b = 0.
struct Linear {
    Var W, b;
    std::size_t in = 0, out = 0;
    std::string name;

    Linear() = default;
    Linear(std::size_t in_dim, std::size_t out_dim, Rng& rng, std::string layer_name);

    Var forward(const Var& x) const { return linear(x, W, b, name); }
};

// 1-D batch normalization over feature columns. Training uses batch statistics
// (biased variance for normalization, unbiased pushed into the running stats,
// momentum-weighted); inference is the deterministic affine transform from the
// frozen running statistics.
struct BatchNorm1d {
    Var gamma, beta;
    Tensor running_mean, running_var;
    double eps = 1e-5;
    double momentum = 0.1;
    std::string name;

    BatchNorm1d() = default;
    BatchNorm1d(std::size_t dim, std::string layer_name);

    Var forward(const Var& x, bool training);
};

struct SoftplusLayer {};
struct LeakyReluLayer {
    double slope = 0.01;
};
// Elementwise product with a fixed companion tensor (e.g. timestep embedding).
struct HadamardWith {
    Var other;
};

using Layer = std::variant<Linear, BatchNorm1d, SoftplusLayer, LeakyReluLayer, HadamardWith>;

// Ordered container of layers with uniform forward and parameter collection.
class Sequential {
public:
    Sequential& add(Linear l);
    Sequential& add(BatchNorm1d l);
    Sequential& add_softplus();
    Sequential& add_leaky_relu(double slope);
    Sequential& add_hadamard(Var other);

    Var forward(const Var& x, bool training) const;

    std::vector<ParamRef> named_parameters() const;
    std::vector<BufferRef> named_buffers();
    std::vector<Var> parameters() const;

    std::size_t size() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_[i]; }
    const Layer& layer(std::size_t i) const { return *layers_[i]; }

private:
    // Layers are heap-held so Var handles and buffer pointers stay stable.
    std::vector<std::shared_ptr<Layer>> layers_;
};

} // namespace card
