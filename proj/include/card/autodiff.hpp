#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "card/tensor.hpp"

namespace card {

// One node of the dynamically-recorded computation graph (reverse-mode tape).
struct Node {
    Tensor value;
    Tensor grad; // allocated on demand; same shape as value once touched
    bool requires_grad = false;
    std::string name; // non-empty for named parameters
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn; // pulls node.grad into parents' grads

    void ensure_grad() {
        if (grad.size() != value.size()) grad = Tensor(value.shape());
    }
};

using NodePtr = std::shared_ptr<Node>;

// Value-semantics handle to a graph node. Cheap to copy; copies alias the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false, std::string name = "");

    bool defined() const noexcept { return static_cast<bool>(n_); }

    const Tensor& value() const { return n_->value; }
    Tensor& value() { return n_->value; } // in-place updates (optimizer steps)

    const Tensor& grad() const;
    Tensor& grad_ref() { n_->ensure_grad(); return n_->grad; }
    bool has_grad() const { return n_ && n_->grad.size() == n_->value.size(); }

    bool requires_grad() const { return n_ && n_->requires_grad; }
    const std::string& name() const { return n_->name; }

    void zero_grad() { n_->ensure_grad(); n_->grad.fill(0.0); }

    std::size_t rows() const { return n_->value.rows(); }
    std::size_t cols() const { return n_->value.cols(); }

    NodePtr node() const { return n_; }
    static Var wrap(NodePtr n) { Var v; v.n_ = std::move(n); return v; }

private:
    NodePtr n_;
};

// Reverse-mode sweep from a scalar (size-1) output. Accumulates into .grad of
// every reachable node with requires_grad; callers zero parameter grads first.
void backward(const Var& loss);

// ----- differentiable ops (2-D tensors; rank-1 treated as single column) -----

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b); // elementwise (Hadamard)
Var scale(const Var& a, double c);
Var matmul(const Var& a, const Var& b);

// y = x * W^T + b with W shaped (out, in) and b rank-1 (out).
// `name` labels dimension errors with the offending layer.
Var linear(const Var& x, const Var& W, const Var& b, const std::string& name = "linear");

Var softplus(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var concat_cols(const std::vector<Var>& parts);
Var sum(const Var& x);  // scalar
Var mean(const Var& x); // scalar

// Mean squared error over all elements: sum((a-b)^2) / rows(a).
// (Per-row squared-norm average — the diffusion noise-matching objective.)
Var mse_rowmean(const Var& pred, const Var& target);

// Mean softmax cross-entropy with integer class labels (0-based).
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);

// Numerically stable row-wise softmax of a plain tensor (no graph).
Tensor softmax_rows(const Tensor& logits);

} // namespace card
