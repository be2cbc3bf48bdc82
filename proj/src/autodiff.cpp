#include "card/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace card {

Var::Var(Tensor value, bool requires_grad, std::string name) {
    n_ = std::make_shared<Node>();
    n_->value = std::move(value);
    n_->requires_grad = requires_grad;
    n_->name = std::move(name);
}

const Tensor& Var::grad() const {
    n_->ensure_grad();
    return n_->grad;
}

namespace {

Var make_op(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents)
        if (p->requires_grad) needs = true;
    n->requires_grad = needs;
    if (needs) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return Var::wrap(std::move(n));
}

void accumulate(Node& p, const Mat& g) {
    p.ensure_grad();
    p.grad.m() += g;
}

} // namespace

void backward(const Var& loss) {
    if (!loss.defined() || loss.value().size() != 1)
        throw ContractError("backward: loss must be a defined scalar (size-1) variable");
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS (graphs are shallow, but avoid recursion anyway).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
    }
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out(a.value().shape());
    out.m() = a.value().m() + b.value().m();
    auto pa = a.node(), pb = b.node();
    return make_op(std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) accumulate(*pa, n.grad.m());
        if (pb->requires_grad) accumulate(*pb, n.grad.m());
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out(a.value().shape());
    out.m() = a.value().m() - b.value().m();
    auto pa = a.node(), pb = b.node();
    return make_op(std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) accumulate(*pa, n.grad.m());
        if (pb->requires_grad) { pb->ensure_grad(); pb->grad.m() -= n.grad.m(); }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out(a.value().shape());
    out.m() = a.value().m().cwiseProduct(b.value().m());
    auto pa = a.node(), pb = b.node();
    return make_op(std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) accumulate(*pa, n.grad.m().cwiseProduct(pb->value.m()));
        if (pb->requires_grad) accumulate(*pb, n.grad.m().cwiseProduct(pa->value.m()));
    });
}

Var scale(const Var& a, double c) {
    Tensor out(a.value().shape());
    out.m() = a.value().m() * c;
    auto pa = a.node();
    return make_op(std::move(out), {pa}, [pa, c](Node& n) {
        if (pa->requires_grad) accumulate(*pa, n.grad.m() * c);
    });
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner dimensions " + a.value().shape_str() + " vs " +
                             b.value().shape_str());
    Tensor out({a.rows(), b.cols()});
    out.m().noalias() = a.value().m() * b.value().m();
    auto pa = a.node(), pb = b.node();
    return make_op(std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) { pa->ensure_grad(); pa->grad.m().noalias() += n.grad.m() * pb->value.m().transpose(); }
        if (pb->requires_grad) { pb->ensure_grad(); pb->grad.m().noalias() += pa->value.m().transpose() * n.grad.m(); }
    });
}

Var linear(const Var& x, const Var& W, const Var& b, const std::string& name) {
    if (x.cols() != W.cols())
        throw DimensionError(name + ": input has " + std::to_string(x.cols()) +
                             " features, weight expects " + std::to_string(W.cols()));
    if (b.value().size() != W.rows())
        throw DimensionError(name + ": bias size " + std::to_string(b.value().size()) +
                             " vs " + std::to_string(W.rows()) + " output units");
    Tensor out({x.rows(), W.rows()});
    out.m().noalias() = x.value().m() * W.value().m().transpose();
    out.m().rowwise() += b.value().v().transpose();
    auto px = x.node(), pw = W.node(), pbias = b.node();
    return make_op(std::move(out), {px, pw, pbias}, [px, pw, pbias](Node& n) {
        if (px->requires_grad) { px->ensure_grad(); px->grad.m().noalias() += n.grad.m() * pw->value.m(); }
        if (pw->requires_grad) { pw->ensure_grad(); pw->grad.m().noalias() += n.grad.m().transpose() * px->value.m(); }
        if (pbias->requires_grad) { pbias->ensure_grad(); pbias->grad.v() += n.grad.m().colwise().sum().transpose(); }
    });
}

Var softplus(const Var& x) {
    Tensor out(x.value().shape());
    // max(x,0) + log(1+exp(-|x|)): overflow-safe, vectorizes as array passes.
    out.m().array() = x.value().m().array().max(0.0) +
                      (1.0 + (-x.value().m().array().abs()).exp()).log();
    auto px = x.node();
    return make_op(std::move(out), {px}, [px](Node& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        // sigmoid(x) = 1/(1+exp(-x)) computed stably via exp(-|x|).
        auto xa = px->value.m().array();
        Eigen::ArrayXXd e = (-xa.abs()).exp();
        Eigen::ArrayXXd sig = (xa >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e));
        px->grad.m().array() += n.grad.m().array() * sig;
    });
}

Var leaky_relu(const Var& x, double slope) {
    Tensor out(x.value().shape());
    auto xa = x.value().m().array();
    out.m().array() = (xa > 0.0).select(xa, slope * xa);
    auto px = x.node();
    return make_op(std::move(out), {px}, [px, slope](Node& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        auto xa = px->value.m().array();
        px->grad.m().array() += n.grad.m().array() * (xa > 0.0).select(
            Eigen::ArrayXXd::Constant(xa.rows(), xa.cols(), 1.0),
            Eigen::ArrayXXd::Constant(xa.rows(), xa.cols(), slope));
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t r = parts[0].rows();
    std::size_t c = 0;
    for (const auto& p : parts) {
        if (p.rows() != r)
            throw DimensionError("concat_cols: row mismatch " + p.value().shape_str());
        c += p.cols();
    }
    Tensor out({r, c});
    std::size_t off = 0;
    std::vector<NodePtr> parents;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        out.m().middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(p.cols())) =
            p.value().m();
        offsets.push_back(off);
        off += p.cols();
        parents.push_back(p.node());
    }
    auto ps = parents;
    return make_op(std::move(out), std::move(parents), [ps, offsets](Node& n) {
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (!ps[i]->requires_grad) continue;
            ps[i]->ensure_grad();
            ps[i]->grad.m() += n.grad.m().middleCols(static_cast<Eigen::Index>(offsets[i]),
                                                     static_cast<Eigen::Index>(ps[i]->value.cols()));
        }
    });
}

Var sum(const Var& x) {
    Tensor out({std::size_t{1}});
    out[0] = x.value().m().sum();
    auto px = x.node();
    return make_op(std::move(out), {px}, [px](Node& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        px->grad.m().array() += n.grad[0];
    });
}

Var mean(const Var& x) {
    const double inv = 1.0 / static_cast<double>(x.value().size());
    Tensor out({std::size_t{1}});
    out[0] = x.value().m().sum() * inv;
    auto px = x.node();
    return make_op(std::move(out), {px}, [px, inv](Node& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        px->grad.m().array() += n.grad[0] * inv;
    });
}

Var mse_rowmean(const Var& pred, const Var& target) {
    require_same_shape(pred.value(), target.value(), "mse_rowmean");
    const double inv = 1.0 / static_cast<double>(pred.rows());
    Tensor out({std::size_t{1}});
    Mat diff = pred.value().m() - target.value().m();
    out[0] = diff.squaredNorm() * inv;
    auto pp = pred.node(), pt = target.node();
    return make_op(std::move(out), {pp, pt}, [pp, pt, diff = std::move(diff), inv](Node& n) {
        const double c = 2.0 * inv * n.grad[0];
        if (pp->requires_grad) accumulate(*pp, c * diff);
        if (pt->requires_grad) { pt->ensure_grad(); pt->grad.m() -= c * diff; }
    });
}

Tensor softmax_rows(const Tensor& logits) {
    Tensor out(logits.shape());
    auto L = logits.m();
    auto O = out.m();
    for (Eigen::Index i = 0; i < L.rows(); ++i) {
        const double mx = L.row(i).maxCoeff();
        O.row(i) = (L.row(i).array() - mx).exp();
        O.row(i) /= O.row(i).sum();
    }
    return out;
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
    const auto B = logits.rows(), C = logits.cols();
    if (labels.size() != B)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(B) + " rows");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw DataError("softmax_cross_entropy: label " + std::to_string(y) +
                            " outside [0," + std::to_string(C) + ")");
    Tensor probs = softmax_rows(logits.value());
    const double inv = 1.0 / static_cast<double>(B);
    double loss = 0.0;
    auto L = logits.value().m();
    for (std::size_t i = 0; i < B; ++i) {
        const double mx = L.row(static_cast<Eigen::Index>(i)).maxCoeff();
        const double lse = mx + std::log((L.row(static_cast<Eigen::Index>(i)).array() - mx).exp().sum());
        loss += lse - L(static_cast<Eigen::Index>(i), labels[i]);
    }
    Tensor out({std::size_t{1}});
    out[0] = loss * inv;
    auto pl = logits.node();
    return make_op(std::move(out), {pl}, [pl, probs = std::move(probs), labels, inv](Node& n) {
        if (!pl->requires_grad) return;
        pl->ensure_grad();
        Mat g = probs.m();
        for (std::size_t i = 0; i < labels.size(); ++i)
            g(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
        pl->grad.m() += (inv * n.grad[0]) * g;
    });
}

} // namespace card
