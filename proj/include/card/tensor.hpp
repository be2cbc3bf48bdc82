#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "card/error.hpp"

namespace card {

using Mat = Eigen::MatrixXd; // column-major doubles
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

// Dense n-d array of doubles. Rank 1 and 2 are the workhorses; 2-D data is
// stored column-major (rows = instances, cols = features) to match Eigen.
//
// Storage is aligned to Eigen's packet boundary. Eigen's reductions peel
// scalar iterations up to the first aligned element, so an unaligned buffer
// would make summation order (and the low bits of the result) depend on the
// heap address; pinning the alignment keeps every computation reproducible.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(count_(shape_), fill) {}

    Tensor(std::initializer_list<std::size_t> shape, double fill = 0.0)
        : Tensor(std::vector<std::size_t>(shape), fill) {}

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double v) { return Tensor(std::move(shape), v); }

    static Tensor from_vector(const std::vector<double>& v) {
        Tensor t;
        t.shape_ = {v.size()};
        t.data_.assign(v.begin(), v.end());
        return t;
    }

    static Tensor from_matrix(const Mat& m) {
        Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
        MatMap(t.data_.data(), m.rows(), m.cols()) = m;
        return t;
    }

    static Tensor scalar(double v) {
        Tensor t({std::size_t{1}});
        t.data_[0] = v;
        return t;
    }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const { return rank() >= 1 ? shape_[0] : 0; }
    std::size_t cols() const { return rank() >= 2 ? shape_[1] : 1; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D element access (column-major layout).
    double& at(std::size_t r, std::size_t c) { return data_[c * shape_[0] + r]; }
    double at(std::size_t r, std::size_t c) const { return data_[c * shape_[0] + r]; }

    // Eigen views. m() treats rank-1 tensors as single-column matrices.
    MatMap m() {
        return MatMap(data_.data(), static_cast<Eigen::Index>(rows()),
                      static_cast<Eigen::Index>(cols()));
    }
    ConstMatMap m() const {
        return ConstMatMap(data_.data(), static_cast<Eigen::Index>(rows()),
                           static_cast<Eigen::Index>(cols()));
    }
    VecMap v() { return VecMap(data_.data(), static_cast<Eigen::Index>(size())); }
    ConstVecMap v() const { return ConstVecMap(data_.data(), static_cast<Eigen::Index>(size())); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape_[i]);
        return s + ")";
    }

private:
    static std::size_t count_(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    std::vector<std::size_t> shape_;
    std::vector<double, Eigen::aligned_allocator<double>> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(who) + ": shape mismatch " + a.shape_str() +
                             " vs " + b.shape_str());
}

} // namespace card
