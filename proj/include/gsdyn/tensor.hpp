// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gsdyn/common.hpp"

namespace gsdyn::ad {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense row-major f64 tensor. Ranks 0..3 are what the engine actually uses; shape () is a
// scalar with one element.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(count_(shape_), fill) {}

    static Tensor scalar(double v) {
        Tensor t{std::vector<int>{}};
        t.data_[0] = v;
        return t;
    }
    static Tensor from(std::vector<int> shape, std::vector<double> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        if (count_(t.shape_) != static_cast<std::int64_t>(data.size()))
            throw NumericsError("tensor: data size does not match shape");
        t.data_ = std::move(data);
        return t;
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Rank-2 (or rank-1 as a column) views for Eigen arithmetic.
    Eigen::Map<MatRM> mat() {
        return {data_.data(), rows(), cols()};
    }
    Eigen::Map<const MatRM> mat() const {
        return {data_.data(), rows(), cols()};
    }
    Eigen::Index rows() const {
        return rank() == 0 ? 1 : dim(0);
    }
    Eigen::Index cols() const {
        if (rank() <= 1) return rank() == 0 ? 1 : 1;
        std::int64_t c = 1;
        for (int i = 1; i < rank(); ++i) c *= dim(i);
        return c;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    static std::int64_t count_(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw NumericsError("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace gsdyn::ad
