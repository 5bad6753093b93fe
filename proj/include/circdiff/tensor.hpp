// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "circdiff/error.hpp"

namespace circdiff {

// Dense row-major array of doubles. Design tensors are [C, H, W]; network
// batches are [N, C, H, W].
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(count(shape_), fill) {}
    Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(data_.size() == count(shape_), ErrorCode::kInvalidArgument, "tensor data does not match shape");
    }

    const std::vector<int>& shape() const noexcept { return shape_; }
    int dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(int c, int h, int w) { return data_[index3(c, h, w)]; }
    double at(int c, int h, int w) const { return data_[index3(c, h, w)]; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            require(d >= 0, ErrorCode::kInvalidArgument, "negative tensor dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

private:
    std::size_t index3(int c, int h, int w) const {
        return (static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

std::string shape_string(const std::vector<int>& shape);

}  // namespace circdiff
