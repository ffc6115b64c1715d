#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace capl {

/// Dense row-major tensor of 64-bit reals. Image-like data uses
/// channel-first (C,H,W) ordering throughout the library.
///
/// Tensors are value types: copy freely, share read-only across threads.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_size(shape_))
            throw std::invalid_argument("Tensor: data length does not match shape");
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    // rank-2 (H,W) access
    double at2(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& at2(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

    // rank-3 (C,H,W) access
    double at3(std::size_t ch, std::size_t r, std::size_t c) const {
        return data_[(ch * shape_[1] + r) * shape_[2] + c];
    }
    double& at3(std::size_t ch, std::size_t r, std::size_t c) {
        return data_[(ch * shape_[1] + r) * shape_[2] + c];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    /// Exact comparison: equal shapes and bitwise-equal elements.
    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }
    bool operator!=(const Tensor& o) const { return !(*this == o); }

    double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
    double min() const;
    double max() const;
    double mean() const { return data_.empty() ? 0.0 : sum() / double(data_.size()); }
    bool all_finite() const;

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(double s);

    std::string shape_str() const;

private:
    static std::size_t checked_size(const std::vector<std::size_t>& shape);

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

/// Elementwise product. `mask` may either match `a`'s shape exactly or be a
/// single-channel (H,W) map broadcast across the channel axis of a (C,H,W)
/// tensor. Any other combination is rejected.
Tensor hadamard(const Tensor& a, const Tensor& mask);

}  // namespace capl
