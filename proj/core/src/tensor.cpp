#include "capl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace capl {

std::size_t Tensor::checked_size(const std::vector<std::size_t>& shape) {
    if (shape.empty())
        throw std::invalid_argument("Tensor: rank must be >= 1");
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0)
            throw std::invalid_argument("Tensor: zero extent");
        n *= e;
    }
    return n;
}

double Tensor::min() const {
    return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
    return *std::max_element(data_.begin(), data_.end());
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& o) {
    if (!same_shape(o))
        throw std::invalid_argument("Tensor+=: shape mismatch " + shape_str() + " vs " + o.shape_str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    if (!same_shape(o))
        throw std::invalid_argument("Tensor-=: shape mismatch " + shape_str() + " vs " + o.shape_str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ',';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

Tensor operator+(Tensor a, const Tensor& b) { a += b; return a; }
Tensor operator-(Tensor a, const Tensor& b) { a -= b; return a; }
Tensor operator*(Tensor a, double s) { a *= s; return a; }

Tensor hadamard(const Tensor& a, const Tensor& mask) {
    if (a.same_shape(mask)) {
        Tensor out = a;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
        return out;
    }
    // single-channel broadcast: a is (C,H,W), mask is (H,W)
    if (a.rank() == 3 && mask.rank() == 2 &&
        a.extent(1) == mask.extent(0) && a.extent(2) == mask.extent(1)) {
        Tensor out = a;
        const std::size_t plane = mask.size();
        for (std::size_t c = 0; c < a.extent(0); ++c) {
            double* o = out.data() + c * plane;
            for (std::size_t i = 0; i < plane; ++i) o[i] *= mask[i];
        }
        return out;
    }
    throw std::invalid_argument("hadamard: shapes " + a.shape_str() + " and " + mask.shape_str() +
                                " are neither equal nor mask-broadcastable");
}

}  // namespace capl
