#include "msp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace msp {

static int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) {
            throw std::invalid_argument("Tensor: negative dimension");
        }
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw std::invalid_argument("Tensor::from: shape/value count mismatch");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_  = std::move(values);
    return t;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_numel(shape) != numel()) {
        throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_  = data_;
    return t;
}

void Tensor::fill(double v) {
    std::fill(data_.begin(), data_.end(), v);
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::mean() const {
    return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size());
}

double Tensor::max() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : data_) m = std::max(m, v);
    return m;
}

double Tensor::min() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : data_) m = std::min(m, v);
    return m;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

uint64_t bytes_hash(const void* data, size_t n, uint64_t h) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t tensor_hash(const Tensor& t) {
    uint64_t h = bytes_hash(t.shape().data(), t.shape().size() * sizeof(int));
    return bytes_hash(t.data(), static_cast<size_t>(t.numel()) * sizeof(double), h);
}

}  // namespace msp
