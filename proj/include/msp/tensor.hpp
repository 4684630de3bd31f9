#ifndef __MSP_TENSOR_HPP__
#define __MSP_TENSOR_HPP__

#include <cstdint>
#include <vector>

namespace msp {

// Dense row-major tensor of doubles. Double precision keeps finite-difference
// gradient checks meaningful at h = 1e-4.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    static Tensor from(std::vector<int> shape, std::vector<double> values);
    static Tensor scalar(double v) { return from({1}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    double at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    double& at(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double at(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    Tensor reshaped(std::vector<int> shape) const;
    void fill(double v);

    double sum() const;
    double mean() const;
    double max() const;
    double min() const;
    bool all_finite() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// 64-bit FNV-1a over the raw bytes; used for checkpoint/determinism hashes.
uint64_t tensor_hash(const Tensor& t);
uint64_t bytes_hash(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace msp

#endif  // __MSP_TENSOR_HPP__
