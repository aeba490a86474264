#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace masktune {

// Dense row-major f64 array with shape metadata. Carrier for images,
// activations, gradients and parameters throughout the engine.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, std::vector<double> values);

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, double value);

    const std::vector<int64_t>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * dim(1) + j)]; }
    double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * dim(1) + j)]; }
    double& at(int64_t i, int64_t j, int64_t k) {
        return data_[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
    }
    double at(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
    }
    double& at(int64_t i, int64_t j, int64_t k, int64_t l) {
        return data_[static_cast<size_t>(((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
    }
    double at(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return data_[static_cast<size_t>(((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
    }

    void fill(double value);
    bool all_finite() const;

    double min() const;
    double max() const;
    double sum() const;
    double mean() const { return numel() > 0 ? sum() / static_cast<double>(numel()) : 0.0; }

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

}  // namespace masktune
