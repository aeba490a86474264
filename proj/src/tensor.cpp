#include "masktune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "masktune/errors.hpp"

namespace masktune {

namespace {
int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw InputError("tensor dimension must be positive, got " + std::to_string(d));
        n *= d;
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(checked_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (checked_numel(shape_) != static_cast<int64_t>(data_.size())) {
        throw InputError("tensor data size " + std::to_string(data_.size()) + " does not match shape " + shape_str());
    }
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::min() const {
    return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
    return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

}  // namespace masktune
