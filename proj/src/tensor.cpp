#include "bitforge/tensor.hpp"

#include <cmath>

namespace bitforge {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) fail(ErrorKind::shape, "non-positive extent in shape ", shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
        fail(ErrorKind::shape, "shape ", shape_str(shape_), " does not match data length ",
             data_.size());
}

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
}

int64_t Tensor::dim(int64_t i) const {
    if (i < 0) i += ndim();
    if (i < 0 || i >= ndim()) fail(ErrorKind::shape, "axis ", i, " out of range for ", shape_str(shape_));
    return shape_[static_cast<size_t>(i)];
}

double Tensor::item() const {
    if (!is_scalar()) fail(ErrorKind::contract, "item() requires a scalar, got ", shape_str(shape_));
    return data_[0];
}

std::span<double> Tensor::grad() {
    if (grad_.empty()) grad_.assign(data_.size(), 0.0);
    return grad_;
}

std::span<const double> Tensor::grad() const {
    if (grad_.empty()) fail(ErrorKind::contract, "grad slot not populated");
    return grad_;
}

void Tensor::zero_grad() {
    for (double& g : grad_) g = 0.0;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::pair<int64_t, int64_t> Tensor::as_2d() const {
    if (ndim() < 1) fail(ErrorKind::shape, "empty tensor has no 2-d view");
    int64_t cols = shape_.back();
    return {numel() / cols, cols};
}

}  // namespace bitforge
