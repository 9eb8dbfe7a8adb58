#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "bitforge/common.hpp"

namespace bitforge {

// Dense row-major tensor of doubles with an optional gradient slot of the
// same length. Shapes use positive extents; product(shape) == data.size().
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor full(std::vector<int64_t> shape, double v);
    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const;
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool is_scalar() const { return numel() == 1; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
    double item() const;

    bool has_grad() const { return !grad_.empty(); }
    std::span<double> grad();           // allocates zeros on first use
    std::span<const double> grad() const;
    void zero_grad();
    void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }

    bool all_finite() const;

    // extents collapsed except the last axis: {rows, cols}
    std::pair<int64_t, int64_t> as_2d() const;

  private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
    std::vector<double> grad_;  // empty means absent
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(Tensor t) { return std::make_shared<Tensor>(std::move(t)); }

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

}  // namespace bitforge
