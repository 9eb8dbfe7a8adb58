#pragma once

#include <cstdint>
#include <vector>

#include "bitforge/tensor.hpp"

namespace bitforge {
namespace train {

struct AdamWConfig {
    double lr = 8e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled
};

// Adam with bias correction and decoupled weight decay. A step with any
// non-finite gradient is rejected before touching parameters or moments.
class AdamW {
  public:
    AdamW(std::vector<TensorPtr> params, AdamWConfig config);

    void step();
    int64_t step_count() const { return step_; }
    const AdamWConfig& config() const { return config_; }

  private:
    std::vector<TensorPtr> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    AdamWConfig config_;
    int64_t step_ = 0;
};

// scales all grads so their global L2 norm is at most max_norm;
// returns true when scaling was applied
bool clip_grad_norm(const std::vector<TensorPtr>& params, double max_norm);

}  // namespace train
}  // namespace bitforge
