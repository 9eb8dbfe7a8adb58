#include "bitforge/optimizer.hpp"

#include <cmath>

namespace bitforge {
namespace train {

AdamW::AdamW(std::vector<TensorPtr> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
    if (config_.lr <= 0.0) fail(ErrorKind::config, "AdamW: lr must be > 0");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const TensorPtr& p : params_) {
        m_.emplace_back(static_cast<size_t>(p->numel()), 0.0);
        v_.emplace_back(static_cast<size_t>(p->numel()), 0.0);
    }
}

void AdamW::step() {
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        auto g = params_[pi]->grad();
        for (double gv : g)
            if (!std::isfinite(gv))
                fail(ErrorKind::numeric, "AdamW: non-finite gradient at step ", step_ + 1,
                     "; step rejected");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = *params_[pi];
        auto g = p.grad();
        auto& m = m_[pi];
        auto& v = v_[pi];
        auto w = p.values();
        for (size_t i = 0; i < m.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= config_.lr * (mhat / (std::sqrt(vhat) + config_.eps) +
                                  config_.weight_decay * w[i]);
        }
    }
}

bool clip_grad_norm(const std::vector<TensorPtr>& params, double max_norm) {
    double sq = 0.0;
    for (const TensorPtr& p : params)
        for (double g : p->grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!(norm > max_norm)) return false;
    const double scale = max_norm / norm;
    for (const TensorPtr& p : params)
        for (double& g : p->grad()) g *= scale;
    return true;
}

}  // namespace train
}  // namespace bitforge
