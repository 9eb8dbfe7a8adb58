#pragma once

#include <string>
#include <vector>

#include "bitforge/dataset.hpp"
#include "bitforge/model.hpp"
#include "bitforge/quant.hpp"
#include "bitforge/tensor.hpp"

namespace bitforge {
namespace clip {

struct ClipBounds {
    double alpha = -1.0;  // < 0
    double beta = 1.0;    // > 0
    std::string layer_id;
};

// per-layer input feature matrices cached from a small calibration run
struct CalibCache {
    std::vector<std::pair<std::string, Tensor>> layers;  // id -> X [rows, in_features]
    int64_t row_cap = 0;
    std::string source;

    const Tensor& find(const std::string& layer_id) const;
    bool has(const std::string& layer_id) const;
};

struct ClipSearchConfig {
    int64_t grid_steps = 32;  // candidates per side are i in 0..grid_steps
    double shrink = 0.5;      // at most this fraction of either range is clipped away
    bool joint = true;        // false: beta pass holding alpha, then alpha pass
    int64_t row_cap = 256;
};

// rows of each requested layer's input activations, stride-subsampled to the
// row cap; deterministic for a fixed model and calib set
CalibCache capture_activations(const model::Model& m,
                               const std::vector<data::TokenBatch>& calib_batches,
                               const std::vector<std::string>& layer_ids, int64_t row_cap = 256);

// elementwise clamp into [alpha, beta]; input untouched
Tensor apply_clip(const Tensor& w, const ClipBounds& bounds);

struct SearchResult {
    ClipBounds bounds;
    double objective = 0.0;            // squared Frobenius norm of (Q(clip(w)) - w) X^T
    double unclipped_objective = 0.0;  // same at (min_val, max_val)
};

// grid search over beta = max_val (1 - i rho/n), alpha = min_val (1 - j rho/n);
// ties break toward less clipping
SearchResult search_clip_bounds(const Tensor& w, const Tensor& x, const quant::QuantConfig& config,
                                const ClipSearchConfig& search, const std::string& layer_id = "");

// one (alpha, beta) pair per quantized layer; weights clamped in place
std::vector<SearchResult> clip_init_model(model::Model& m, const CalibCache& cache,
                                          const quant::QuantConfig& config,
                                          const ClipSearchConfig& search);

}  // namespace clip
}  // namespace bitforge
