#include "bitforge/clip.hpp"

#include <algorithm>
#include <cmath>

namespace bitforge {
namespace clip {

const Tensor& CalibCache::find(const std::string& layer_id) const {
    for (const auto& [id, x] : layers)
        if (id == layer_id) return x;
    fail(ErrorKind::lookup, "no calibration entry for layer '", layer_id, "'");
}

bool CalibCache::has(const std::string& layer_id) const {
    for (const auto& [id, x] : layers)
        if (id == layer_id) return true;
    return false;
}

CalibCache capture_activations(const model::Model& m,
                               const std::vector<data::TokenBatch>& calib_batches,
                               const std::vector<std::string>& layer_ids, int64_t row_cap) {
    if (calib_batches.empty()) fail(ErrorKind::contract, "capture_activations: no calib batches");
    if (row_cap < 1) fail(ErrorKind::contract, "capture_activations: row_cap must be >= 1");
    for (const std::string& id : layer_ids)
        m.param(id);  // unknown layer id -> lookup error before any work

    model::ActivationTap tap;
    tap.wanted = layer_ids;
    for (const data::TokenBatch& tb : calib_batches) {
        Graph g(false);
        m.forward(g, tb.inputs, tb.batch, tb.len, nullptr, &tap);
    }

    CalibCache cache;
    cache.row_cap = row_cap;
    for (const std::string& id : layer_ids) {
        // concatenate this layer's captures across batches
        int64_t rows = 0, cols = 0;
        for (const auto& [name, x] : tap.captured)
            if (name == id) {
                rows += x.dim(0);
                cols = x.dim(1);
            }
        Tensor all({rows, cols});
        int64_t off = 0;
        for (const auto& [name, x] : tap.captured)
            if (name == id) {
                std::copy(x.values().begin(), x.values().end(), all.values().begin() + off);
                off += x.numel();
            }
        if (rows > row_cap) {
            // deterministic stride subsample
            Tensor kept({row_cap, cols});
            for (int64_t i = 0; i < row_cap; ++i) {
                const int64_t src = i * rows / row_cap;
                std::copy_n(all.values().begin() + src * cols, cols,
                            kept.values().begin() + i * cols);
            }
            all = std::move(kept);
        }
        if (!all.all_finite()) fail(ErrorKind::numeric, "calibration features for '", id,
                                    "' contain non-finite values");
        cache.layers.emplace_back(id, std::move(all));
    }
    return cache;
}

Tensor apply_clip(const Tensor& w, const ClipBounds& bounds) {
    if (!(bounds.alpha < 0.0) || !(bounds.beta > 0.0))
        fail(ErrorKind::contract, "apply_clip: need alpha < 0 < beta, got alpha=", bounds.alpha,
             " beta=", bounds.beta);
    Tensor out(w.shape(), {w.values().begin(), w.values().end()});
    for (double& v : out.values()) v = std::clamp(v, bounds.alpha, bounds.beta);
    return out;
}

namespace {

// ||(dq - w) X^T||_F^2 via the route that is cheaper for the layer geometry:
// the Gram matrix G = X^T X when in <= rows, the direct product otherwise
struct ObjectiveEval {
    const Tensor& w;
    const Tensor& x;
    int64_t out_dim, in_dim, rows;
    Tensor gram;       // [in, in] when used
    bool use_gram;

    ObjectiveEval(const Tensor& w_, const Tensor& x_) : w(w_), x(x_) {
        auto [r, c] = w.as_2d();
        out_dim = r;
        in_dim = c;
        rows = x.dim(0);
        if (x.dim(1) != in_dim)
            fail(ErrorKind::shape, "clip search: X has ", x.dim(1), " features but weight is ",
                 shape_str(w.shape()));
        use_gram = in_dim <= rows;
        if (use_gram) {
            gram = Tensor({in_dim, in_dim});
            auto xv = x.values();
            auto gv = gram.values();
            for (int64_t r2 = 0; r2 < rows; ++r2) {
                const double* row = xv.data() + r2 * in_dim;
                for (int64_t i = 0; i < in_dim; ++i) {
                    const double xi = row[i];
                    if (xi == 0.0) continue;
                    double* grow = gv.data() + i * in_dim;
                    for (int64_t j = 0; j < in_dim; ++j) grow[j] += xi * row[j];
                }
            }
        }
    }

    double operator()(const Tensor& dq) const {
        auto wv = w.values();
        auto dv = dq.values();
        std::vector<double> delta(static_cast<size_t>(in_dim));
        double obj = 0.0;
        if (use_gram) {
            auto gv = gram.values();
            for (int64_t o = 0; o < out_dim; ++o) {
                const double* wrow = wv.data() + o * in_dim;
                const double* drow = dv.data() + o * in_dim;
                for (int64_t i = 0; i < in_dim; ++i) delta[static_cast<size_t>(i)] = drow[i] - wrow[i];
                for (int64_t i = 0; i < in_dim; ++i) {
                    const double di = delta[static_cast<size_t>(i)];
                    if (di == 0.0) continue;
                    const double* grow = gv.data() + i * in_dim;
                    double acc = 0.0;
                    for (int64_t j = 0; j < in_dim; ++j) acc += grow[j] * delta[static_cast<size_t>(j)];
                    obj += di * acc;
                }
            }
        } else {
            auto xv = x.values();
            for (int64_t o = 0; o < out_dim; ++o) {
                const double* wrow = wv.data() + o * in_dim;
                const double* drow = dv.data() + o * in_dim;
                for (int64_t i = 0; i < in_dim; ++i) delta[static_cast<size_t>(i)] = drow[i] - wrow[i];
                for (int64_t r = 0; r < rows; ++r) {
                    const double* xrow = xv.data() + r * in_dim;
                    double acc = 0.0;
                    for (int64_t i = 0; i < in_dim; ++i) acc += xrow[i] * delta[static_cast<size_t>(i)];
                    obj += acc * acc;
                }
            }
        }
        return obj;
    }
};

double clipped_quant_objective(const ObjectiveEval& eval, const Tensor& w,
                               const quant::QuantConfig& config, double alpha, double beta) {
    Tensor wc(w.shape(), {w.values().begin(), w.values().end()});
    for (double& v : wc.values()) v = std::clamp(v, alpha, beta);
    Tensor dq = quant::dequantize(quant::quantize_tensor(wc, config));
    return eval(dq);
}

}  // namespace

SearchResult search_clip_bounds(const Tensor& w, const Tensor& x, const quant::QuantConfig& config,
                                const ClipSearchConfig& search, const std::string& layer_id) {
    config.validate();
    if (search.grid_steps < 2) fail(ErrorKind::contract, "clip search: grid_steps must be >= 2");
    if (search.shrink <= 0.0 || search.shrink >= 1.0)
        fail(ErrorKind::contract, "clip search: shrink must be in (0,1)");
    if (x.ndim() != 2) fail(ErrorKind::shape, "clip search: X must be 2-d");

    double min_val = w.values()[0], max_val = w.values()[0];
    for (double v : w.values()) {
        min_val = std::min(min_val, v);
        max_val = std::max(max_val, v);
    }
    if (!(min_val < 0.0) || !(max_val > 0.0))
        fail(ErrorKind::contract, "clip search: weights must straddle zero (min=", min_val,
             ", max=", max_val, ")");

    ObjectiveEval eval(w, x);
    const int64_t n = search.grid_steps;
    auto beta_at = [&](int64_t i) {
        return max_val * (1.0 - search.shrink * static_cast<double>(i) / static_cast<double>(n));
    };
    auto alpha_at = [&](int64_t j) {
        return min_val * (1.0 - search.shrink * static_cast<double>(j) / static_cast<double>(n));
    };

    SearchResult res;
    res.bounds.layer_id = layer_id;
    res.bounds.alpha = min_val;
    res.bounds.beta = max_val;
    res.unclipped_objective = clipped_quant_objective(eval, w, config, min_val, max_val);
    res.objective = res.unclipped_objective;

    if (search.joint) {
        for (int64_t i = 0; i <= n; ++i) {
            const double beta = beta_at(i);
            for (int64_t j = 0; j <= n; ++j) {
                if (i == 0 && j == 0) continue;  // already evaluated as the unclipped corner
                const double alpha = alpha_at(j);
                const double obj = clipped_quant_objective(eval, w, config, alpha, beta);
                if (obj < res.objective) {
                    res.objective = obj;
                    res.bounds.alpha = alpha;
                    res.bounds.beta = beta;
                }
            }
        }
    } else {
        // pass 1: beta with alpha at min_val
        double best_beta = max_val, best_obj = res.unclipped_objective;
        for (int64_t i = 1; i <= n; ++i) {
            const double obj = clipped_quant_objective(eval, w, config, min_val, beta_at(i));
            if (obj < best_obj) {
                best_obj = obj;
                best_beta = beta_at(i);
            }
        }
        // pass 2: alpha with the chosen beta
        double best_alpha = min_val;
        for (int64_t j = 1; j <= n; ++j) {
            const double obj = clipped_quant_objective(eval, w, config, alpha_at(j), best_beta);
            if (obj < best_obj) {
                best_obj = obj;
                best_alpha = alpha_at(j);
            }
        }
        res.objective = best_obj;
        res.bounds.alpha = best_alpha;
        res.bounds.beta = best_beta;
    }
    return res;
}

std::vector<SearchResult> clip_init_model(model::Model& m, const CalibCache& cache,
                                          const quant::QuantConfig& config,
                                          const ClipSearchConfig& search) {
    std::vector<SearchResult> results;
    for (const std::string& name : m.quantized_param_names(config.quantize_output_head)) {
        const Tensor& x = cache.find(name);
        TensorPtr w = m.param(name);
        SearchResult r = search_clip_bounds(*w, x, config, search, name);
        for (double& v : w->values()) v = std::clamp(v, r.bounds.alpha, r.bounds.beta);
        results.push_back(std::move(r));
    }
    return results;
}

}  // namespace clip
}  // namespace bitforge
