#include "bitforge/quant.hpp"

#include <algorithm>
#include <cmath>

namespace bitforge {
namespace quant {

const char* format_name(Format f) {
    switch (f) {
        case Format::nf_asym: return "nf_asym";
        case Format::nf_sym: return "nf_sym";
        case Format::int_asym: return "int_asym";
        case Format::int_sym: return "int_sym";
    }
    return "?";
}

Format format_from_name(const std::string& name) {
    if (name == "nf_asym") return Format::nf_asym;
    if (name == "nf_sym") return Format::nf_sym;
    if (name == "int_asym") return Format::int_asym;
    if (name == "int_sym") return Format::int_sym;
    fail(ErrorKind::config, "unknown quant format '", name, "'");
}

void QuantConfig::validate() const {
    if (bits < 2 || bits > 4) fail(ErrorKind::config, "bits must be in {2,3,4}, got ", bits);
    const bool nf = format == Format::nf_asym || format == Format::nf_sym;
    if (nf && bits < 3)
        fail(ErrorKind::config, "NF formats require bits >= 3; use an INT format at 2-bit");
    if (group_size < 1) fail(ErrorKind::config, "group_size must be positive, got ", group_size);
}

QuantConfig default_config_for_bits(int bits, int64_t group_size) {
    QuantConfig cfg;
    cfg.bits = bits;
    cfg.group_size = group_size;
    cfg.format = bits == 2 ? Format::int_asym : Format::nf_asym;
    cfg.validate();
    return cfg;
}

namespace {

// Acklam's rational approximation of the standard normal quantile,
// |relative error| < 1.15e-9 over (0, 1).
double probit(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double p_low = 0.02425, p_high = 1.0 - p_low;
    if (p <= 0.0 || p >= 1.0) fail(ErrorKind::contract, "probit: p must be in (0,1), got ", p);
    if (p < p_low) {
        double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p <= p_high) {
        double q = p - 0.5, r = q * q;
        return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
               (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    }
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
}

// nearest level within [lo, hi]; exact ties go to the smaller-magnitude level
int64_t nearest_level(const std::vector<double>& levels, int64_t lo, int64_t hi, double t) {
    int64_t best = lo;
    double best_err = std::abs(t - levels[static_cast<size_t>(lo)]);
    for (int64_t i = lo + 1; i <= hi; ++i) {
        double err = std::abs(t - levels[static_cast<size_t>(i)]);
        if (err < best_err ||
            (err == best_err && std::abs(levels[static_cast<size_t>(i)]) <
                                    std::abs(levels[static_cast<size_t>(best)]))) {
            best = i;
            best_err = err;
        }
    }
    return best;
}

double round_half_away(double x) { return std::round(x); }

}  // namespace

Codebook build_nf_codebook(int bits) {
    if (bits < 3 || bits > 4) fail(ErrorKind::config, "NF codebook needs bits in {3,4}, got ", bits);
    const int64_t k_neg = int64_t{1} << (bits - 1);
    const int64_t k_pos = k_neg - 1;

    Codebook cb;
    cb.kind = CodebookKind::nf;
    cb.bits = bits;
    cb.levels.reserve(static_cast<size_t>(k_neg + 1 + k_pos));

    // equal probability mass per level on each side, extremes pinned to +-1
    const double q_neg_extreme = probit(0.5 / static_cast<double>(k_neg + 1));
    for (int64_t i = 0; i < k_neg; ++i) {
        double p = 0.5 * static_cast<double>(i + 1) / static_cast<double>(k_neg + 1);
        cb.levels.push_back(probit(p) / -q_neg_extreme);
    }
    cb.zero_index = static_cast<int64_t>(cb.levels.size());
    cb.levels.push_back(0.0);
    const double q_pos_extreme =
        probit(0.5 + 0.5 * static_cast<double>(k_pos) / static_cast<double>(k_pos + 1));
    for (int64_t j = 0; j < k_pos; ++j) {
        double p = 0.5 + 0.5 * static_cast<double>(j + 1) / static_cast<double>(k_pos + 1);
        cb.levels.push_back(probit(p) / q_pos_extreme);
    }
    cb.levels.front() = -1.0;
    cb.levels.back() = 1.0;
    return cb;
}

void quantize_group_nf_asym(std::span<const double> w, const Codebook& cb,
                            std::span<uint8_t> codes, double& s_pos, double& s_neg) {
    if (w.empty()) fail(ErrorKind::contract, "quantize: empty group");
    double max_pos = 0.0, min_nonpos = 0.0;
    for (double v : w) {
        if (v > 0.0) max_pos = std::max(max_pos, v);
        else min_nonpos = std::min(min_nonpos, v);
    }
    s_pos = max_pos > 0.0 ? max_pos : 1.0;
    s_neg = min_nonpos < 0.0 ? -min_nonpos : 1.0;
    const int64_t zi = cb.zero_index;
    const int64_t last = static_cast<int64_t>(cb.levels.size()) - 1;
    for (size_t i = 0; i < w.size(); ++i) {
        if (w[i] > 0.0)
            codes[i] = static_cast<uint8_t>(nearest_level(cb.levels, zi, last, w[i] / s_pos));
        else
            codes[i] = static_cast<uint8_t>(nearest_level(cb.levels, 0, zi, w[i] / s_neg));
    }
}

void quantize_group_nf_sym(std::span<const double> w, const Codebook& cb,
                           std::span<uint8_t> codes, double& s) {
    if (w.empty()) fail(ErrorKind::contract, "quantize: empty group");
    double max_abs = 0.0;
    for (double v : w) max_abs = std::max(max_abs, std::abs(v));
    s = max_abs > 0.0 ? max_abs : 1.0;
    const int64_t last = static_cast<int64_t>(cb.levels.size()) - 1;
    for (size_t i = 0; i < w.size(); ++i)
        codes[i] = static_cast<uint8_t>(nearest_level(cb.levels, 0, last, w[i] / s));
}

void quantize_group_int_asym(std::span<const double> w, int bits, std::span<uint8_t> codes,
                             double& s, double& z) {
    if (w.empty()) fail(ErrorKind::contract, "quantize: empty group");
    double lo = w[0], hi = w[0];
    for (double v : w) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double qmax = static_cast<double>((int64_t{1} << bits) - 1);
    z = lo;
    s = hi > lo ? (hi - lo) / qmax : 1.0;
    for (size_t i = 0; i < w.size(); ++i) {
        double c = round_half_away((w[i] - z) / s);
        codes[i] = static_cast<uint8_t>(std::clamp(c, 0.0, qmax));
    }
}

void quantize_group_int_sym(std::span<const double> w, int bits, std::span<uint8_t> codes,
                            double& s) {
    if (w.empty()) fail(ErrorKind::contract, "quantize: empty group");
    double max_abs = 0.0;
    for (double v : w) max_abs = std::max(max_abs, std::abs(v));
    const double qmax = static_cast<double>((int64_t{1} << (bits - 1)) - 1);
    s = max_abs > 0.0 ? max_abs / qmax : 1.0;
    for (size_t i = 0; i < w.size(); ++i) {
        double c = round_half_away(w[i] / s);
        codes[i] = static_cast<uint8_t>(std::clamp(c, -qmax, qmax) + qmax);
    }
}

void dequantize_group(std::span<const uint8_t> codes, const GroupParams& p,
                      const QuantConfig& config, const Codebook& cb, std::span<double> out) {
    const int64_t code_limit = int64_t{1} << config.bits;
    switch (config.format) {
        case Format::nf_asym:
            for (size_t i = 0; i < codes.size(); ++i) {
                if (codes[i] >= cb.levels.size())
                    fail(ErrorKind::data, "corrupt code ", int(codes[i]), " >= ", cb.levels.size());
                double lvl = cb.levels[codes[i]];
                out[i] = lvl > 0.0 ? lvl * p.s_pos : lvl * p.s_neg;
            }
            break;
        case Format::nf_sym:
            for (size_t i = 0; i < codes.size(); ++i) {
                if (codes[i] >= cb.levels.size())
                    fail(ErrorKind::data, "corrupt code ", int(codes[i]), " >= ", cb.levels.size());
                out[i] = cb.levels[codes[i]] * p.s_pos;
            }
            break;
        case Format::int_asym:
            for (size_t i = 0; i < codes.size(); ++i) {
                if (codes[i] >= code_limit)
                    fail(ErrorKind::data, "corrupt code ", int(codes[i]), " >= ", code_limit);
                out[i] = static_cast<double>(codes[i]) * p.s_pos + p.s_neg;
            }
            break;
        case Format::int_sym: {
            const double qmax = static_cast<double>((int64_t{1} << (config.bits - 1)) - 1);
            for (size_t i = 0; i < codes.size(); ++i) {
                if (codes[i] >= code_limit)
                    fail(ErrorKind::data, "corrupt code ", int(codes[i]), " >= ", code_limit);
                out[i] = (static_cast<double>(codes[i]) - qmax) * p.s_pos;
            }
            break;
        }
    }
}

int64_t group_count(const std::vector<int64_t>& shape, int64_t group_size) {
    int64_t cols = shape.back();
    int64_t rows = shape_numel(shape) / cols;
    int64_t blocks = (cols + group_size - 1) / group_size;
    return rows * blocks;
}

QuantizedTensor quantize_tensor(const Tensor& w, const QuantConfig& config) {
    config.validate();
    if (w.numel() == 0) fail(ErrorKind::contract, "quantize_tensor: empty tensor");

    QuantizedTensor q;
    q.config = config;
    q.shape = w.shape();
    q.codes.resize(static_cast<size_t>(w.numel()));
    const bool nf = config.format == Format::nf_asym || config.format == Format::nf_sym;
    if (nf) q.codebook = build_nf_codebook(config.bits);

    auto [rows, cols] = w.as_2d();
    const int64_t gs = config.group_size;
    const int64_t blocks = (cols + gs - 1) / gs;
    q.group_params.resize(static_cast<size_t>(rows * blocks));

    auto wv = w.values();
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t b = 0; b < blocks; ++b) {
            const int64_t off = r * cols + b * gs;
            const int64_t len = std::min(gs, cols - b * gs);
            std::span<const double> group(wv.data() + off, static_cast<size_t>(len));
            std::span<uint8_t> codes(q.codes.data() + off, static_cast<size_t>(len));
            GroupParams& p = q.group_params[static_cast<size_t>(r * blocks + b)];
            switch (config.format) {
                case Format::nf_asym:
                    quantize_group_nf_asym(group, q.codebook, codes, p.s_pos, p.s_neg);
                    break;
                case Format::nf_sym:
                    quantize_group_nf_sym(group, q.codebook, codes, p.s_pos);
                    break;
                case Format::int_asym:
                    quantize_group_int_asym(group, config.bits, codes, p.s_pos, p.s_neg);
                    break;
                case Format::int_sym:
                    quantize_group_int_sym(group, config.bits, codes, p.s_pos);
                    break;
            }
        }
    }
    return q;
}

Tensor dequantize(const QuantizedTensor& q) {
    Tensor out(q.shape);
    const int64_t cols = q.shape.back();
    const int64_t rows = out.numel() / cols;
    const int64_t gs = q.config.group_size;
    const int64_t blocks = (cols + gs - 1) / gs;
    auto ov = out.values();
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t b = 0; b < blocks; ++b) {
            const int64_t off = r * cols + b * gs;
            const int64_t len = std::min(gs, cols - b * gs);
            dequantize_group({q.codes.data() + off, static_cast<size_t>(len)},
                             q.group_params[static_cast<size_t>(r * blocks + b)], q.config,
                             q.codebook, {ov.data() + off, static_cast<size_t>(len)});
        }
    }
    return out;
}

TensorPtr fake_quant_ste(Graph& g, const TensorPtr& w, const QuantConfig& config) {
    Tensor out = dequantize(quantize_tensor(*w, config));
    return g.custom({w}, std::move(out), [](const Graph::Node& node) {
        auto gout = node.output->grad();
        auto gin = node.inputs[0]->grad();
        for (size_t i = 0; i < gin.size(); ++i) gin[i] += gout[i];
    });
}

QuantErrorReport quant_error_report(const Tensor& w, const QuantConfig& config) {
    QuantizedTensor q = quantize_tensor(w, config);
    Tensor dq = dequantize(q);

    QuantErrorReport rep;
    auto wv = w.values();
    auto dv = dq.values();
    const int64_t cols = w.shape().back();
    const int64_t rows = w.numel() / cols;
    const int64_t gs = config.group_size;
    const int64_t blocks = (cols + gs - 1) / gs;
    double total_sse = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t b = 0; b < blocks; ++b) {
            const int64_t off = r * cols + b * gs;
            const int64_t len = std::min(gs, cols - b * gs);
            double sse = 0.0;
            for (int64_t i = 0; i < len; ++i) {
                double e = dv[off + i] - wv[off + i];
                sse += e * e;
                rep.max_abs_err = std::max(rep.max_abs_err, std::abs(e));
            }
            rep.per_group_mse.push_back(sse / static_cast<double>(len));
            rep.group_sizes.push_back(len);
            total_sse += sse;
        }
    }
    rep.mse = total_sse / static_cast<double>(w.numel());
    return rep;
}

}  // namespace quant
}  // namespace bitforge
