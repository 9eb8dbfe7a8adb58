#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bitforge/graph.hpp"
#include "bitforge/tensor.hpp"

namespace bitforge {
namespace quant {

enum class Format { nf_asym, nf_sym, int_asym, int_sym };

const char* format_name(Format f);
Format format_from_name(const std::string& name);

// Group-wise weight quantization recipe. Groups run contiguously along the
// last (input) axis of each weight matrix; a short final group is permitted
// and scaled independently.
struct QuantConfig {
    int bits = 2;
    Format format = Format::int_asym;
    int64_t group_size = 128;
    bool quantize_output_head = false;

    void validate() const;  // 2-bit requires an INT format; NF needs bits >= 3
};

// default pairing: INT-Asym at 2-bit, NF-Asym above
QuantConfig default_config_for_bits(int bits, int64_t group_size = 128);

enum class CodebookKind { nf, integer };

// Sorted reproduction levels. NF kinds span [-1, 1] and contain 0; the INT
// codebook is the raw code space {0 .. 2^bits - 1}.
struct Codebook {
    std::vector<double> levels;
    CodebookKind kind = CodebookKind::nf;
    int bits = 0;
    int64_t zero_index = -1;  // index of level 0.0 (NF kinds)
};

// normal-quantile levels: 2^(bits-1) negative levels, 0, 2^(bits-1)-1 positive
// levels, each side normalized by its own extreme quantile
Codebook build_nf_codebook(int bits);

// per-group scale parameters; meaning depends on the format
struct GroupParams {
    double s_pos = 1.0;  // NF-Asym; `s` for the single-scale formats
    double s_neg = 1.0;  // NF-Asym; zero point `z` for INT-Asym, unused otherwise
};

struct QuantizedTensor {
    std::vector<uint8_t> codes;       // one unpacked code per element, < 2^bits
    std::vector<GroupParams> group_params;
    QuantConfig config;
    std::vector<int64_t> shape;
    Codebook codebook;                // NF kinds only; INT decodes arithmetically

    int64_t numel() const { return static_cast<int64_t>(codes.size()); }
};

// single-group kernels (Eq. 1 / Eq. 2 style mappings)
void quantize_group_nf_asym(std::span<const double> w, const Codebook& cb,
                            std::span<uint8_t> codes, double& s_pos, double& s_neg);
void quantize_group_int_asym(std::span<const double> w, int bits, std::span<uint8_t> codes,
                             double& s, double& z);
void quantize_group_nf_sym(std::span<const double> w, const Codebook& cb,
                           std::span<uint8_t> codes, double& s);
void quantize_group_int_sym(std::span<const double> w, int bits, std::span<uint8_t> codes,
                            double& s);

void dequantize_group(std::span<const uint8_t> codes, const GroupParams& p,
                      const QuantConfig& config, const Codebook& cb, std::span<double> out);

QuantizedTensor quantize_tensor(const Tensor& w, const QuantConfig& config);
Tensor dequantize(const QuantizedTensor& q);

// forward value dequantize(quantize(w)); backward passes the upstream
// gradient through unchanged (straight-through estimator)
TensorPtr fake_quant_ste(Graph& g, const TensorPtr& w, const QuantConfig& config);

struct QuantErrorReport {
    double mse = 0.0;
    double max_abs_err = 0.0;
    std::vector<double> per_group_mse;
    std::vector<int64_t> group_sizes;
};

QuantErrorReport quant_error_report(const Tensor& w, const QuantConfig& config);

int64_t group_count(const std::vector<int64_t>& shape, int64_t group_size);

}  // namespace quant
}  // namespace bitforge
