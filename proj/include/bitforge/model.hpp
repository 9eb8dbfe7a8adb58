#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bitforge/graph.hpp"
#include "bitforge/quant.hpp"
#include "bitforge/tensor.hpp"

namespace bitforge {
namespace model {

struct ModelConfig {
    int64_t vocab_size = 512;
    int64_t d_model = 128;
    int64_t n_layers = 2;
    int64_t n_heads = 4;
    int64_t max_seq_len = 128;
    int64_t ff_mult = 4;
    uint64_t seed = 1;

    int64_t ff_width() const { return d_model * ff_mult; }
    void validate() const;
};

// Collects the input rows feeding selected weight matrices during a forward
// pass; each wanted name gets one [rows, in_features] entry per forward.
struct ActivationTap {
    std::vector<std::string> wanted;
    std::vector<std::pair<std::string, Tensor>> captured;

    bool wants(const std::string& name) const;
};

// Decoder-only transformer: learned token + position embeddings, pre-norm
// blocks (causal attention, GELU feed-forward), final norm, untied head.
// Attention projections and FFN matrices are the quantized set; embeddings
// and norms stay full precision (the head joins when the config asks).
class Model {
  public:
    Model() = default;
    explicit Model(const ModelConfig& config);  // deterministic init from config.seed

    static Model from_params(const ModelConfig& config,
                             std::vector<std::pair<std::string, Tensor>> params);

    Model clone() const;  // deep copy; the self-distillation student starts here

    const ModelConfig& config() const { return config_; }

    const std::vector<std::pair<std::string, TensorPtr>>& named_params() const { return params_; }
    TensorPtr param(const std::string& name) const;  // lookup error when missing
    int64_t param_count() const;

    // names of weight matrices subject to quantization, in forward order
    std::vector<std::string> quantized_param_names(bool include_head) const;

    // logits [B, L, V]; when fq is set every quantized weight passes through
    // the straight-through fake quantizer
    TensorPtr forward(Graph& g, const std::vector<int32_t>& tokens, int64_t batch, int64_t len,
                      const quant::QuantConfig* fq = nullptr, ActivationTap* tap = nullptr) const;

    // weights replaced by their dequantized values; forward on the copy
    // reproduces the fake-quant forward bit-exactly
    Model fake_quant_copy(const quant::QuantConfig& config) const;

    void zero_grads() const;
    void drop_grads() const;

  private:
    ModelConfig config_;
    std::vector<std::pair<std::string, TensorPtr>> params_;
};

std::vector<int32_t> sample(const Model& m, const std::vector<int32_t>& prompt, double temperature,
                            int64_t max_new, uint64_t seed);

// exp of mean next-token NLL over non-overlapping windows of length `window`
double perplexity(const Model& m, const std::vector<int32_t>& eval_tokens, int64_t window,
                  int64_t batch_windows = 8);

}  // namespace model
}  // namespace bitforge
