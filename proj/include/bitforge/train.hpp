#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bitforge/clip.hpp"
#include "bitforge/dataset.hpp"
#include "bitforge/divergence.hpp"
#include "bitforge/model.hpp"
#include "bitforge/optimizer.hpp"
#include "bitforge/quant.hpp"

namespace bitforge {
namespace train {

struct TrainConfig {
    double learning_rate = 8e-6;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int64_t steps = 300;
    int64_t batch_size = 8;
    int64_t max_len = 0;  // 0: model max_seq_len

    std::optional<quant::QuantConfig> quant;  // absent: full-precision student
    distill::DivergenceSpec objective;
    data::Source data_source = data::Source::teacher_gen;
    double sample_temperature = 0.7;
    uint64_t seed = 0;
    int64_t eval_interval = 50;
    int64_t eval_window = 64;

    bool clip_init = true;  // one-shot asymmetric clipping before the loop
    clip::ClipSearchConfig clip_search;

    bool estimate_gamma = true;  // CAKLD: pre-pass instead of the configured gamma
    int gamma_batches = 10;

    double ce_mix_weight = 0.0;  // optional ground-truth CE share added to the divergence
    double grad_clip_norm = 1.0;

    void validate() const;
};

struct TrainResult {
    model::Model student;
    std::vector<std::pair<std::string, quant::QuantizedTensor>> quantized;  // final Q(w^T)
    std::vector<double> loss_history;
    std::vector<std::pair<int64_t, double>> eval_history;  // (step, quantized-student PPL)
    std::vector<clip::SearchResult> clip_results;
    double gamma_used = -1.0;  // -1 when not a CAKLD run
    double start_ppl = 0.0;    // post-init, pre-training
    double end_ppl = 0.0;
    int64_t grad_clip_events = 0;
    double quant_init_seconds = 0.0;  // clip search phase
    double qat_seconds = 0.0;         // training loop incl. gamma pre-pass
    bool aborted = false;
    std::string abort_reason;
};

// the full QAT loop: copy the teacher, clip-init, then per step fake-quant
// forward, divergence loss against the frozen teacher, backward to the
// full-precision student weights, optimizer update; final quantization at the end
TrainResult qat_train(const model::Model& teacher, const data::Dataset& dataset,
                      const TrainConfig& config,
                      const std::vector<std::vector<int32_t>>& calib_sequences,
                      const std::vector<int32_t>& eval_tokens);

struct PipelineVariant {
    std::string name;
    TrainConfig config;
};

struct PipelineRow {
    std::string name;
    double start_ppl = 0.0;
    double end_ppl = 0.0;
    double wall_clock_s = 0.0;
    double quant_init_s = 0.0;
    double qat_s = 0.0;
    bool aborted = false;
};

struct PipelineReport {
    std::vector<PipelineRow> rows;

    std::string to_csv() const;
};

PipelineReport evaluate_pipeline(const model::Model& teacher, const data::Dataset& dataset,
                                 const std::vector<PipelineVariant>& variants,
                                 const std::vector<std::vector<int32_t>>& calib_sequences,
                                 const std::vector<int32_t>& eval_tokens);

// one record per prompt, responses sampled from the generator; prompts whose
// generation comes back empty are skipped and counted
data::Dataset generate_dataset(const model::Model& generator,
                               const std::vector<std::vector<int32_t>>& prompts,
                               double temperature, int64_t max_new, uint64_t seed,
                               data::Source tag, int64_t* skipped = nullptr);

struct PretrainConfig {
    int64_t steps = 400;
    int64_t batch_size = 8;
    int64_t seq_len = 64;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    uint64_t seed = 0;
    double grad_clip_norm = 1.0;
};

// plain cross-entropy training on corpus windows; builds the toy-scale teacher
std::vector<double> pretrain(model::Model& m, const std::vector<int32_t>& corpus,
                             const PretrainConfig& config);

}  // namespace train
}  // namespace bitforge
