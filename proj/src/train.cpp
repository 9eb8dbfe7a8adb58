#include "bitforge/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace bitforge {
namespace train {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) fail(ErrorKind::config, "learning_rate must be > 0");
    if (steps < 1) fail(ErrorKind::config, "steps must be >= 1");
    if (batch_size < 1) fail(ErrorKind::config, "batch_size must be >= 1");
    if (sample_temperature < 0.0) fail(ErrorKind::config, "sample_temperature must be >= 0");
    if (ce_mix_weight < 0.0) fail(ErrorKind::config, "ce_mix_weight must be >= 0");
    if (quant) quant->validate();
    objective.validate();
}

namespace {

std::vector<data::TokenBatch> to_batches(const std::vector<std::vector<int32_t>>& sequences,
                                         int64_t batch_size, int64_t max_len) {
    std::vector<data::Record> records;
    records.reserve(sequences.size());
    for (const auto& seq : sequences) {
        if (seq.size() < 2) fail(ErrorKind::contract, "calib sequence shorter than 2 tokens");
        data::Record rec;
        rec.prompt.assign(seq.begin(), seq.begin() + 1);
        rec.response.assign(seq.begin() + 1, seq.end());
        records.push_back(std::move(rec));
    }
    std::vector<data::TokenBatch> batches;
    for (size_t off = 0; off < records.size(); off += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(records.size(), off + static_cast<size_t>(batch_size));
        batches.push_back(data::make_batch({records.data() + off, end - off}, max_len));
    }
    return batches;
}

double quantized_ppl(const model::Model& student, const std::optional<quant::QuantConfig>& quant,
                     const std::vector<int32_t>& eval_tokens, int64_t window) {
    if (quant) return model::perplexity(student.fake_quant_copy(*quant), eval_tokens, window);
    return model::perplexity(student, eval_tokens, window);
}

}  // namespace

TrainResult qat_train(const model::Model& teacher, const data::Dataset& dataset,
                      const TrainConfig& config,
                      const std::vector<std::vector<int32_t>>& calib_sequences,
                      const std::vector<int32_t>& eval_tokens) {
    config.validate();
    if (dataset.empty()) fail(ErrorKind::contract, "qat_train: empty dataset");
    const bool clipping = config.quant && config.clip_init;
    if (clipping && calib_sequences.empty())
        fail(ErrorKind::contract, "qat_train: clipping enabled but no calibration data");

    const int64_t max_len =
        config.max_len > 0 ? std::min(config.max_len, teacher.config().max_seq_len)
                           : teacher.config().max_seq_len;

    TrainResult res;
    res.student = teacher.clone();

    const auto init_t0 = std::chrono::steady_clock::now();
    if (clipping) {
        clip::CalibCache cache = clip::capture_activations(
            teacher, to_batches(calib_sequences, config.batch_size, max_len),
            res.student.quantized_param_names(config.quant->quantize_output_head),
            config.clip_search.row_cap);
        res.clip_results =
            clip::clip_init_model(res.student, cache, *config.quant, config.clip_search);
    }
    res.quant_init_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - init_t0).count();
    const auto qat_t0 = std::chrono::steady_clock::now();

    distill::DivergenceSpec spec = config.objective;
    if (spec.kind == distill::Objective::cakld && config.estimate_gamma) {
        spec.gamma =
            distill::estimate_gamma(teacher, dataset, config.gamma_batches, config.batch_size);
        res.gamma_used = spec.gamma;
    } else if (spec.kind == distill::Objective::cakld) {
        res.gamma_used = spec.gamma;
    }

    if (!eval_tokens.empty())
        res.start_ppl = quantized_ppl(res.student, config.quant, eval_tokens, config.eval_window);

    std::vector<TensorPtr> params;
    for (const auto& [name, t] : res.student.named_params()) params.push_back(t);
    AdamW opt(params, AdamWConfig{config.learning_rate, config.beta1, config.beta2, 1e-8,
                                  config.weight_decay});

    Rng order_rng(config.seed ^ 0x5eedbeefull);
    std::vector<size_t> perm(dataset.size());
    std::iota(perm.begin(), perm.end(), size_t{0});
    size_t cursor = perm.size();  // forces a shuffle before the first batch

    const quant::QuantConfig* fq = config.quant ? &*config.quant : nullptr;

    for (int64_t t = 1; t <= config.steps; ++t) {
        std::vector<data::Record> batch_records;
        batch_records.reserve(static_cast<size_t>(config.batch_size));
        for (int64_t k = 0; k < config.batch_size; ++k) {
            if (cursor >= perm.size()) {
                for (size_t i = perm.size(); i > 1; --i)
                    std::swap(perm[i - 1], perm[order_rng.below(i)]);
                cursor = 0;
            }
            batch_records.push_back(dataset.records[perm[cursor++]]);
        }
        data::TokenBatch tb = data::make_batch(batch_records, max_len);

        Graph teacher_g(false);
        TensorPtr teacher_logits =
            teacher.forward(teacher_g, tb.inputs, tb.batch, tb.len);

        Graph g;
        TensorPtr student_logits = res.student.forward(g, tb.inputs, tb.batch, tb.len, fq);

        distill::TokenDistBatch db;
        db.teacher_logits = std::move(*teacher_logits);
        db.student_logits = student_logits;
        db.loss_mask = Tensor({tb.batch, tb.len}, tb.mask);

        TensorPtr loss = distill::divergence(g, db, spec);
        if (config.ce_mix_weight > 0.0)
            loss = g.add(loss, g.scale(g.cross_entropy(student_logits, tb.targets, tb.mask),
                                       config.ce_mix_weight));

        const double loss_v = loss->item();
        if (!std::isfinite(loss_v)) {
            res.aborted = true;
            std::ostringstream os;
            os << "non-finite loss " << loss_v << " at step " << t;
            res.abort_reason = os.str();
            break;
        }
        res.loss_history.push_back(loss_v);

        res.student.zero_grads();
        g.backward(loss);
        if (config.grad_clip_norm > 0.0 && clip_grad_norm(params, config.grad_clip_norm))
            ++res.grad_clip_events;
        try {
            opt.step();
        } catch (const Error& e) {
            res.aborted = true;
            res.abort_reason = e.what();
            break;
        }

        if (!eval_tokens.empty() && config.eval_interval > 0 &&
            (t % config.eval_interval == 0 || t == config.steps))
            res.eval_history.emplace_back(
                t, quantized_ppl(res.student, config.quant, eval_tokens, config.eval_window));
    }

    res.qat_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - qat_t0).count();

    if (!eval_tokens.empty())
        res.end_ppl = quantized_ppl(res.student, config.quant, eval_tokens, config.eval_window);

    if (config.quant) {
        for (const std::string& name :
             res.student.quantized_param_names(config.quant->quantize_output_head))
            res.quantized.emplace_back(
                name, quant::quantize_tensor(*res.student.param(name), *config.quant));
    }
    res.student.drop_grads();
    return res;
}

std::string PipelineReport::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "variant,start_ppl,end_ppl,wall_clock\n";
    for (const PipelineRow& r : rows)
        os << r.name << "," << r.start_ppl << "," << r.end_ppl << "," << r.wall_clock_s << "\n";
    return os.str();
}

PipelineReport evaluate_pipeline(const model::Model& teacher, const data::Dataset& dataset,
                                 const std::vector<PipelineVariant>& variants,
                                 const std::vector<std::vector<int32_t>>& calib_sequences,
                                 const std::vector<int32_t>& eval_tokens) {
    PipelineReport report;
    for (const PipelineVariant& variant : variants) {
        const auto t0 = std::chrono::steady_clock::now();
        TrainResult r = qat_train(teacher, dataset, variant.config, calib_sequences, eval_tokens);
        const auto t1 = std::chrono::steady_clock::now();
        PipelineRow row;
        row.name = variant.name;
        row.start_ppl = r.start_ppl;
        row.end_ppl = r.end_ppl;
        row.aborted = r.aborted;
        row.wall_clock_s = std::chrono::duration<double>(t1 - t0).count();
        row.quant_init_s = r.quant_init_seconds;
        row.qat_s = r.qat_seconds;
        report.rows.push_back(std::move(row));
    }
    return report;
}

data::Dataset generate_dataset(const model::Model& generator,
                               const std::vector<std::vector<int32_t>>& prompts,
                               double temperature, int64_t max_new, uint64_t seed,
                               data::Source tag, int64_t* skipped) {
    if (prompts.empty()) fail(ErrorKind::contract, "generate_dataset: no prompts");
    int64_t skip_count = 0;
    data::Dataset ds;
    ds.records.reserve(prompts.size());
    for (size_t i = 0; i < prompts.size(); ++i) {
        std::vector<int32_t> response =
            model::sample(generator, prompts[i], temperature, max_new, seed + i);
        if (response.empty()) {
            ++skip_count;
            continue;
        }
        data::Record rec;
        rec.prompt = prompts[i];
        rec.response = std::move(response);
        rec.source = tag;
        ds.records.push_back(std::move(rec));
    }
    if (skipped) *skipped = skip_count;
    return ds;
}

std::vector<double> pretrain(model::Model& m, const std::vector<int32_t>& corpus,
                             const PretrainConfig& config) {
    if (config.steps < 1 || config.batch_size < 1 || config.seq_len < 2)
        fail(ErrorKind::config, "pretrain: bad steps/batch/seq_len");
    const int64_t seq = std::min(config.seq_len, m.config().max_seq_len);
    if (static_cast<int64_t>(corpus.size()) < seq + 1)
        fail(ErrorKind::contract, "pretrain: corpus shorter than one window");

    std::vector<TensorPtr> params;
    for (const auto& [name, t] : m.named_params()) params.push_back(t);
    AdamW opt(params, AdamWConfig{config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
    Rng rng(config.seed ^ 0x9a7a11ull);

    std::vector<double> history;
    history.reserve(static_cast<size_t>(config.steps));
    const int64_t span = static_cast<int64_t>(corpus.size()) - seq - 1;
    std::vector<int32_t> inputs(static_cast<size_t>(config.batch_size * seq));
    std::vector<int32_t> targets(static_cast<size_t>(config.batch_size * seq));
    std::vector<double> mask(static_cast<size_t>(config.batch_size * seq), 1.0);

    for (int64_t t = 1; t <= config.steps; ++t) {
        for (int64_t b = 0; b < config.batch_size; ++b) {
            const int64_t off = static_cast<int64_t>(rng.below(static_cast<uint64_t>(span + 1)));
            for (int64_t i = 0; i < seq; ++i) {
                inputs[static_cast<size_t>(b * seq + i)] = corpus[static_cast<size_t>(off + i)];
                targets[static_cast<size_t>(b * seq + i)] =
                    corpus[static_cast<size_t>(off + i + 1)];
            }
        }
        Graph g;
        TensorPtr logits = m.forward(g, inputs, config.batch_size, seq);
        TensorPtr loss = g.cross_entropy(logits, targets, mask);
        const double loss_v = loss->item();
        if (!std::isfinite(loss_v))
            fail(ErrorKind::numeric, "pretrain: non-finite loss at step ", t);
        history.push_back(loss_v);
        m.zero_grads();
        g.backward(loss);
        if (config.grad_clip_norm > 0.0) clip_grad_norm(params, config.grad_clip_norm);
        opt.step();
    }
    m.drop_grads();
    return history;
}

}  // namespace train
}  // namespace bitforge
