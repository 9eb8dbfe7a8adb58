#include "bitforge/bitforge.h"

#include <cstring>
#include <string>

#include <json.hpp>

#include "bitforge/checkpoint.hpp"
#include "bitforge/dataset.hpp"
#include "bitforge/model.hpp"
#include "bitforge/pipeline.hpp"
#include "bitforge/quant.hpp"

using namespace bitforge;

struct bf_model {
    model::Model m;
};

struct bf_dataset {
    data::Dataset ds;
};

namespace {

thread_local std::string g_last_error = "no error";

bf_status status_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return BF_ERR_CONFIG;
        case ErrorKind::shape:
        case ErrorKind::contract: return BF_ERR_INVALID_ARG;
        case ErrorKind::data: return BF_ERR_DATA;
        case ErrorKind::lookup: return BF_ERR_DATA;
        case ErrorKind::io: return BF_ERR_IO;
        case ErrorKind::format: return BF_ERR_FORMAT;
        case ErrorKind::numeric: return BF_ERR_NUMERIC;
    }
    return BF_ERR_RUNTIME;
}

template <typename Fn>
bf_status guarded(Fn&& fn) {
    try {
        fn();
        return BF_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_for(e.kind());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return BF_ERR_RUNTIME;
    } catch (...) {
        g_last_error = "unknown error";
        return BF_ERR_RUNTIME;
    }
}

bf_status require_arg(bool ok, const char* what) {
    if (ok) return BF_OK;
    g_last_error = std::string("invalid argument: ") + what;
    return BF_ERR_INVALID_ARG;
}

char* dup_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

using CommandFn = nlohmann::json (*)(const nlohmann::json&);

bf_status run_command(CommandFn fn, const char* options_json, char** manifest_json) {
    if (bf_status s = require_arg(options_json != nullptr, "options_json is NULL"); s != BF_OK)
        return s;
    return guarded([&] {
        nlohmann::json options;
        try {
            options = nlohmann::json::parse(options_json);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::config, "options are not valid JSON: ", e.what());
        }
        nlohmann::json manifest = fn(options);
        if (manifest_json) *manifest_json = dup_string(manifest.dump());
    });
}

}  // namespace

extern "C" {

const char* bf_version(void) { return "0.1.0"; }

const char* bf_last_error(void) { return g_last_error.c_str(); }

void bf_string_free(char* s) { delete[] s; }

bf_status bf_model_load(const char* path, bf_model** out) {
    if (bf_status s = require_arg(path && out, "path/out"); s != BF_OK) return s;
    return guarded([&] {
        auto* handle = new bf_model{io::load_checkpoint(path).to_model()};
        *out = handle;
    });
}

bf_status bf_model_save(const bf_model* m, const char* path) {
    if (bf_status s = require_arg(m && path, "model/path"); s != BF_OK) return s;
    return guarded([&] { io::save_model_checkpoint(path, m->m); });
}

void bf_model_free(bf_model* m) { delete m; }

bf_status bf_model_param_count(const bf_model* m, uint64_t* out) {
    if (bf_status s = require_arg(m && out, "model/out"); s != BF_OK) return s;
    return guarded([&] { *out = static_cast<uint64_t>(m->m.param_count()); });
}

bf_status bf_model_vocab_size(const bf_model* m, int64_t* out) {
    if (bf_status s = require_arg(m && out, "model/out"); s != BF_OK) return s;
    return guarded([&] { *out = m->m.config().vocab_size; });
}

bf_status bf_model_sample(const bf_model* m, const int32_t* prompt, size_t prompt_len,
                          double temperature, int64_t max_new, uint64_t seed,
                          int32_t* out_tokens, size_t* out_len) {
    if (bf_status s = require_arg(m && prompt && out_tokens && out_len, "model/prompt/out");
        s != BF_OK)
        return s;
    return guarded([&] {
        std::vector<int32_t> p(prompt, prompt + prompt_len);
        std::vector<int32_t> generated = model::sample(m->m, p, temperature, max_new, seed);
        std::memcpy(out_tokens, generated.data(), generated.size() * sizeof(int32_t));
        *out_len = generated.size();
    });
}

bf_status bf_model_perplexity(const bf_model* m, const char* text, size_t text_len,
                              int64_t window, double* out_ppl) {
    if (bf_status s = require_arg(m && text && out_ppl, "model/text/out"); s != BF_OK) return s;
    return guarded([&] {
        std::vector<int32_t> tokens = data::tokenize_bytes({text, text_len});
        *out_ppl = model::perplexity(m->m, tokens, window);
    });
}

bf_status bf_dataset_load(const char* path, bf_dataset** out) {
    if (bf_status s = require_arg(path && out, "path/out"); s != BF_OK) return s;
    return guarded([&] { *out = new bf_dataset{io::load_dataset(path)}; });
}

bf_status bf_dataset_save(const bf_dataset* ds, const char* path) {
    if (bf_status s = require_arg(ds && path, "dataset/path"); s != BF_OK) return s;
    return guarded([&] { io::save_dataset(path, ds->ds); });
}

void bf_dataset_free(bf_dataset* ds) { delete ds; }

bf_status bf_dataset_size(const bf_dataset* ds, uint64_t* out) {
    if (bf_status s = require_arg(ds && out, "dataset/out"); s != BF_OK) return s;
    *out = ds->ds.size();
    return BF_OK;
}

bf_status bf_fake_quant(const double* values, int64_t rows, int64_t cols, int bits,
                        const char* format, int64_t group_size, double* out, double* out_mse) {
    if (bf_status s = require_arg(values && format && out && rows > 0 && cols > 0,
                                  "values/format/out/extents");
        s != BF_OK)
        return s;
    return guarded([&] {
        quant::QuantConfig cfg;
        cfg.bits = bits;
        cfg.format = quant::format_from_name(format);
        cfg.group_size = group_size;
        cfg.validate();
        Tensor w({rows, cols}, std::vector<double>(values, values + rows * cols));
        Tensor dq = quant::dequantize(quant::quantize_tensor(w, cfg));
        if (out_mse) {
            double sse = 0.0;
            for (int64_t i = 0; i < w.numel(); ++i) {
                const double e = dq[i] - w[i];
                sse += e * e;
            }
            *out_mse = sse / static_cast<double>(w.numel());
        }
        std::memcpy(out, dq.values().data(), static_cast<size_t>(dq.numel()) * sizeof(double));
    });
}

bf_status bf_cmd_pretrain(const char* options_json, char** manifest_json) {
    return run_command(&pipeline::run_pretrain, options_json, manifest_json);
}

bf_status bf_cmd_gen_data(const char* options_json, char** manifest_json) {
    return run_command(&pipeline::run_gen_data, options_json, manifest_json);
}

bf_status bf_cmd_quantize(const char* options_json, char** manifest_json) {
    return run_command(&pipeline::run_quantize, options_json, manifest_json);
}

bf_status bf_cmd_train(const char* options_json, char** manifest_json) {
    return run_command(&pipeline::run_train, options_json, manifest_json);
}

bf_status bf_cmd_eval(const char* options_json, char** manifest_json) {
    return run_command(&pipeline::run_eval, options_json, manifest_json);
}

bf_status bf_cmd_demo_mixture(const char* options_json, char** manifest_json) {
    return run_command(&pipeline::run_demo_mixture, options_json, manifest_json);
}

bf_status bf_cmd_compare(const char* options_json, char** manifest_json) {
    return run_command(&pipeline::run_compare, options_json, manifest_json);
}

}  // extern "C"
