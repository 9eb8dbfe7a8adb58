#include "bitforge/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "bitforge/checkpoint.hpp"
#include "bitforge/clip.hpp"
#include "bitforge/divergence.hpp"
#include "bitforge/model.hpp"
#include "bitforge/quant.hpp"
#include "bitforge/train.hpp"

namespace bitforge {
namespace pipeline {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

const json& require(const json& options, const char* key) {
    if (!options.contains(key)) fail(ErrorKind::config, "missing config key '", key, "'");
    return options.at(key);
}

std::string require_str(const json& options, const char* key) {
    const json& v = require(options, key);
    if (!v.is_string()) fail(ErrorKind::config, "config key '", key, "' must be a string");
    return v.get<std::string>();
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::io, "cannot open '", path, "'");
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::io, "cannot open '", path, "' for writing");
    f << text;
    if (!f) fail(ErrorKind::io, "write failed for '", path, "'");
}

std::vector<int32_t> load_corpus(const std::string& path) {
    std::vector<int32_t> tokens = data::tokenize_bytes(read_text_file(path));
    if (tokens.empty()) fail(ErrorKind::data, "corpus '", path, "' is empty");
    return tokens;
}

// evenly spaced calibration windows over a token stream
std::vector<std::vector<int32_t>> calib_windows_from_corpus(const std::vector<int32_t>& corpus,
                                                            int64_t window, int64_t count) {
    if (static_cast<int64_t>(corpus.size()) < window)
        fail(ErrorKind::contract, "calibration corpus shorter than one window");
    std::vector<std::vector<int32_t>> out;
    out.reserve(static_cast<size_t>(count));
    const int64_t span = static_cast<int64_t>(corpus.size()) - window;
    for (int64_t i = 0; i < count; ++i) {
        const int64_t off = count > 1 ? i * span / (count - 1) : 0;
        out.emplace_back(corpus.begin() + off, corpus.begin() + off + window);
    }
    return out;
}

model::ModelConfig model_config_from_options(const json& options, uint64_t seed) {
    model::ModelConfig c;
    if (options.contains("model")) {
        const json& m = options["model"];
        c.vocab_size = m.value("vocab_size", c.vocab_size);
        c.d_model = m.value("d_model", c.d_model);
        c.n_layers = m.value("n_layers", c.n_layers);
        c.n_heads = m.value("n_heads", c.n_heads);
        c.max_seq_len = m.value("max_seq_len", c.max_seq_len);
        c.ff_mult = m.value("ff_mult", c.ff_mult);
    }
    c.seed = seed;
    c.validate();
    return c;
}

quant::QuantConfig quant_config_from_options(const json& options) {
    const int bits = options.value("bits", 2);
    quant::QuantConfig c = quant::default_config_for_bits(bits, options.value("group_size", 128));
    if (options.contains("format"))
        c.format = quant::format_from_name(options["format"].get<std::string>());
    c.quantize_output_head = options.value("quantize_head", false);
    c.validate();
    return c;
}

train::TrainConfig train_config_from_options(const json& options, uint64_t seed) {
    train::TrainConfig c;
    c.learning_rate = options.value("learning_rate", c.learning_rate);
    c.weight_decay = options.value("weight_decay", c.weight_decay);
    c.beta1 = options.value("beta1", c.beta1);
    c.beta2 = options.value("beta2", c.beta2);
    c.steps = options.value("steps", c.steps);
    c.batch_size = options.value("batch_size", c.batch_size);
    c.max_len = options.value("max_len", c.max_len);
    c.sample_temperature = options.value("temperature", c.sample_temperature);
    c.eval_interval = options.value("eval_interval", c.eval_interval);
    c.eval_window = options.value("eval_window", c.eval_window);
    c.seed = seed;

    if (options.value("quant", true)) c.quant = quant_config_from_options(options);

    c.objective.kind = distill::objective_from_name(options.value("objective", "cakld"));
    if (options.contains("gamma")) {
        c.objective.gamma = options["gamma"].get<double>();
        c.estimate_gamma = false;
    }
    c.gamma_batches = options.value("gamma_batches", 10);

    c.clip_init = options.value("clip", true);
    c.clip_search.grid_steps = options.value("grid_steps", c.clip_search.grid_steps);
    c.clip_search.shrink = options.value("shrink", c.clip_search.shrink);
    c.clip_search.joint = options.value("joint_search", c.clip_search.joint);
    c.clip_search.row_cap = options.value("row_cap", c.clip_search.row_cap);

    c.ce_mix_weight = options.value("ce_mix_weight", c.ce_mix_weight);
    c.grad_clip_norm = options.value("grad_clip_norm", c.grad_clip_norm);
    c.validate();
    return c;
}

json timings_json(double data_gen_s, double quant_init_s, double qat_s, double total_s) {
    return {{"data_gen_s", data_gen_s},
            {"quant_init_s", quant_init_s},
            {"qat_s", qat_s},
            {"total_s", total_s}};
}

json make_manifest(const std::string& command, const json& resolved, uint64_t seed,
                   const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                   const json& timings, const json& summary = json::object()) {
    return {{"command", command}, {"config", resolved}, {"seed", seed},
            {"inputs", inputs},   {"outputs", outputs}, {"timings", timings},
            {"summary", summary}};
}

void write_manifest(const std::string& primary_out, const json& manifest) {
    write_text_file(primary_out + ".manifest.json", manifest.dump(2) + "\n");
}

model::Model load_model(const std::string& path) {
    return io::load_checkpoint(path).to_model();
}

std::string loss_csv(const std::vector<double>& history) {
    std::ostringstream os;
    os.precision(17);
    os << "step,loss\n";
    for (size_t i = 0; i < history.size(); ++i) os << (i + 1) << "," << history[i] << "\n";
    return os.str();
}

std::vector<std::vector<int32_t>> prompts_from_options(const json& options) {
    if (options.contains("prompts")) {
        const std::string text = read_text_file(options["prompts"].get<std::string>());
        std::vector<std::vector<int32_t>> prompts;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line))
            if (!line.empty()) prompts.push_back(data::tokenize_bytes(line));
        if (prompts.empty()) fail(ErrorKind::data, "prompts file has no non-empty lines");
        return prompts;
    }
    // derive prompts from corpus windows: the prompt part of each y_g record
    const std::vector<int32_t> corpus = load_corpus(require_str(options, "corpus"));
    const int64_t prompt_len = options.value("prompt_len", 32);
    const int64_t response_len = options.value("response_len", 64);
    const int64_t count = options.value("count", 128);
    data::Dataset gt = data::ground_truth_from_corpus(corpus, prompt_len, response_len, count);
    std::vector<std::vector<int32_t>> prompts;
    prompts.reserve(gt.records.size());
    for (const data::Record& r : gt.records) prompts.push_back(r.prompt);
    return prompts;
}

}  // namespace

uint64_t resolve_seed(const json& options) {
    if (options.contains("seed")) return options["seed"].get<uint64_t>();
    if (const char* env = std::getenv("BITFORGE_SEED")) {
        try {
            return std::stoull(env);
        } catch (...) {
            fail(ErrorKind::config, "BITFORGE_SEED is not a valid integer: '", env, "'");
        }
    }
    return 0;
}

json merge_with_config_file(const json& options) {
    if (!options.contains("config")) return options;
    const std::string path = options["config"].get<std::string>();
    json merged;
    try {
        merged = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        fail(ErrorKind::format, "config '", path, "' is not valid JSON (", e.what(), ")");
    }
    for (const auto& [key, value] : options.items())
        if (key != "config") merged[key] = value;  // flags win over the file
    return merged;
}

json run_pretrain(const json& raw_options) {
    const auto t0 = Clock::now();
    const json options = merge_with_config_file(raw_options);
    const uint64_t seed = resolve_seed(options);
    const std::string corpus_path = require_str(options, "corpus");
    const std::string out = require_str(options, "out");

    const std::vector<int32_t> corpus = load_corpus(corpus_path);
    model::ModelConfig mc = model_config_from_options(options, seed);
    model::Model m(mc);

    train::PretrainConfig pc;
    pc.steps = options.value("steps", pc.steps);
    pc.batch_size = options.value("batch_size", pc.batch_size);
    pc.seq_len = options.value("seq_len", pc.seq_len);
    pc.learning_rate = options.value("learning_rate", pc.learning_rate);
    pc.weight_decay = options.value("weight_decay", pc.weight_decay);
    pc.seed = seed;
    const std::vector<double> history = train::pretrain(m, corpus, pc);

    json extra = {{"pretrain_loss_first", history.front()},
                  {"pretrain_loss_last", history.back()},
                  {"pretrain_steps", pc.steps}};
    io::save_model_checkpoint(out, m, extra);
    io::load_checkpoint(out);  // validate what we wrote

    json resolved = options;
    resolved["model"] = io::model_config_to_json(mc);
    json manifest = make_manifest(
        "pretrain", resolved, seed, {corpus_path}, {out},
        timings_json(0.0, 0.0, seconds_since(t0), seconds_since(t0)),
        {{"loss_first", history.front()}, {"loss_last", history.back()}});
    write_manifest(out, manifest);
    return manifest;
}

json run_gen_data(const json& raw_options) {
    const auto t0 = Clock::now();
    const json options = merge_with_config_file(raw_options);
    const uint64_t seed = resolve_seed(options);
    const std::string out = require_str(options, "out");
    const std::string source = options.value("source", "teacher");

    data::Dataset ds;
    int64_t skipped = 0;
    std::vector<std::string> inputs;
    if (source == "ground_truth") {
        const std::string corpus_path = require_str(options, "corpus");
        inputs.push_back(corpus_path);
        const std::vector<int32_t> corpus = load_corpus(corpus_path);
        ds = data::ground_truth_from_corpus(corpus, options.value("prompt_len", 32),
                                            options.value("response_len", 64),
                                            options.value("count", 128));
    } else {
        const std::string ckpt = require_str(options, "ckpt");
        inputs.push_back(ckpt);
        const model::Model generator = load_model(ckpt);
        const std::vector<std::vector<int32_t>> prompts = prompts_from_options(options);
        const data::Source tag = source == "student" ? data::Source::student_gen
                                                     : data::Source::teacher_gen;
        ds = train::generate_dataset(generator, prompts, options.value("temperature", 0.7),
                                     options.value("max_new", 64), seed, tag, &skipped);
    }
    io::save_dataset(out, ds);
    io::load_dataset(out);  // validate
    std::vector<std::string> outputs{out};

    json summary = {{"records", ds.size()}, {"skipped", skipped}};
    if (options.value("report", false)) {
        const std::string report_ckpt =
            options.contains("report_ckpt") ? options["report_ckpt"].get<std::string>()
                                            : require_str(options, "ckpt");
        const model::Model scorer = load_model(report_ckpt);
        distill::TokenScoreReport ce = distill::per_token_ce_report(scorer, ds);
        write_text_file(out + ".ce.csv", ce.to_csv("cross_entropy"));
        outputs.push_back(out + ".ce.csv");
        distill::TokenScoreReport conf = distill::confidence_report(scorer, ds);
        write_text_file(out + ".confidence.csv", conf.to_csv("probability"));
        outputs.push_back(out + ".confidence.csv");
        summary["ce_mean"] = ce.mean;
        summary["ce_variance"] = ce.variance;
        summary["confidence_mean"] = conf.mean;
        summary["confidence_variance"] = conf.variance;
    }

    json manifest =
        make_manifest("gen-data", options, seed, inputs, outputs,
                      timings_json(seconds_since(t0), 0.0, 0.0, seconds_since(t0)), summary);
    write_manifest(out, manifest);
    return manifest;
}

json run_quantize(const json& raw_options) {
    const auto t0 = Clock::now();
    const json options = merge_with_config_file(raw_options);
    const uint64_t seed = resolve_seed(options);
    const std::string ckpt_path = require_str(options, "ckpt");
    const std::string out = require_str(options, "out");

    model::Model m = load_model(ckpt_path);
    const quant::QuantConfig qc = quant_config_from_options(options);
    const bool do_clip = options.value("clip", true);

    std::vector<std::string> inputs{ckpt_path};
    std::vector<io::ClipBoundsEntry> bounds;
    json layer_report = json::array();
    double quant_init_s = 0.0;

    if (do_clip) {
        const auto clip_t0 = Clock::now();
        const std::string calib_path = require_str(options, "calib");
        inputs.push_back(calib_path);
        const std::vector<int32_t> calib = load_corpus(calib_path);
        auto windows = calib_windows_from_corpus(
            calib, std::min<int64_t>(options.value("calib_window", 64), m.config().max_seq_len),
            options.value("calib_windows", 16));
        std::vector<data::Record> records;
        for (auto& w : windows) {
            data::Record rec;
            rec.prompt.assign(w.begin(), w.begin() + 1);
            rec.response.assign(w.begin() + 1, w.end());
            records.push_back(std::move(rec));
        }
        std::vector<data::TokenBatch> batches;
        for (size_t off = 0; off < records.size(); off += 8) {
            const size_t end = std::min(records.size(), off + 8);
            batches.push_back(
                data::make_batch({records.data() + off, end - off}, m.config().max_seq_len));
        }
        clip::ClipSearchConfig sc;
        sc.grid_steps = options.value("grid_steps", sc.grid_steps);
        sc.shrink = options.value("shrink", sc.shrink);
        sc.joint = options.value("joint_search", sc.joint);
        sc.row_cap = options.value("row_cap", sc.row_cap);
        clip::CalibCache cache = clip::capture_activations(
            m, batches, m.quantized_param_names(qc.quantize_output_head), sc.row_cap);
        for (const clip::SearchResult& r : clip::clip_init_model(m, cache, qc, sc)) {
            bounds.push_back({r.bounds.layer_id, r.bounds.alpha, r.bounds.beta});
            layer_report.push_back({{"layer", r.bounds.layer_id},
                                    {"alpha", r.bounds.alpha},
                                    {"beta", r.bounds.beta},
                                    {"objective", r.objective},
                                    {"unclipped_objective", r.unclipped_objective}});
        }
        quant_init_s = seconds_since(clip_t0);
    }

    std::vector<std::pair<std::string, quant::QuantizedTensor>> quantized;
    json error_report = json::array();
    double total_mse = 0.0;
    int64_t total_elems = 0;
    for (const std::string& name : m.quantized_param_names(qc.quantize_output_head)) {
        TensorPtr w = m.param(name);
        quantized.emplace_back(name, quant::quantize_tensor(*w, qc));
        quant::QuantErrorReport rep = quant::quant_error_report(*w, qc);
        error_report.push_back(
            {{"layer", name}, {"mse", rep.mse}, {"max_abs_err", rep.max_abs_err}});
        total_mse += rep.mse * static_cast<double>(w->numel());
        total_elems += w->numel();
    }

    io::save_quantized_checkpoint(out, m, quantized, qc, bounds,
                                  {{"source_checkpoint", ckpt_path}});
    io::load_checkpoint(out);  // validate
    const std::string report_path = out + ".report.json";
    json report = {{"quant_config", io::quant_config_to_json(qc)},
                   {"clip", do_clip},
                   {"layers", error_report},
                   {"clip_search", layer_report},
                   {"mean_weight_mse", total_elems ? total_mse / static_cast<double>(total_elems)
                                                   : 0.0}};
    write_text_file(report_path, report.dump(2) + "\n");

    json manifest = make_manifest(
        "quantize", options, seed, inputs, {out, report_path},
        timings_json(0.0, quant_init_s, 0.0, seconds_since(t0)),
        {{"mean_weight_mse", report["mean_weight_mse"]}});
    write_manifest(out, manifest);
    return manifest;
}

json run_train(const json& raw_options) {
    const auto t0 = Clock::now();
    const json options = merge_with_config_file(raw_options);
    const uint64_t seed = resolve_seed(options);
    const std::string teacher_path = require_str(options, "teacher");
    const std::string out = require_str(options, "out");

    const model::Model teacher = load_model(teacher_path);
    std::vector<std::string> inputs{teacher_path};

    data::Dataset ds;
    double data_gen_s = 0.0;
    if (options.contains("dataset_mix")) {
        const auto mix_t0 = Clock::now();
        std::vector<data::Dataset> parts;
        std::vector<double> weights;
        for (const auto& part : options["dataset_mix"]) {
            const std::string path = part.at("path").get<std::string>();
            inputs.push_back(path);
            parts.push_back(io::load_dataset(path));
            weights.push_back(part.value("weight", 1.0));
        }
        ds = data::mix_datasets(parts, weights, seed);
        data_gen_s = seconds_since(mix_t0);
    } else {
        const std::string dataset_path = require_str(options, "dataset");
        inputs.push_back(dataset_path);
        ds = io::load_dataset(dataset_path);
    }
    if (ds.empty()) fail(ErrorKind::data, "training dataset is empty");

    train::TrainConfig tc = train_config_from_options(options, seed);

    std::vector<std::vector<int32_t>> calib;
    if (tc.quant && tc.clip_init) {
        const std::string calib_path = require_str(options, "calib");
        inputs.push_back(calib_path);
        const std::vector<int32_t> calib_tokens = load_corpus(calib_path);
        calib = calib_windows_from_corpus(
            calib_tokens,
            std::min<int64_t>(options.value("calib_window", 64), teacher.config().max_seq_len),
            options.value("calib_windows", 16));
    }

    std::vector<int32_t> eval_tokens;
    if (options.contains("eval_corpus")) {
        inputs.push_back(options["eval_corpus"].get<std::string>());
        eval_tokens = load_corpus(options["eval_corpus"].get<std::string>());
    }

    train::TrainResult res = train::qat_train(teacher, ds, tc, calib, eval_tokens);

    const std::string loss_path = out + ".loss.csv";
    write_text_file(loss_path, loss_csv(res.loss_history));

    if (res.aborted) {
        // partial history is on disk; surface the abort as a failure
        fail(ErrorKind::numeric, "training aborted: ", res.abort_reason, " (loss history in '",
             loss_path, "')");
    }

    std::vector<io::ClipBoundsEntry> bounds;
    for (const clip::SearchResult& r : res.clip_results)
        bounds.push_back({r.bounds.layer_id, r.bounds.alpha, r.bounds.beta});

    json run_echo = options;
    run_echo["resolved_learning_rate"] = tc.learning_rate;
    run_echo["resolved_gamma"] = res.gamma_used;
    if (tc.quant) {
        io::save_quantized_checkpoint(out, res.student, res.quantized, *tc.quant, bounds,
                                      run_echo);
    } else {
        io::save_model_checkpoint(out, res.student, run_echo);
    }
    io::load_checkpoint(out);  // validate

    json eval_history = json::array();
    for (const auto& [step, ppl] : res.eval_history)
        eval_history.push_back({{"step", step}, {"ppl", ppl}});

    json summary = {{"loss_first", res.loss_history.front()},
                    {"loss_last", res.loss_history.back()},
                    {"start_ppl", res.start_ppl},
                    {"end_ppl", res.end_ppl},
                    {"gamma", res.gamma_used},
                    {"grad_clip_events", res.grad_clip_events},
                    {"eval_history", eval_history}};
    json resolved = options;
    resolved["learning_rate"] = tc.learning_rate;
    json manifest = make_manifest(
        "train", resolved, seed, inputs, {out, loss_path},
        timings_json(data_gen_s, res.quant_init_seconds, res.qat_seconds, seconds_since(t0)),
        summary);
    write_manifest(out, manifest);
    return manifest;
}

json run_eval(const json& raw_options) {
    const auto t0 = Clock::now();
    const json options = merge_with_config_file(raw_options);
    const uint64_t seed = resolve_seed(options);
    const std::string ckpt_path = require_str(options, "ckpt");
    const std::string corpus_path = require_str(options, "corpus");

    io::Checkpoint ck = io::load_checkpoint(ckpt_path);
    const model::Model m = ck.to_model();
    const std::vector<int32_t> tokens = load_corpus(corpus_path);
    const int64_t window = options.value("window", 64);
    const double ppl = model::perplexity(m, tokens, window, options.value("batch_windows", 8));

    json summary = {{"ppl", ppl},
                    {"token_count", tokens.size()},
                    {"window", window},
                    {"checkpoint_kind", ck.kind}};
    const std::string out =
        options.contains("out") ? options["out"].get<std::string>() : ckpt_path + ".eval.json";
    write_text_file(out, summary.dump(2) + "\n");
    json manifest = make_manifest("eval", options, seed, {ckpt_path, corpus_path}, {out},
                                  timings_json(0.0, 0.0, 0.0, seconds_since(t0)), summary);
    write_manifest(out, manifest);
    return manifest;
}

json run_demo_mixture(const json& raw_options) {
    const auto t0 = Clock::now();
    const json options = merge_with_config_file(raw_options);
    const uint64_t seed = resolve_seed(options);
    const std::string out = require_str(options, "out");

    distill::GaussianMixture mix;
    if (options.contains("mixture")) {
        const json& mj = options["mixture"];
        mix.weights = mj.at("weights").get<std::vector<double>>();
        mix.means = mj.at("means").get<std::vector<double>>();
        mix.sigmas = mj.at("sigmas").get<std::vector<double>>();
    } else {
        mix.weights = {0.5, 0.5};
        mix.means = {-2.0, 2.0};
        mix.sigmas = {0.5, 0.5};
    }
    mix.validate();

    const double gamma = options.value("gamma", 0.5);
    const double mu0 = options.value("mu0", 1.0);
    const double sigma0 = options.value("sigma0", 1.0);
    const int64_t steps = options.value("steps", 2000);

    std::vector<std::string> names;
    const std::string objective = options.value("objective", "all");
    if (objective == "all") names = {"fkl", "rkl", "jsd", "cakld"};
    else names = {objective};

    auto out_path_for = [&](const std::string& name) {
        if (names.size() == 1) return out;
        const size_t dot = out.rfind('.');
        if (dot == std::string::npos) return out + "." + name;
        return out.substr(0, dot) + "." + name + out.substr(dot);
    };

    std::vector<std::string> outputs;
    json finals = json::object();
    for (const std::string& name : names) {
        distill::DivergenceSpec spec{distill::objective_from_name(name), gamma};
        distill::DemoResult res = distill::fit_gaussian_demo(mix, spec, mu0, sigma0, steps);
        std::ostringstream csv;
        csv.precision(17);
        csv << "step,mu,sigma,divergence\n";
        for (const distill::DemoStep& s : res.trajectory)
            csv << s.step << "," << s.mu << "," << s.sigma << "," << s.divergence << "\n";
        const std::string path = out_path_for(name);
        write_text_file(path, csv.str());
        outputs.push_back(path);
        finals[name] = {{"mu", res.final_mu},
                        {"sigma", res.final_sigma},
                        {"divergence", res.final_divergence}};
    }

    json manifest = make_manifest("demo-mixture", options, seed, {}, outputs,
                                  timings_json(0.0, 0.0, 0.0, seconds_since(t0)), finals);
    write_manifest(out, manifest);
    return manifest;
}

json run_compare(const json& raw_options) {
    const auto t0 = Clock::now();
    const json options = merge_with_config_file(raw_options);
    const uint64_t seed = resolve_seed(options);
    const std::string teacher_path = require_str(options, "teacher");
    const std::string dataset_path = require_str(options, "dataset");
    const std::string eval_path = require_str(options, "eval_corpus");
    const std::string out = require_str(options, "out");

    const model::Model teacher = load_model(teacher_path);
    const data::Dataset ds = io::load_dataset(dataset_path);
    const std::vector<int32_t> eval_tokens = load_corpus(eval_path);

    json variant_spec = options.contains("variants") ? options["variants"] : json::array();
    if (variant_spec.empty()) {
        // asym/sym x clip/no-clip matrix at 2-bit
        for (const char* fmt : {"int_sym", "int_asym"})
            for (bool clip_on : {false, true})
                variant_spec.push_back({{"name", std::string(fmt) + (clip_on ? "/clip" : "/no-clip")},
                                        {"format", fmt},
                                        {"bits", 2},
                                        {"clip", clip_on}});
    }

    std::vector<train::PipelineVariant> variants;
    bool any_clip = false;
    for (const auto& v : variant_spec) {
        json vopt = options;
        for (const auto& [key, value] : v.items())
            if (key != "name") vopt[key] = value;
        train::PipelineVariant pv;
        pv.name = v.value("name", std::string("variant") + std::to_string(variants.size()));
        pv.config = train_config_from_options(vopt, seed);
        any_clip = any_clip || (pv.config.quant && pv.config.clip_init);
        variants.push_back(std::move(pv));
    }

    std::vector<std::vector<int32_t>> calib;
    std::vector<std::string> inputs{teacher_path, dataset_path, eval_path};
    if (any_clip) {
        const std::string calib_path = require_str(options, "calib");
        inputs.push_back(calib_path);
        calib = calib_windows_from_corpus(
            load_corpus(calib_path),
            std::min<int64_t>(options.value("calib_window", 64), teacher.config().max_seq_len),
            options.value("calib_windows", 16));
    }

    train::PipelineReport report =
        train::evaluate_pipeline(teacher, ds, variants, calib, eval_tokens);
    write_text_file(out, report.to_csv());

    json rows = json::array();
    double quant_init_total = 0.0, qat_total = 0.0;
    for (const train::PipelineRow& r : report.rows) {
        rows.push_back({{"variant", r.name},
                        {"start_ppl", r.start_ppl},
                        {"end_ppl", r.end_ppl},
                        {"wall_clock", r.wall_clock_s},
                        {"aborted", r.aborted}});
        quant_init_total += r.quant_init_s;
        qat_total += r.qat_s;
    }

    json manifest = make_manifest("compare", options, seed, inputs, {out},
                                  timings_json(0.0, quant_init_total, qat_total,
                                               seconds_since(t0)),
                                  {{"rows", rows}});
    write_manifest(out, manifest);
    return manifest;
}

}  // namespace pipeline
}  // namespace bitforge
