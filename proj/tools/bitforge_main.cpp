// bitforge CLI: thin argument parser over the shared-library C API. Every
// subcommand assembles a JSON options object from the flags that were
// actually given (flag > config file > built-in default) and hands it to the
// corresponding bf_cmd_* entry point.

#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "bitforge/bitforge.h"

namespace {

using nlohmann::json;

struct OptionSink {
    json j = json::object();

    template <typename T>
    void set(const std::string& key, const std::optional<T>& v) {
        if (v) j[key] = *v;
    }
};

int run(bf_status (*cmd)(const char*, char**), const json& options, bool print_manifest) {
    char* manifest_str = nullptr;
    const bf_status status = cmd(options.dump().c_str(), &manifest_str);
    if (status != BF_OK) {
        std::fprintf(stderr, "error: %s\n", bf_last_error());
        return static_cast<int>(status);
    }
    json manifest = json::parse(manifest_str);
    bf_string_free(manifest_str);
    if (print_manifest) {
        std::printf("%s\n", manifest.dump(2).c_str());
    } else {
        std::printf("%s ok", manifest["command"].get<std::string>().c_str());
        for (const auto& out : manifest["outputs"])
            std::printf("  %s", out.get<std::string>().c_str());
        if (manifest.contains("summary") && manifest["summary"].contains("ppl"))
            std::printf("  ppl=%.6g", manifest["summary"]["ppl"].get<double>());
        std::printf("\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bitforge: low-bit quantization-aware self-distillation for tiny LMs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(bf_version()));

    bool print_manifest = false;

    // shared option state; each subcommand only emits keys it saw
    std::optional<std::string> config, corpus, out, ckpt, teacher, dataset, prompts, calib,
        eval_corpus, format, objective, source;
    std::optional<uint64_t> seed;
    std::optional<int64_t> steps, batch_size, seq_len, group_size, grid_steps, row_cap, max_new,
        count, prompt_len, response_len, window, eval_interval, calib_windows, calib_window,
        demo_steps;
    std::optional<int> bits;
    std::optional<double> learning_rate, weight_decay, temperature, gamma, mu0, sigma0,
        ce_mix_weight, shrink;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config, "JSON config file; flags override its keys");
        cmd->add_option("--seed", seed, "run seed (falls back to BITFORGE_SEED, then 0)");
        cmd->add_flag("--manifest", print_manifest, "print the full run manifest as JSON");
    };

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "train the full-precision teacher on a corpus");
    add_common(pre);
    pre->add_option("--corpus", corpus, "training text file (byte tokens)");
    pre->add_option("--out", out, "output teacher checkpoint");
    pre->add_option("--steps", steps, "training steps");
    pre->add_option("--batch-size", batch_size, "sequences per step");
    pre->add_option("--seq-len", seq_len, "window length");
    pre->add_option("--learning-rate", learning_rate, "AdamW learning rate");
    pre->add_option("--weight-decay", weight_decay, "decoupled weight decay");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "emit a training dataset (teacher/student/corpus)");
    add_common(gen);
    gen->add_option("--ckpt", ckpt, "generator checkpoint (teacher or quantized student)");
    gen->add_option("--prompts", prompts, "prompt file, one prompt per line");
    gen->add_option("--corpus", corpus, "corpus for prompts or ground-truth records");
    gen->add_option("--out", out, "output dataset (.jsonl)");
    gen->add_option("--source", source, "teacher | student | ground_truth")
        ->check(CLI::IsMember({"teacher", "student", "ground_truth"}));
    gen->add_option("--temperature", temperature, "sampling temperature (default 0.7)");
    gen->add_option("--max-new", max_new, "response tokens per prompt");
    gen->add_option("--count", count, "record count (corpus modes)");
    gen->add_option("--prompt-len", prompt_len, "prompt tokens (corpus modes)");
    gen->add_option("--response-len", response_len, "response tokens (ground_truth)");
    bool gen_report = false;
    gen->add_flag("--report", gen_report, "also emit a per-token CE report CSV");

    // quantize
    auto* qz = app.add_subcommand("quantize", "post-training quantize a checkpoint (RTN or clip)");
    add_common(qz);
    qz->add_option("--ckpt", ckpt, "input checkpoint");
    qz->add_option("--out", out, "output quantized checkpoint");
    qz->add_option("--bits", bits, "2, 3 or 4 (default 2)");
    qz->add_option("--format", format, "nf_asym | nf_sym | int_asym | int_sym")
        ->check(CLI::IsMember({"nf_asym", "nf_sym", "int_asym", "int_sym"}));
    qz->add_option("--group-size", group_size, "quantization group size (default 128)");
    std::optional<bool> clip_flag;
    qz->add_flag("--clip,!--no-clip", clip_flag, "search asymmetric clip bounds first");
    qz->add_option("--calib", calib, "calibration text file (required with --clip)");
    qz->add_option("--grid-steps", grid_steps, "clip grid steps per side (default 32)");
    qz->add_option("--row-cap", row_cap, "calibration rows kept per layer (default 256)");
    qz->add_option("--calib-windows", calib_windows, "calibration windows (default 16)");
    qz->add_option("--calib-window", calib_window, "calibration window length (default 64)");

    // train
    auto* tr = app.add_subcommand("train", "quantization-aware self-distillation (full loop)");
    add_common(tr);
    tr->add_option("--teacher", teacher, "teacher checkpoint");
    tr->add_option("--dataset", dataset, "dataset .jsonl");
    tr->add_option("--out", out, "output quantized checkpoint");
    tr->add_option("--eval-corpus", eval_corpus, "eval text for PPL tracking");
    tr->add_option("--bits", bits, "2, 3 or 4 (default 2)");
    tr->add_option("--format", format, "quant format (default by bits)")
        ->check(CLI::IsMember({"nf_asym", "nf_sym", "int_asym", "int_sym"}));
    tr->add_option("--group-size", group_size, "group size (default 128)");
    tr->add_option("--objective", objective, "fkl | rkl | jsd | cakld (default cakld)")
        ->check(CLI::IsMember({"fkl", "rkl", "jsd", "cakld"}));
    tr->add_option("--gamma", gamma, "fixed CAKLD gamma (skips the pre-pass)");
    tr->add_option("--steps", steps, "QAT steps");
    tr->add_option("--batch-size", batch_size, "records per step");
    tr->add_option("--learning-rate", learning_rate, "AdamW learning rate (default 8e-6)");
    tr->add_option("--weight-decay", weight_decay, "decoupled weight decay (default 0)");
    tr->add_option("--eval-interval", eval_interval, "steps between PPL evals");
    tr->add_option("--ce-mix-weight", ce_mix_weight, "optional ground-truth CE share");
    std::optional<bool> train_clip_flag;
    tr->add_flag("--clip,!--no-clip", train_clip_flag, "clip-init before training");
    tr->add_option("--calib", calib, "calibration text (required with clipping)");
    tr->add_option("--grid-steps", grid_steps, "clip grid steps per side");
    tr->add_option("--row-cap", row_cap, "calibration rows per layer");
    tr->add_option("--calib-windows", calib_windows, "calibration windows");
    tr->add_option("--calib-window", calib_window, "calibration window length");

    // eval
    auto* ev = app.add_subcommand("eval", "perplexity of a checkpoint on a text file");
    add_common(ev);
    ev->add_option("--ckpt", ckpt, "model or quantized checkpoint");
    ev->add_option("--corpus", corpus, "eval text file");
    ev->add_option("--window", window, "PPL window (default 64)");
    ev->add_option("--out", out, "optional JSON summary path");

    // demo-mixture
    auto* demo = app.add_subcommand("demo-mixture",
                                    "fit a Gaussian to a mixture under each objective");
    add_common(demo);
    demo->add_option("--out", out, "output CSV (per-objective suffix when --objective all)");
    demo->add_option("--objective", objective, "fkl | rkl | jsd | cakld | all (default all)")
        ->check(CLI::IsMember({"fkl", "rkl", "jsd", "cakld", "all"}));
    demo->add_option("--gamma", gamma, "CAKLD gamma (default 0.5)");
    demo->add_option("--mu0", mu0, "initial mean");
    demo->add_option("--sigma0", sigma0, "initial stddev");
    demo->add_option("--steps", demo_steps, "optimizer steps");

    // compare
    auto* cp = app.add_subcommand("compare", "start/end PPL table across quantization variants");
    add_common(cp);
    cp->add_option("--teacher", teacher, "teacher checkpoint");
    cp->add_option("--dataset", dataset, "dataset .jsonl");
    cp->add_option("--eval-corpus", eval_corpus, "eval text file");
    cp->add_option("--calib", calib, "calibration text file");
    cp->add_option("--out", out, "output CSV");
    cp->add_option("--steps", steps, "QAT steps per variant");
    cp->add_option("--batch-size", batch_size, "records per step");
    cp->add_option("--learning-rate", learning_rate, "AdamW learning rate");
    cp->add_option("--grid-steps", grid_steps, "clip grid steps per side");
    cp->add_option("--row-cap", row_cap, "calibration rows per layer");

    CLI11_PARSE(app, argc, argv);

    OptionSink sink;
    sink.set("config", config);
    sink.set("seed", seed);
    sink.set("corpus", corpus);
    sink.set("out", out);
    sink.set("ckpt", ckpt);
    sink.set("teacher", teacher);
    sink.set("dataset", dataset);
    sink.set("prompts", prompts);
    sink.set("calib", calib);
    sink.set("eval_corpus", eval_corpus);
    sink.set("format", format);
    sink.set("source", source);
    sink.set("steps", steps);
    sink.set("batch_size", batch_size);
    sink.set("seq_len", seq_len);
    sink.set("group_size", group_size);
    sink.set("grid_steps", grid_steps);
    sink.set("row_cap", row_cap);
    sink.set("max_new", max_new);
    sink.set("count", count);
    sink.set("prompt_len", prompt_len);
    sink.set("response_len", response_len);
    sink.set("window", window);
    sink.set("eval_interval", eval_interval);
    sink.set("calib_windows", calib_windows);
    sink.set("calib_window", calib_window);
    sink.set("bits", bits);
    sink.set("learning_rate", learning_rate);
    sink.set("weight_decay", weight_decay);
    sink.set("temperature", temperature);
    sink.set("gamma", gamma);
    sink.set("mu0", mu0);
    sink.set("sigma0", sigma0);
    sink.set("ce_mix_weight", ce_mix_weight);
    sink.set("shrink", shrink);

    if (app.got_subcommand(pre)) return run(&bf_cmd_pretrain, sink.j, print_manifest);
    if (app.got_subcommand(gen)) {
        sink.set("objective", objective);
        if (gen_report) sink.j["report"] = true;
        return run(&bf_cmd_gen_data, sink.j, print_manifest);
    }
    if (app.got_subcommand(qz)) {
        sink.set("clip", clip_flag);
        return run(&bf_cmd_quantize, sink.j, print_manifest);
    }
    if (app.got_subcommand(tr)) {
        sink.set("objective", objective);
        sink.set("clip", train_clip_flag);
        return run(&bf_cmd_train, sink.j, print_manifest);
    }
    if (app.got_subcommand(ev)) return run(&bf_cmd_eval, sink.j, print_manifest);
    if (app.got_subcommand(demo)) {
        sink.set("objective", objective);
        sink.set("steps", demo_steps);
        return run(&bf_cmd_demo_mixture, sink.j, print_manifest);
    }
    if (app.got_subcommand(cp)) return run(&bf_cmd_compare, sink.j, print_manifest);
    return 1;
}
