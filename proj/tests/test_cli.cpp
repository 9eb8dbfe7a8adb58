// End-to-end smoke test of the installed binary: pretrain -> gen-data ->
// quantize -> eval, checking exit codes and emitted files.
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "helpers.hpp"

using nlohmann::json;
using testutil::TempDir;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(BITFORGE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool file_exists(const std::string& path) { return std::ifstream(path).good(); }

}  // namespace

TEST_CASE("cli: full mini pipeline with exit codes and manifests") {
    TempDir dir("cli");
    const std::string corpus = dir.path("corpus.txt");
    testutil::write_file(corpus, testutil::synth_corpus(12000, 5));
    const std::string teacher = dir.path("teacher.bdck");

    // config file provides the model; flags finish the job
    const std::string cfg = dir.path("model.json");
    testutil::write_file(cfg, json{{"model",
                                    {{"vocab_size", 256},
                                     {"d_model", 32},
                                     {"n_layers", 1},
                                     {"n_heads", 2},
                                     {"max_seq_len", 48},
                                     {"ff_mult", 2}}},
                                   {"batch_size", 8},
                                   {"seq_len", 32},
                                   {"learning_rate", 2e-3}}
                             .dump());

    CHECK(run_cli("pretrain --config " + cfg + " --corpus " + corpus + " --out " + teacher +
                  " --steps 50 --seed 5") == 0);
    CHECK(file_exists(teacher));
    CHECK(file_exists(teacher + ".manifest.json"));

    const std::string ds = dir.path("ds.jsonl");
    CHECK(run_cli("gen-data --ckpt " + teacher + " --corpus " + corpus + " --out " + ds +
                  " --prompt-len 8 --count 8 --max-new 12 --seed 3") == 0);
    CHECK(file_exists(ds));

    const std::string quantized = dir.path("q.bdck");
    CHECK(run_cli("quantize --ckpt " + teacher + " --out " + quantized +
                  " --bits 2 --group-size 32 --no-clip --seed 1") == 0);
    CHECK(file_exists(quantized));
    CHECK(file_exists(quantized + ".report.json"));

    const std::string eval_json = dir.path("eval.json");
    CHECK(run_cli("eval --ckpt " + quantized + " --corpus " + corpus + " --window 32 --out " +
                  eval_json) == 0);
    std::ifstream f(eval_json);
    REQUIRE(f.good());
    json summary = json::parse(f);
    CHECK(summary["checkpoint_kind"] == "quantized_model");
    CHECK(summary["ppl"].get<double>() > 1.0);

    const std::string demo = dir.path("demo.csv");
    CHECK(run_cli("demo-mixture --out " + demo + " --objective cakld --gamma 0.5 --steps 100") ==
          0);
    CHECK(file_exists(demo));

    // failures exit non-zero: missing inputs, bad flags
    CHECK(run_cli("pretrain --out " + dir.path("x.bdck")) != 0);
    CHECK(run_cli("eval --ckpt " + dir.path("ghost.bdck") + " --corpus " + corpus) != 0);
    CHECK(run_cli("quantize --ckpt " + teacher + " --out " + dir.path("y.bdck") +
                  " --bits 7") != 0);
    CHECK(run_cli("no-such-command") != 0);
    CHECK(run_cli("--version") == 0);
}
