#include <doctest.h>

#include <fstream>

#include "bitforge/checkpoint.hpp"
#include "bitforge/divergence.hpp"
#include "bitforge/pipeline.hpp"
#include "helpers.hpp"

using namespace bitforge;
using nlohmann::json;
using testutil::TempDir;

namespace {

json mini_model_options() {
    return {{"vocab_size", 256}, {"d_model", 32}, {"n_layers", 1},
            {"n_heads", 2},      {"max_seq_len", 48}, {"ff_mult", 2}};
}

struct Workspace {
    TempDir dir{"pipeline"};
    std::string corpus_path;
    std::string eval_path;
    std::string teacher_path;

    Workspace() {
        corpus_path = dir.path("corpus.txt");
        eval_path = dir.path("eval.txt");
        testutil::write_file(corpus_path, testutil::synth_corpus(16000, 5));
        testutil::write_file(eval_path, testutil::synth_corpus(1600, 99));
        teacher_path = dir.path("teacher.bdck");
        json options = {{"corpus", corpus_path}, {"out", teacher_path},
                        {"model", mini_model_options()},
                        {"steps", 80},           {"batch_size", 8},
                        {"seq_len", 32},         {"learning_rate", 2e-3},
                        {"seed", 5}};
        pipeline::run_pretrain(options);
    }
};

Workspace& workspace() {
    static Workspace ws;
    return ws;
}

bool file_exists(const std::string& path) { return std::ifstream(path).good(); }

}  // namespace

TEST_CASE("pretrain: manifest, determinism, missing keys") {
    Workspace& ws = workspace();
    CHECK(file_exists(ws.teacher_path));
    CHECK(file_exists(ws.teacher_path + ".manifest.json"));

    io::Checkpoint ck = io::load_checkpoint(ws.teacher_path);
    CHECK(ck.kind == "model");
    CHECK(ck.extra.at("pretrain_loss_last").get<double>() <
          ck.extra.at("pretrain_loss_first").get<double>());

    // same seed reproduces the checkpoint byte-for-byte
    const std::string again = ws.dir.path("teacher2.bdck");
    pipeline::run_pretrain({{"corpus", ws.corpus_path},
                            {"out", again},
                            {"model", mini_model_options()},
                            {"steps", 80},
                            {"batch_size", 8},
                            {"seq_len", 32},
                            {"learning_rate", 2e-3},
                            {"seed", 5}});
    CHECK(testutil::file_hash(ws.teacher_path) == testutil::file_hash(again));

    // missing required key is named; missing corpus file is an io error
    try {
        pipeline::run_pretrain({{"out", ws.dir.path("x.bdck")}});
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(std::string(e.what()).find("corpus") != std::string::npos);
    }
    CHECK_THROWS_AS(pipeline::run_pretrain({{"corpus", ws.dir.path("nope.txt")},
                                            {"out", ws.dir.path("x.bdck")}}),
                    Error);
}

TEST_CASE("gen-data: teacher sampling defaults to temperature 0.7") {
    Workspace& ws = workspace();
    const std::string with_default = ws.dir.path("gen_default.jsonl");
    const std::string with_explicit = ws.dir.path("gen_explicit.jsonl");
    json base = {{"ckpt", ws.teacher_path}, {"corpus", ws.corpus_path}, {"prompt_len", 8},
                 {"count", 12},             {"max_new", 16},            {"seed", 7}};
    json a = base;
    a["out"] = with_default;
    pipeline::run_gen_data(a);
    json b = base;
    b["out"] = with_explicit;
    b["temperature"] = 0.7;
    pipeline::run_gen_data(b);
    CHECK(testutil::file_hash(with_default) == testutil::file_hash(with_explicit));

    data::Dataset ds = io::load_dataset(with_default);
    CHECK(ds.size() == 12);
    for (const auto& rec : ds.records) {
        CHECK(rec.source == data::Source::teacher_gen);
        CHECK(rec.response.size() == 16);
    }

    // temperature 0 is reproducible without a seed
    const std::string g1 = ws.dir.path("greedy1.jsonl");
    const std::string g2 = ws.dir.path("greedy2.jsonl");
    json c = base;
    c["out"] = g1;
    c["temperature"] = 0.0;
    c.erase("seed");
    pipeline::run_gen_data(c);
    c["out"] = g2;
    pipeline::run_gen_data(c);
    CHECK(testutil::file_hash(g1) == testutil::file_hash(g2));
}

TEST_CASE("gen-data: ground truth mode and the CE report") {
    Workspace& ws = workspace();
    const std::string gt_path = ws.dir.path("gt.jsonl");
    pipeline::run_gen_data({{"source", "ground_truth"},
                            {"corpus", ws.corpus_path},
                            {"out", gt_path},
                            {"prompt_len", 8},
                            {"response_len", 16},
                            {"count", 10},
                            {"seed", 1}});
    data::Dataset gt = io::load_dataset(gt_path);
    CHECK(gt.size() == 10);
    CHECK(gt.records[0].source == data::Source::ground_truth);

    const std::string rep_path = ws.dir.path("gen_rep.jsonl");
    json manifest = pipeline::run_gen_data({{"ckpt", ws.teacher_path},
                                            {"corpus", ws.corpus_path},
                                            {"out", rep_path},
                                            {"prompt_len", 8},
                                            {"count", 8},
                                            {"max_new", 12},
                                            {"seed", 2},
                                            {"report", true}});
    CHECK(file_exists(rep_path + ".ce.csv"));
    CHECK(file_exists(rep_path + ".confidence.csv"));
    CHECK(manifest["summary"].contains("ce_mean"));
    // same formula, same tokens: confidence mean matches a gamma estimate
    CHECK(manifest["summary"].contains("confidence_mean"));

    // the emitted CSV matches a fresh per-token CE report
    io::Checkpoint t = io::load_checkpoint(ws.teacher_path);
    distill::TokenScoreReport fresh =
        distill::per_token_ce_report(t.to_model(), io::load_dataset(rep_path));
    CHECK(manifest["summary"]["ce_mean"].get<double>() == doctest::Approx(fresh.mean).epsilon(1e-12));
    std::ifstream csv(rep_path + ".ce.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "seq_id,position,cross_entropy");
    size_t lines = 0;
    std::string line;
    while (std::getline(csv, line))
        if (!line.empty()) ++lines;
    CHECK(lines == fresh.entries.size());
}

TEST_CASE("quantize: format defaults by bits, clip objectives ordered") {
    Workspace& ws = workspace();
    const std::string q2 = ws.dir.path("q2.bdck");
    json manifest2 = pipeline::run_quantize({{"ckpt", ws.teacher_path},
                                             {"out", q2},
                                             {"bits", 2},
                                             {"group_size", 32},
                                             {"clip", false},
                                             {"seed", 1}});
    io::Checkpoint ck2 = io::load_checkpoint(q2);
    CHECK(ck2.quant_config->format == quant::Format::int_asym);  // 2-bit default
    CHECK(ck2.quant_config->bits == 2);
    CHECK(!ck2.quantized.empty());

    const std::string q3 = ws.dir.path("q3.bdck");
    pipeline::run_quantize({{"ckpt", ws.teacher_path},
                            {"out", q3},
                            {"bits", 3},
                            {"group_size", 32},
                            {"clip", false},
                            {"seed", 1}});
    CHECK(io::load_checkpoint(q3).quant_config->format == quant::Format::nf_asym);

    // clipped run emits both objectives per layer, searched <= unclipped
    const std::string qc = ws.dir.path("qclip.bdck");
    pipeline::run_quantize({{"ckpt", ws.teacher_path},
                            {"out", qc},
                            {"bits", 2},
                            {"group_size", 32},
                            {"clip", true},
                            {"calib", ws.corpus_path},
                            {"grid_steps", 6},
                            {"row_cap", 64},
                            {"calib_windows", 6},
                            {"seed", 1}});
    std::ifstream rep(qc + ".report.json");
    REQUIRE(rep.good());
    json report = json::parse(rep);
    REQUIRE(!report["clip_search"].empty());
    for (const auto& layer : report["clip_search"])
        CHECK(layer["objective"].get<double>() <=
              layer["unclipped_objective"].get<double>() + 1e-12);
    CHECK(io::load_checkpoint(qc).clip_bounds.size() == report["clip_search"].size());

    // clipping without calibration data is a config error naming the key
    CHECK_THROWS_AS(pipeline::run_quantize({{"ckpt", ws.teacher_path},
                                            {"out", ws.dir.path("x.bdck")},
                                            {"bits", 2},
                                            {"clip", true}}),
                    Error);
}

TEST_CASE("train: manifest echo, loss csv, eval history") {
    Workspace& ws = workspace();
    const std::string ds_path = ws.dir.path("train_ds.jsonl");
    pipeline::run_gen_data({{"ckpt", ws.teacher_path},
                            {"corpus", ws.corpus_path},
                            {"out", ds_path},
                            {"prompt_len", 8},
                            {"count", 24},
                            {"max_new", 16},
                            {"seed", 3}});

    const std::string out = ws.dir.path("student.bdck");
    json manifest = pipeline::run_train({{"teacher", ws.teacher_path},
                                         {"dataset", ds_path},
                                         {"out", out},
                                         {"eval_corpus", ws.eval_path},
                                         {"bits", 2},
                                         {"group_size", 32},
                                         {"steps", 10},
                                         {"batch_size", 4},
                                         {"learning_rate", 3e-4},
                                         {"clip", true},
                                         {"calib", ws.corpus_path},
                                         {"grid_steps", 4},
                                         {"row_cap", 48},
                                         {"calib_windows", 4},
                                         {"eval_interval", 5},
                                         {"eval_window", 32},
                                         {"seed", 11}});
    CHECK(file_exists(out));
    CHECK(file_exists(out + ".loss.csv"));
    CHECK(file_exists(out + ".manifest.json"));

    CHECK(manifest["summary"]["gamma"].get<double>() >= 0.0);
    CHECK(manifest["summary"]["gamma"].get<double>() <= 1.0);
    CHECK(manifest["summary"]["start_ppl"].get<double>() > 0.0);
    CHECK(manifest["summary"]["end_ppl"].get<double>() > 0.0);
    CHECK(manifest["timings"]["quant_init_s"].get<double>() > 0.0);
    CHECK(manifest["timings"]["qat_s"].get<double>() > 0.0);
    CHECK(manifest["timings"]["total_s"].get<double>() > 0.0);

    std::ifstream loss(out + ".loss.csv");
    std::string header;
    std::getline(loss, header);
    CHECK(header == "step,loss");
    size_t lines = 0;
    std::string line;
    while (std::getline(loss, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 10);

    io::Checkpoint ck = io::load_checkpoint(out);
    CHECK(ck.kind == "quantized_model");
    CHECK(!ck.clip_bounds.empty());

    // default learning rate is the paper's 8e-6, echoed in the manifest
    const std::string out2 = ws.dir.path("student_default_lr.bdck");
    json m2 = pipeline::run_train({{"teacher", ws.teacher_path},
                                   {"dataset", ds_path},
                                   {"out", out2},
                                   {"bits", 2},
                                   {"group_size", 32},
                                   {"steps", 2},
                                   {"batch_size", 4},
                                   {"clip", false},
                                   {"seed", 12}});
    CHECK(m2["config"]["learning_rate"].get<double>() == 8e-6);
}

TEST_CASE("train: non-finite loss aborts with partial history saved") {
    Workspace& ws = workspace();
    const std::string ds_path = ws.dir.path("abort_ds.jsonl");
    pipeline::run_gen_data({{"source", "ground_truth"},
                            {"corpus", ws.corpus_path},
                            {"out", ds_path},
                            {"prompt_len", 4},
                            {"response_len", 12},
                            {"count", 8},
                            {"seed", 4}});
    const std::string out = ws.dir.path("doomed.bdck");
    try {
        pipeline::run_train({{"teacher", ws.teacher_path},
                             {"dataset", ds_path},
                             {"out", out},
                             {"bits", 2},
                             {"group_size", 32},
                             {"steps", 40},
                             {"batch_size", 4},
                             // large enough that weight-weight products overflow;
                             // layer norm swallows anything milder
                             {"learning_rate", 1e200},
                             {"grad_clip_norm", 0.0},
                             {"clip", false},
                             {"seed", 13}});
        FAIL("expected numeric abort");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::numeric);
        CHECK(std::string(e.what()).find("aborted") != std::string::npos);
    }
    CHECK(file_exists(out + ".loss.csv"));  // partial history saved
    CHECK(!file_exists(out));               // no checkpoint claimed
}

TEST_CASE("eval: stable summary schema, accepts full and quantized checkpoints") {
    Workspace& ws = workspace();
    const std::string out = ws.dir.path("eval.json");
    json manifest = pipeline::run_eval({{"ckpt", ws.teacher_path},
                                        {"corpus", ws.eval_path},
                                        {"window", 32},
                                        {"out", out},
                                        {"seed", 0}});
    std::ifstream f(out);
    REQUIRE(f.good());
    json summary = json::parse(f);
    // golden schema: exactly these keys
    std::vector<std::string> keys;
    for (const auto& [k, v] : summary.items()) keys.push_back(k);
    CHECK(keys == std::vector<std::string>{"checkpoint_kind", "ppl", "token_count", "window"});
    CHECK(summary["checkpoint_kind"] == "model");
    CHECK(summary["ppl"].get<double>() > 1.0);

    const std::string q2 = ws.dir.path("q2.bdck");  // written by the quantize test
    if (file_exists(q2)) {
        json qm = pipeline::run_eval({{"ckpt", q2}, {"corpus", ws.eval_path}, {"window", 32}});
        CHECK(qm["summary"]["checkpoint_kind"] == "quantized_model");
        CHECK(qm["summary"]["ppl"].get<double>() > 1.0);
        // without --out, the summary and manifest land beside the checkpoint
        CHECK(file_exists(q2 + ".eval.json"));
        CHECK(file_exists(q2 + ".eval.json.manifest.json"));
    }
}

TEST_CASE("demo-mixture: csv schema and the gamma-zero reduction") {
    Workspace& ws = workspace();
    const std::string all_out = ws.dir.path("demo.csv");
    json manifest = pipeline::run_demo_mixture(
        {{"out", all_out}, {"objective", "all"}, {"steps", 150}, {"seed", 0}});
    for (const char* name : {"fkl", "rkl", "jsd", "cakld"}) {
        const std::string path = ws.dir.path(std::string("demo.") + name + ".csv");
        REQUIRE(file_exists(path));
        std::ifstream f(path);
        std::string header;
        std::getline(f, header);
        CHECK(header == "step,mu,sigma,divergence");
        CHECK(manifest["summary"].contains(name));
    }

    // cakld at gamma 0 emits exactly the fkl trajectory
    const std::string fkl_out = ws.dir.path("demo_fkl.csv");
    const std::string ca0_out = ws.dir.path("demo_ca0.csv");
    pipeline::run_demo_mixture(
        {{"out", fkl_out}, {"objective", "fkl"}, {"steps", 150}, {"seed", 0}});
    pipeline::run_demo_mixture(
        {{"out", ca0_out}, {"objective", "cakld"}, {"gamma", 0.0}, {"steps", 150}, {"seed", 0}});
    CHECK(testutil::file_hash(fkl_out) == testutil::file_hash(ca0_out));
}

TEST_CASE("compare: row per variant and phase timings") {
    Workspace& ws = workspace();
    const std::string ds_path = ws.dir.path("cmp_ds.jsonl");
    pipeline::run_gen_data({{"ckpt", ws.teacher_path},
                            {"corpus", ws.corpus_path},
                            {"out", ds_path},
                            {"prompt_len", 8},
                            {"count", 16},
                            {"max_new", 12},
                            {"seed", 6}});
    const std::string out = ws.dir.path("compare.csv");
    json variants = json::array();
    variants.push_back({{"name", "sym"}, {"format", "int_sym"}, {"bits", 2}, {"clip", false}});
    variants.push_back({{"name", "asym"}, {"format", "int_asym"}, {"bits", 2}, {"clip", false}});
    json manifest = pipeline::run_compare({{"teacher", ws.teacher_path},
                                           {"dataset", ds_path},
                                           {"eval_corpus", ws.eval_path},
                                           {"out", out},
                                           {"variants", variants},
                                           {"group_size", 32},
                                           {"steps", 4},
                                           {"batch_size", 4},
                                           {"eval_window", 32},
                                           {"eval_interval", 0},
                                           {"seed", 21}});
    REQUIRE(manifest["summary"]["rows"].size() == 2);
    std::ifstream f(out);
    std::string header;
    std::getline(f, header);
    CHECK(header == "variant,start_ppl,end_ppl,wall_clock");
    CHECK(manifest["timings"].contains("data_gen_s"));
    CHECK(manifest["timings"].contains("quant_init_s"));
    CHECK(manifest["timings"].contains("qat_s"));
    CHECK(manifest["timings"]["qat_s"].get<double>() > 0.0);

    // without an explicit variant list, the asym/sym x clip/no-clip matrix
    // at 2-bit comes out as four rows
    const std::string out4 = ws.dir.path("compare4.csv");
    json m4 = pipeline::run_compare({{"teacher", ws.teacher_path},
                                     {"dataset", ds_path},
                                     {"eval_corpus", ws.eval_path},
                                     {"calib", ws.corpus_path},
                                     {"out", out4},
                                     {"group_size", 32},
                                     {"steps", 2},
                                     {"batch_size", 4},
                                     {"grid_steps", 4},
                                     {"row_cap", 32},
                                     {"calib_windows", 4},
                                     {"eval_window", 32},
                                     {"eval_interval", 0},
                                     {"seed", 22}});
    REQUIRE(m4["summary"]["rows"].size() == 4);
    std::vector<std::string> names;
    for (const auto& row : m4["summary"]["rows"])
        names.push_back(row["variant"].get<std::string>());
    CHECK(names == std::vector<std::string>{"int_sym/no-clip", "int_sym/clip",
                                            "int_asym/no-clip", "int_asym/clip"});
    CHECK(m4["timings"]["quant_init_s"].get<double>() > 0.0);
}

TEST_CASE("seed resolution: explicit beats environment beats default") {
    Workspace& ws = workspace();
    CHECK(pipeline::resolve_seed({{"seed", 42}}) == 42);
    setenv("BITFORGE_SEED", "77", 1);
    CHECK(pipeline::resolve_seed(json::object()) == 77);
    CHECK(pipeline::resolve_seed({{"seed", 42}}) == 42);
    setenv("BITFORGE_SEED", "junk", 1);
    CHECK_THROWS_AS(pipeline::resolve_seed(json::object()), Error);
    unsetenv("BITFORGE_SEED");
    CHECK(pipeline::resolve_seed(json::object()) == 0);
    (void)ws;
}

TEST_CASE("config file merge: flags win over file keys") {
    Workspace& ws = workspace();
    const std::string cfg = ws.dir.path("cfg.json");
    testutil::write_file(cfg, R"({"steps": 99, "batch_size": 2, "seed": 1})");
    json merged = pipeline::merge_with_config_file({{"config", cfg}, {"steps", 5}});
    CHECK(merged["steps"] == 5);        // flag wins
    CHECK(merged["batch_size"] == 2);   // file fills the rest
    CHECK(merged["seed"] == 1);
    CHECK(!merged.contains("config"));

    testutil::write_file(cfg, "not json");
    CHECK_THROWS_AS(pipeline::merge_with_config_file({{"config", cfg}}), Error);
}
