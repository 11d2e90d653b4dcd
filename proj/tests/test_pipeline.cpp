#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "brainattr/io_util.hpp"
#include "brainattr/pipeline.hpp"

using namespace brainattr;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(const std::string& out_dir) {
    RunConfig c;
    c.seed = 12;
    c.jobs = 2;
    c.paths.out_dir = out_dir;
    c.paths.corpus = out_dir + "/corpus.jsonl";
    c.paths.responses = out_dir + "/responses.bin";
    c.paths.checkpoint = out_dir + "/model.bin";
    c.model.n_layers = 3;
    c.model.hidden_size = 16;
    c.model.n_heads = 2;
    c.model.vocab_size = 256;
    c.model.max_positions = 128;
    c.model.seed = 12;
    c.train.steps = 60;
    c.train.seq_len = 16;
    c.pipeline.context_words = 8;
    c.synth.words = 160;
    c.synth.runs = 1;
    c.synth.voxels = 8;
    c.synth.noise_sigma = 0.02;
    c.attribution.tr_limit = 8;
    c.analysis.iou_draws = 25;
    c.masking.seeds = 2;
    return c;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void run_all(const RunConfig& c) {
    cmd_synth(c);
    cmd_train(c);
    cmd_embed(c);
    cmd_synth(c);  // second pass now finds the design and emits responses
    cmd_fit(c);
    cmd_attribute(c);
    cmd_analyze(c);
    cmd_mask(c);
    cmd_report(c);
}

}  // namespace

TEST_CASE("config round trip is semantically identical") {
    RunConfig c = tiny_config("somewhere");
    c.attribution.methods = {"gxi", "ig"};
    c.pipeline.thresholds = {5, 50, 95};
    const RunConfig back = RunConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
}

TEST_CASE("config validation lists every violated constraint") {
    RunConfig c = tiny_config("x");
    c.jobs = 0;
    c.folds.outer = 1;
    c.pipeline.thresholds = {50, 10};
    try {
        c.validate();
        CHECK(false);
    } catch (const config_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("jobs") != std::string::npos);
        CHECK(msg.find("folds.outer") != std::string::npos);
        CHECK(msg.find("ascending") != std::string::npos);
    }
}

TEST_CASE("unknown config fields are rejected") {
    CHECK_THROWS_AS(RunConfig::from_json(R"({"sede": 3})"), config_error);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"model": {"n_layer": 4}})"), config_error);
    CHECK_THROWS_AS(RunConfig::from_json("not json"), config_error);
}

TEST_CASE("commands raise dependency errors naming the producing command") {
    TempDir dir("ba_pipe_deps");
    const RunConfig c = tiny_config(dir.path.string());

    try {
        cmd_train(c);
        CHECK(false);
    } catch (const dependency_error& e) {
        CHECK(std::string(e.what()).find("synth") != std::string::npos);
    }
    try {
        cmd_analyze(c);
        CHECK(false);
    } catch (const dependency_error& e) {
        const std::string msg = e.what();
        const bool names_producer =
            msg.find("attribute") != std::string::npos || msg.find("synth") != std::string::npos;
        CHECK(names_producer);
    }
    try {
        cmd_fit(c);
        CHECK(false);
    } catch (const dependency_error& e) {
        CHECK(std::string(e.what()).find("synth") != std::string::npos);
    }
}

TEST_CASE("full pipeline emits all seven report tables and verifies digests") {
    TempDir dir("ba_pipe_full");
    const RunConfig c = tiny_config(dir.path.string());
    run_all(c);

    for (const char* f : {"iou.csv", "com.csv", "spread.csv", "positions.csv", "features.csv",
                          "stats.csv", "masking.csv", "summary.json"})
        CHECK(file_exists(c.report_path(f)));
    for (const char* m : {"synth", "train", "embed", "fit", "attribute", "analyze", "mask", "report"})
        CHECK(file_exists(c.manifest_path(m)));

    // Reports are non-trivial: every CSV has a header plus at least one row.
    for (const char* f : {"iou.csv", "com.csv", "spread.csv", "positions.csv", "stats.csv", "masking.csv"}) {
        const std::string body = read_file(c.report_path(f));
        CHECK(std::count(body.begin(), body.end(), '\n') >= 2);
    }
}

TEST_CASE("rerun with the same config and seed is bit-identical") {
    TempDir dir_a("ba_pipe_rerun_a");
    TempDir dir_b("ba_pipe_rerun_b");
    RunConfig a = tiny_config(dir_a.path.string());
    RunConfig b = tiny_config(dir_b.path.string());
    run_all(a);
    run_all(b);
    for (const char* f : {"iou.csv", "com.csv", "spread.csv", "positions.csv", "features.csv",
                          "stats.csv", "masking.csv", "scores.csv", "attributions.jsonl",
                          "corpus.jsonl"})
        CHECK(sha256_file_hex(a.report_path(f)) == sha256_file_hex(b.report_path(f)));
}
