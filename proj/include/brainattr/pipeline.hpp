#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brainattr/toy_lm.hpp"

namespace brainattr {

// Resolved experiment configuration; one JSON file drives every command.
struct RunConfig {
    uint64_t seed = 7;
    int jobs = 2;

    struct Paths {
        std::string out_dir = "out";
        std::string corpus = "out/corpus.jsonl";
        std::string responses = "out/responses.bin";
        std::string checkpoint = "out/model.bin";
    } paths;

    ModelConfig model;

    struct Train {
        int64_t steps = 1500;
        double learning_rate = 1e-3;
        int batch = 4;
        int seq_len = 48;
    } train;

    struct Pipeline {
        int64_t context_words = 64;  // L; the reference setting in the source data is 640
        int delay_depth = 4;         // D
        int ig_steps = 20;           // m
        std::string ig_rule = "gauss-legendre";  // or "riemann-right"
        int64_t bin_width = 16;
        std::vector<double> thresholds = {1, 2, 3, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95, 98};
    } pipeline;

    struct Folds {
        int outer = 4;
        int inner = 3;
    } folds;

    struct Synth {
        int64_t words = 400;
        int runs = 2;
        int voxels = 48;
        double noise_sigma = 0.05;
        bool planted = false;
        int signal_layer = -1;        // -1: middle layer
        double tr_duration_s = 2.0;   // 0.5 s words in a 2 s TR: four words per TR
        double word_duration_s = 0.5;
    } synth;

    struct Attribution {
        std::vector<std::string> methods = {"gxi"};
        std::string layers = "auto";  // "auto" or comma-separated ids
        int tr_stride = 1;
        int tr_limit = 0;  // 0 = no limit
    } attribution;

    struct Analysis {
        int iou_draws = 100;
        double com_threshold = 60;
        std::vector<double> position_thresholds = {10, 60, 80};
        std::vector<double> feature_thresholds = {10, 60, 80};
    } analysis;

    struct Masking {
        std::vector<double> thresholds = {1};
        int seeds = 5;
    } masking;

    int resolved_signal_layer() const {
        return synth.signal_layer >= 0 ? synth.signal_layer : model.n_layers / 2;
    }

    // Collects every violated constraint; throws config_error listing all.
    void validate() const;

    std::string to_json() const;
    static RunConfig from_json(const std::string& text);
    static RunConfig load(const std::string& path);

    // Derived artifact paths under out_dir.
    std::string design_path(int layer) const;
    std::string words_path(int layer) const;
    std::string encoder_path(int layer) const;
    std::string attributions_path() const;
    std::string scores_path() const;
    std::string selected_layers_path() const;
    std::string planted_path() const;
    std::string truth_map_path() const;
    std::string manifest_path(const std::string& command) const;
    std::string report_path(const std::string& name) const;  // CSVs + summary.json
};

// Each command validates its config, checks upstream artifacts (throwing
// dependency_error naming the producing command), writes outputs atomically,
// and drops a manifest with sha256 digests of everything it wrote.
void cmd_synth(const RunConfig& config);
void cmd_train(const RunConfig& config);
void cmd_embed(const RunConfig& config);
void cmd_fit(const RunConfig& config);
void cmd_attribute(const RunConfig& config);
void cmd_analyze(const RunConfig& config);
void cmd_mask(const RunConfig& config);
void cmd_report(const RunConfig& config);

}  // namespace brainattr
