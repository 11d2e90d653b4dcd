#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "brainattr/tape.hpp"

namespace brainattr {

enum class ModelFamily : uint8_t { kTransformer = 0, kSsm = 1 };

std::string family_name(ModelFamily f);
ModelFamily family_from_name(const std::string& name);

struct ModelConfig {
    ModelFamily family = ModelFamily::kTransformer;
    int n_layers = 6;
    int hidden_size = 64;
    int n_heads = 4;  // transformer only
    int vocab_size = 512;
    int max_positions = 256;
    uint64_t seed = 1;

    void validate() const;
    int mlp_width() const { return 2 * hidden_size; }
};

// All weights, keyed by name. std::map keeps iteration order deterministic
// for training updates and checkpoint layout.
struct ModelParams {
    ModelConfig config;
    std::map<std::string, Tensor> tensors;

    static ModelParams init(const ModelConfig& config);
    const Tensor& at(const std::string& name) const;
};

struct ForwardResult {
    NodeId embeddings = -1;            // (T,H) pre-positional token embeddings
    std::vector<NodeId> layer_states;  // (T,H) after each block
    NodeId logits = -1;                // (T,vocab)
};

// Binds one parameter set onto a tape; every forward call on the same graph
// shares the parameter leaves, so one backward pass accumulates gradients
// across all contexts placed on the tape.
class LmGraph {
public:
    LmGraph(Tape& tape, const ModelParams& params);

    // Token-id entry point; embeddings come from the table lookup, so
    // gradients reach the embedding table (training path).
    ForwardResult forward_tokens(const std::vector<int64_t>& tokens);

    // Explicit-embedding entry point (attribution path): the caller owns the
    // (T,H) embedding node, typically a leaf, and positional information is
    // added after it.
    ForwardResult forward_from(NodeId embeddings);

    NodeId param(const std::string& name) const;
    Tape& tape() { return tape_; }
    const ModelConfig& config() const { return config_; }

private:
    Tape& tape_;
    ModelConfig config_;
    std::map<std::string, NodeId> param_nodes_;
};

// Plain embedding-table lookup outside any tape.
Tensor embed_tokens(const ModelParams& params, const std::vector<int64_t>& tokens);

struct TrainOptions {
    int64_t steps = 2000;
    double learning_rate = 1e-3;
    int batch = 4;
    int seq_len = 32;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
};

struct TrainReport {
    double initial_ce = 0.0;
    double final_ce = 0.0;
};

// Adam training over a token stream. Deterministic given config.seed.
// Throws numerical_error (with the step index) if the loss goes non-finite.
ModelParams train_lm(const ModelConfig& config, const std::vector<int64_t>& stream,
                     const TrainOptions& opts, TrainReport* report = nullptr);

// Mean next-token cross-entropy over the stream in fixed windows.
double eval_stream_ce(const ModelParams& params, const std::vector<int64_t>& stream, int seq_len);

void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

}  // namespace brainattr
