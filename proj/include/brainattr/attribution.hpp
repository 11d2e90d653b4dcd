#pragma once

#include <string>
#include <vector>

#include "brainattr/corpus.hpp"
#include "brainattr/encoder.hpp"
#include "brainattr/tokenizer.hpp"
#include "brainattr/toy_lm.hpp"

namespace brainattr {

enum class AttributionTask : uint8_t { kBrain, kNwp };
enum class AttributionMethod : uint8_t { kGxi, kIg };

// Quadrature for the IG path integral. Gauss-Legendre matches the reference
// implementations and converges fast on smooth losses; the right-endpoint
// Riemann sum (k/m grid) is the textbook formula, kept selectable.
enum class IgRule : uint8_t { kGaussLegendre, kRiemannRight };

std::string task_name(AttributionTask t);
std::string method_name(AttributionMethod m);
AttributionMethod method_from_name(const std::string& name);
std::string ig_rule_name(IgRule r);
IgRule ig_rule_from_name(const std::string& name);

// Nodes and weights integrating over [0, 1]; weights sum to one.
void ig_quadrature(IgRule rule, int steps, std::vector<double>& nodes, std::vector<double>& weights);

struct AttributionTarget {
    AttributionTask task = AttributionTask::kBrain;
    AttributionMethod method = AttributionMethod::kGxi;
    int layer = -1;    // brain only
    int subject = -1;  // brain only
    int run = 0;
    int tr = 0;
    int ig_steps = 20;
    IgRule ig_rule = IgRule::kGaussLegendre;
};

// Signed per-word-instance scores for one (task, method, layer, subject, TR),
// ordered by word index. distance[i] counts words back from the most recent
// context word (0 = latest).
struct AttributionRecord {
    AttributionTarget target;
    std::vector<int64_t> word_index;
    std::vector<int64_t> distance;
    std::vector<double> score;
    double loss_value = 0.0;
    // Sum over every input token row, including rows outside the scored
    // window (teacher-forced target tokens); this is the completeness total.
    double total_token_score = 0.0;

    size_t size() const { return word_index.size(); }
};

// GXI token scores: per token row, sum over embedding dims of gradient times
// input. Gradients are taken at the given leaf.
std::vector<double> gxi(const Tape& tape, NodeId loss, NodeId input_leaf);

// Shared settings for both tasks.
struct AttributionOptions {
    AttributionMethod method = AttributionMethod::kGxi;
    int64_t context_words = 64;  // L
    int ig_steps = 20;           // m, used when method == kIg
    IgRule ig_rule = IgRule::kGaussLegendre;
};

// Brain-alignment attribution for one TR: recomputes the contexts of the
// words in the D concatenated TRs through the model, aggregates
// token->word->TR, applies the per-delay projection heads, and differentiates
// the z-scored MSE back to every context's token embeddings.
AttributionRecord attribute_brain_tr(const ModelParams& params, const Tokenizer& tokenizer,
                                     const Corpus& corpus, const EncodingModel& encoder,
                                     int run, int tr, const std::vector<double>& voxel_row,
                                     const AttributionOptions& opts);

// Next-word-prediction attribution for one TR: teacher-forced mean
// cross-entropy over the tokens of the word that follows the extended
// context (the union of the D TRs' word contexts).
AttributionRecord attribute_nwp(const ModelParams& params, const Tokenizer& tokenizer,
                                const Corpus& corpus, int run, int tr, int delay_depth,
                                const AttributionOptions& opts);

// The extended word window [begin, end] attributed for a (run, tr) pair.
std::pair<int64_t, int64_t> extended_window(const Corpus& corpus, int run, int tr, int delay_depth,
                                            int64_t context_words);

// Loss of either task with all attributed embeddings scaled by `scale`
// (scale 0 is the IG zero baseline, 1 the real input). Used by the
// completeness checks.
double brain_loss_at_scale(const ModelParams& params, const Tokenizer& tokenizer,
                           const Corpus& corpus, const EncodingModel& encoder, int run, int tr,
                           const std::vector<double>& voxel_row, int64_t context_words,
                           double scale);
double nwp_loss_at_scale(const ModelParams& params, const Tokenizer& tokenizer, const Corpus& corpus,
                         int run, int tr, int delay_depth, int64_t context_words, double scale);

// Brain-task loss with the token embeddings of the listed word instances
// zeroed in every context they appear in (leave-one-out style perturbation).
double brain_loss_with_zeroed_words(const ModelParams& params, const Tokenizer& tokenizer,
                                    const Corpus& corpus, const EncodingModel& encoder, int run,
                                    int tr, const std::vector<double>& voxel_row,
                                    int64_t context_words, const std::vector<int64_t>& zeroed_words);

void save_attributions(const std::vector<AttributionRecord>& records, const std::string& path);
std::vector<AttributionRecord> load_attributions(const std::string& path);

}  // namespace brainattr
