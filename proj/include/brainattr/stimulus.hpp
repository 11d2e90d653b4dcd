#pragma once

#include <string>
#include <vector>

#include "brainattr/corpus.hpp"
#include "brainattr/tensor.hpp"
#include "brainattr/tokenizer.hpp"
#include "brainattr/toy_lm.hpp"

namespace brainattr {

// Window of at most L words ending at (and including) the target word.
// Contexts may span run boundaries; only the TR delay stacking respects runs.
struct Context {
    int64_t target = 0;
    int64_t begin = 0;

    int64_t length() const { return target - begin + 1; }
};

std::vector<Context> build_contexts(const Corpus& corpus, int64_t context_words);

// Mean of the final word's token rows. `span` is the [begin, end) token range
// of the final word inside the context's token sequence.
std::vector<double> word_embedding(const Tensor& layer_state, std::pair<int64_t, int64_t> span);

// Mean of word-embedding rows; all rows must share a width.
std::vector<double> tr_embedding(const std::vector<std::vector<double>>& word_embeddings);

struct DesignMatrix {
    Tensor values;  // (K, D*H)
    int layer = 0;
    int delay_depth = 4;
    int hidden = 0;
    std::vector<std::pair<int, int>> row_trs;  // (run, tr) per row

    int64_t rows() const { return values.rows(); }
};

// Per-run TR embedding sequences plus the word-level matrix they came from.
struct StimulusEmbeddings {
    Tensor word_embeddings;           // (N, H), one row per word
    std::vector<Tensor> run_trs;      // per run: (TRs_in_run, H)
    int layer = 0;
};

// Runs every word context through the model once and aggregates hidden
// states token->word->TR for every layer.  TRs without any word carry the
// previous TR embedding forward (zero for a run's leading empty TRs).
std::vector<StimulusEmbeddings> compute_stimulus_embeddings(const Corpus& corpus,
                                                            const ModelParams& params,
                                                            const Tokenizer& tokenizer,
                                                            int64_t context_words, int jobs);

// Row for TR t of a run is [e_t, e_{t-1}, ..., e_{t-D+1}]; the first D-1 TRs
// of each run are dropped. Runs shorter than D contribute no rows (warning on
// stderr).
DesignMatrix delay_concatenate(const StimulusEmbeddings& embeddings, int delay_depth);

void save_design(const DesignMatrix& design, const std::string& path);
DesignMatrix load_design(const std::string& path);

// Word-embedding matrix container (one row per word), used by the synthetic
// response generator.
void save_word_matrix(const Tensor& words, int layer, const std::string& path);
Tensor load_word_matrix(const std::string& path, int* layer = nullptr);

}  // namespace brainattr
