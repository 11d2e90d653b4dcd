#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brainattr/attribution.hpp"
#include "brainattr/corpus.hpp"
#include "brainattr/encoder.hpp"
#include "brainattr/stimulus.hpp"

namespace brainattr {

struct SyntheticSpec {
    int64_t n_words = 400;
    int n_runs = 2;
    int voxels = 48;
    double noise_sigma = 0.05;
    bool planted = false;
    uint64_t seed = 7;
    double tr_duration_s = 2.0;
    double word_duration_s = 0.5;  // 4 words per TR at the defaults
};

struct SyntheticCorpus {
    Corpus corpus;
    // One designated word instance per TR when planted; empty otherwise.
    // Surfaces rotate through a small planted lexicon so the designated slot
    // carries cross-TR variance a linear readout can track.
    std::vector<int64_t> planted_positions;
    std::vector<int> planted_types;  // lexicon index per position
    std::vector<std::string> planted_surfaces;
};

// Template-grammar word stream with content/function word classes and
// semantic / syntactic / discourse annotations. Deterministic per seed.
SyntheticCorpus gen_corpus(const SyntheticSpec& spec);

// Dense gaussian ground-truth map, entries N(0, 1/sqrt(rows)).
Tensor random_linear_map(int64_t rows, int64_t cols, uint64_t seed);

// Ground-truth map whose delay-0 block reads the subspace spanned by the
// planted lexicon's embedding offsets (one direction per planted type), plus
// a faint dense background so every word carries some signal. Other delay
// blocks are zero.
Tensor planted_linear_map(const Tensor& word_embeddings, const std::vector<int64_t>& planted_positions,
                          const std::vector<int>& planted_types, int delay_depth, int64_t voxels,
                          uint64_t seed, double background_scale = 0.02);

// Y = X W* + gaussian noise, rows aligned with the design.
ResponseMatrix gen_brain_responses(const DesignMatrix& design, const Tensor& w_star, double sigma,
                                   uint64_t seed, int subject = 0);

struct WordDelta {
    int64_t word_index = 0;
    double delta = 0.0;  // loss change when the word's embeddings are zeroed
};

// Leave-one-out oracle: recompute the brain TR loss with each context word's
// embeddings zeroed; independent of any gradient machinery.
std::vector<WordDelta> brute_force_word_importance(const ModelParams& params,
                                                   const Tokenizer& tokenizer, const Corpus& corpus,
                                                   const EncodingModel& encoder, int run, int tr,
                                                   const std::vector<double>& voxel_row,
                                                   int64_t context_words);

void save_truth_map(const Tensor& w_star, const std::string& path);
Tensor load_truth_map(const std::string& path);

}  // namespace brainattr
