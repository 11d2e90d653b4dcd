#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "brainattr/stimulus.hpp"
#include "brainattr/synthdata.hpp"
#include "helpers.hpp"

using namespace brainattr;

namespace {

Corpus grammar_corpus(int64_t n_words, int runs = 2, uint64_t seed = 7) {
    SyntheticSpec spec;
    spec.n_words = n_words;
    spec.n_runs = runs;
    spec.seed = seed;
    return gen_corpus(spec).corpus;
}

ModelParams tiny_model(int vocab = 512) {
    ModelConfig c;
    c.n_layers = 3;
    c.hidden_size = 8;
    c.n_heads = 2;
    c.vocab_size = vocab;
    c.max_positions = 128;
    c.seed = 9;
    return ModelParams::init(c);
}

}  // namespace

TEST_CASE("context windows truncate at the text start and end at the target") {
    const Corpus corpus = grammar_corpus(120);
    const auto contexts = build_contexts(corpus, 10);
    CHECK(contexts.size() == 120);
    CHECK(contexts[0].begin == 0);
    CHECK(contexts[0].target == 0);
    CHECK(contexts[99].begin == 90);
    CHECK(contexts[99].target == 99);
    for (const auto& c : contexts) {
        CHECK(c.target >= c.begin);
        CHECK(c.length() <= 10);
    }
    CHECK_THROWS_AS(build_contexts(corpus, 0), invalid_input);
}

TEST_CASE("word embedding is the mean of the final word's token rows") {
    Tensor states = Tensor::zeros(4, 3);
    for (int64_t r = 0; r < 4; ++r)
        for (int64_t c = 0; c < 3; ++c) states.at(r, c) = static_cast<double>(r * 3 + c);

    const auto single = word_embedding(states, {2, 3});
    for (int64_t c = 0; c < 3; ++c) CHECK(single[static_cast<size_t>(c)] == states.at(2, c));

    const auto two = word_embedding(states, {2, 4});
    for (int64_t c = 0; c < 3; ++c)
        CHECK(two[static_cast<size_t>(c)] == doctest::Approx((states.at(2, c) + states.at(3, c)) / 2));

    // Convexity: the mean stays inside the coordinate-wise envelope.
    for (int64_t c = 0; c < 3; ++c) {
        CHECK(two[static_cast<size_t>(c)] >= std::min(states.at(2, c), states.at(3, c)));
        CHECK(two[static_cast<size_t>(c)] <= std::max(states.at(2, c), states.at(3, c)));
    }
    CHECK_THROWS_AS(word_embedding(states, {3, 3}), invalid_input);
}

TEST_CASE("tr embedding is the mean of word embeddings") {
    const std::vector<double> v = {1.0, 2.0, 3.0};
    CHECK(tr_embedding({v}) == v);
    CHECK(tr_embedding({v, v}) == v);
    CHECK(tr_embedding({v, v, v, v, v}) == v);
    CHECK_THROWS_AS(tr_embedding({}), invalid_input);
}

TEST_CASE("delay concatenation shape, mapping and run boundaries") {
    const Corpus corpus = grammar_corpus(160, 2);
    const ModelParams params = tiny_model();
    const Tokenizer tok(params.config.vocab_size);
    const auto layers = compute_stimulus_embeddings(corpus, params, tok, 8, 2);
    CHECK(layers.size() == 3);

    const int d = 4;
    const DesignMatrix design = delay_concatenate(layers[1], d);
    CHECK(design.values.cols() == d * params.config.hidden_size);

    // Each run drops its first D-1 TRs; rows never mix runs.
    int64_t expected_rows = 0;
    for (size_t run = 0; run < corpus.runs.size(); ++run)
        expected_rows += corpus.trs_in_run(static_cast<int>(run)) - (d - 1);
    CHECK(design.rows() == expected_rows);
    for (const auto& [run, tr] : design.row_trs) {
        CHECK(tr >= d - 1);
        CHECK(run >= 0);
        CHECK(run < static_cast<int>(corpus.runs.size()));
    }

    // Row content: block dd of TR t equals the TR embedding of t-dd.
    const Tensor& seq = layers[1].run_trs[0];
    const int h = params.config.hidden_size;
    for (int dd = 0; dd < d; ++dd)
        for (int64_t j = 0; j < h; ++j)
            CHECK(design.values.at(0, dd * h + j) == seq.at(d - 1 - dd, j));

    // D=1 leaves the TR embedding matrix unchanged.
    const DesignMatrix flat = delay_concatenate(layers[1], 1);
    CHECK(flat.values.cols() == h);
    CHECK(flat.rows() == corpus.trs_in_run(0) + corpus.trs_in_run(1));
    for (int64_t j = 0; j < h; ++j) CHECK(flat.values.at(0, j) == seq.at(0, j));
}

TEST_CASE("constant TR embedding fills every delay block with the same vector") {
    StimulusEmbeddings se;
    se.layer = 0;
    Tensor seq = Tensor::zeros(6, 3);
    for (int64_t t = 0; t < 6; ++t)
        for (int64_t j = 0; j < 3; ++j) seq.at(t, j) = static_cast<double>(j) + 1.0;
    se.run_trs.push_back(seq);
    se.word_embeddings = Tensor::zeros(1, 3);
    const DesignMatrix design = delay_concatenate(se, 4);
    for (int64_t r = 0; r < design.rows(); ++r)
        for (int d = 0; d < 4; ++d)
            for (int64_t j = 0; j < 3; ++j) CHECK(design.values.at(r, d * 3 + j) == seq.at(0, j));
}

TEST_CASE("a run shorter than the delay depth contributes no rows") {
    StimulusEmbeddings se;
    se.layer = 0;
    se.word_embeddings = Tensor::zeros(1, 2);
    se.run_trs.push_back(Tensor::zeros(2, 2));  // 2 TRs < D=4
    se.run_trs.push_back(Tensor::zeros(6, 2));
    const DesignMatrix design = delay_concatenate(se, 4);
    CHECK(design.rows() == 3);
    for (const auto& [run, tr] : design.row_trs) {
        (void)tr;
        CHECK(run == 1);
    }
}

TEST_CASE("pipeline output does not depend on the worker count") {
    const Corpus corpus = grammar_corpus(80, 1, 13);
    const ModelParams params = tiny_model();
    const Tokenizer tok(params.config.vocab_size);
    const auto seq1 = compute_stimulus_embeddings(corpus, params, tok, 6, 1);
    const auto seq4 = compute_stimulus_embeddings(corpus, params, tok, 6, 4);
    for (size_t l = 0; l < seq1.size(); ++l)
        CHECK(seq1[l].word_embeddings.values == seq4[l].word_embeddings.values);  // bit-identical
}

TEST_CASE("design matrix file round trip") {
    const Corpus corpus = grammar_corpus(80, 1, 15);
    const ModelParams params = tiny_model();
    const Tokenizer tok(params.config.vocab_size);
    const auto layers = compute_stimulus_embeddings(corpus, params, tok, 6, 2);
    const DesignMatrix design = delay_concatenate(layers[2], 4);

    const std::string path = (std::filesystem::temp_directory_path() / "ba_design_test.bin").string();
    save_design(design, path);
    const DesignMatrix loaded = load_design(path);
    CHECK(loaded.layer == design.layer);
    CHECK(loaded.delay_depth == design.delay_depth);
    CHECK(loaded.row_trs == design.row_trs);
    CHECK(loaded.values.values == design.values.values);
    std::remove(path.c_str());
}
