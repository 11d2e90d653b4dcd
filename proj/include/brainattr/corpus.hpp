#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace brainattr {

struct AnnotationSet {
    std::vector<int> semantic;
    std::vector<int> syntactic;
    std::vector<int> discourse;
};

struct WordRecord {
    std::string surface;
    int64_t word_index = 0;   // global position in the text stream
    int run = 0;
    int tr_index = 0;         // TR within the run, starting at 0
    AnnotationSet annotations;
};

struct RunSpan {
    int64_t begin = 0;  // first word index
    int64_t end = 0;    // one past the last word index
};

// Ordered word stream with run boundaries and per-category annotation
// vocabularies. Word->TR assignment follows floor(onset / tr_duration) with
// onset = within-run word position * word_duration.
struct Corpus {
    std::vector<WordRecord> words;
    std::vector<RunSpan> runs;
    double tr_duration_s = 2.0;
    double word_duration_s = 0.5;
    std::vector<std::string> semantic_vocab;
    std::vector<std::string> syntactic_vocab;
    std::vector<std::string> discourse_vocab;

    int64_t size() const { return static_cast<int64_t>(words.size()); }
    int run_of_word(int64_t word_index) const;
    int trs_in_run(int run) const;
    // Word index range [begin, end) of one TR; empty range if no words fall in it.
    std::pair<int64_t, int64_t> words_in_tr(int run, int tr) const;
    int64_t last_word_of_tr(int run, int tr) const;

    // Recomputes the declared timing rule; used by the generator and to
    // validate loaded files.
    int expected_tr(int run, int64_t word_index) const;

    void validate() const;  // throws invalid_input on any broken invariant
};

// Line-delimited JSON format (see README for the full schema). The parser
// rejects unknown fields.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

}  // namespace brainattr
