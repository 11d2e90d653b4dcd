#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace brainattr {

// Deterministic toy subword tokenizer: words are cut into character pieces
// of up to three characters, and each piece hashes into a fixed id range.
// Words longer than four characters always produce at least two tokens, so
// token->word aggregation is exercised everywhere downstream.
//
// Id 0 is reserved for pieces containing characters outside printable ASCII;
// tokenization never fails.
class Tokenizer {
public:
    static constexpr int64_t kUnknownId = 0;

    explicit Tokenizer(int64_t vocab_size = 512);

    std::vector<int64_t> tokenize(const std::string& surface) const;

    // Token ids for a word sequence plus, for each word, its [begin, end)
    // token span in the concatenated stream.
    struct Encoded {
        std::vector<int64_t> ids;
        std::vector<std::pair<int64_t, int64_t>> word_spans;
    };
    Encoded encode_words(const std::vector<std::string>& surfaces) const;

    int64_t vocab_size() const { return vocab_size_; }

private:
    int64_t piece_id(const std::string& piece) const;
    int64_t vocab_size_;
};

}  // namespace brainattr
