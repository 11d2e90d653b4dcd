#include "brainattr/tokenizer.hpp"

#include "brainattr/common.hpp"

namespace brainattr {

namespace {
constexpr size_t kPieceLen = 3;

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

bool printable_ascii(unsigned char c) { return c >= 0x21 && c <= 0x7e; }
}  // namespace

Tokenizer::Tokenizer(int64_t vocab_size) : vocab_size_(vocab_size) {
    if (vocab_size < 2) throw invalid_input("tokenizer: vocab size must be at least 2");
}

int64_t Tokenizer::piece_id(const std::string& piece) const {
    for (unsigned char c : piece)
        if (!printable_ascii(c)) return kUnknownId;
    return 1 + static_cast<int64_t>(fnv1a(piece) % static_cast<uint64_t>(vocab_size_ - 1));
}

std::vector<int64_t> Tokenizer::tokenize(const std::string& surface) const {
    if (surface.empty()) throw invalid_input("tokenize: empty surface");
    std::vector<int64_t> ids;
    for (size_t i = 0; i < surface.size(); i += kPieceLen)
        ids.push_back(piece_id(surface.substr(i, kPieceLen)));
    return ids;
}

Tokenizer::Encoded Tokenizer::encode_words(const std::vector<std::string>& surfaces) const {
    Encoded out;
    out.word_spans.reserve(surfaces.size());
    for (const auto& s : surfaces) {
        const int64_t begin = static_cast<int64_t>(out.ids.size());
        const auto toks = tokenize(s);
        out.ids.insert(out.ids.end(), toks.begin(), toks.end());
        out.word_spans.emplace_back(begin, static_cast<int64_t>(out.ids.size()));
    }
    return out;
}

}  // namespace brainattr
