#include "brainattr/synthdata.hpp"

#include <algorithm>
#include <cmath>

#include "brainattr/io_util.hpp"
#include "brainattr/rng.hpp"

namespace brainattr {

namespace {

// Annotation vocabularies mirror the reference dataset's three categories at
// toy scale: meanings, parts of speech, and story-level roles.
const std::vector<std::string> kSemanticVocab = {"being", "object", "place", "action",
                                                 "property", "manner"};
const std::vector<std::string> kSyntacticVocab = {"det", "noun", "verb", "adj",
                                                  "adv", "prep", "conj", "pron"};
const std::vector<std::string> kDiscourseVocab = {"character", "speech", "motion", "emotion"};

enum Sem { kBeing = 0, kObject, kPlace, kAction, kProperty, kManner };
enum Syn { kDet = 0, kNoun, kVerb, kAdj, kAdv, kPrep, kConj, kPron };
enum Dis { kCharacter = 0, kSpeech, kMotion, kEmotion };

struct LexEntry {
    std::string surface;
    AnnotationSet ann;
};

std::string make_surface(Rng& rng, int syllables) {
    static const char consonants[] = "bdfgklmnprstvz";
    static const char vowels[] = "aeiou";
    std::string s;
    for (int i = 0; i < syllables; ++i) {
        s += consonants[rng.next_below(sizeof(consonants) - 1)];
        s += vowels[rng.next_below(sizeof(vowels) - 1)];
    }
    return s;
}

struct Lexicon {
    std::vector<LexEntry> dets, nouns, verbs, adjs, advs, preps, conjs, prons;
    std::vector<LexEntry> planted;
};

Lexicon build_lexicon(uint64_t seed) {
    Lexicon lex;
    Rng rng(seed ^ 0x6c6578ULL);

    auto fixed = [](const char* s, int syn) {
        LexEntry e;
        e.surface = s;
        e.ann.syntactic = {syn};
        return e;
    };
    lex.dets = {fixed("the", kDet), fixed("a", kDet), fixed("his", kDet), fixed("her", kDet)};
    lex.preps = {fixed("on", kPrep), fixed("near", kPrep), fixed("under", kPrep), fixed("with", kPrep)};
    lex.conjs = {fixed("and", kConj), fixed("then", kConj)};
    lex.prons = {fixed("he", kPron), fixed("she", kPron), fixed("it", kPron)};

    auto content = [&](int syllables, int syn, std::vector<int> sem, std::vector<int> dis) {
        LexEntry e;
        e.surface = make_surface(rng, syllables);
        e.ann.syntactic = {syn};
        e.ann.semantic = std::move(sem);
        e.ann.discourse = std::move(dis);
        return e;
    };

    // Three "character" nouns, then ordinary beings/objects/places.
    for (int i = 0; i < 3; ++i) lex.nouns.push_back(content(3, kNoun, {kBeing}, {kCharacter}));
    for (int i = 0; i < 4; ++i) lex.nouns.push_back(content(3, kNoun, {kBeing}, {}));
    for (int i = 0; i < 4; ++i) lex.nouns.push_back(content(3, kNoun, {kObject}, {}));
    for (int i = 0; i < 3; ++i) lex.nouns.push_back(content(3, kNoun, {kPlace}, {}));

    for (int i = 0; i < 3; ++i) lex.verbs.push_back(content(3, kVerb, {kAction}, {kSpeech}));
    for (int i = 0; i < 3; ++i) lex.verbs.push_back(content(3, kVerb, {kAction}, {kMotion}));
    for (int i = 0; i < 2; ++i) lex.verbs.push_back(content(3, kVerb, {kAction}, {kEmotion}));
    for (int i = 0; i < 3; ++i) lex.verbs.push_back(content(3, kVerb, {kAction}, {}));

    for (int i = 0; i < 5; ++i) lex.adjs.push_back(content(3, kAdj, {kProperty}, {}));
    for (int i = 0; i < 4; ++i) lex.advs.push_back(content(3, kAdv, {kManner}, {}));

    // Planted words are single-syllable (one token): their contextual
    // embeddings stay lexically sharp, which the planted readout relies on.
    for (int i = 0; i < 6; ++i) lex.planted.push_back(content(1, kNoun, {kBeing}, {kCharacter}));
    return lex;
}

}  // namespace

SyntheticCorpus gen_corpus(const SyntheticSpec& spec) {
    if (spec.n_words < 4) throw invalid_input("gen_corpus: corpus too small");
    if (spec.n_runs < 1) throw invalid_input("gen_corpus: need at least one run");

    const Lexicon lex = build_lexicon(spec.seed);
    Rng rng(spec.seed);

    SyntheticCorpus out;
    Corpus& corpus = out.corpus;
    corpus.tr_duration_s = spec.tr_duration_s;
    corpus.word_duration_s = spec.word_duration_s;
    corpus.semantic_vocab = kSemanticVocab;
    corpus.syntactic_vocab = kSyntacticVocab;
    corpus.discourse_vocab = kDiscourseVocab;

    auto pick = [&](const std::vector<LexEntry>& pool) -> const LexEntry& {
        return pool[rng.next_below(pool.size())];
    };

    // Finite-state sentence templates over the word classes.
    std::vector<const LexEntry*> stream;
    while (static_cast<int64_t>(stream.size()) < spec.n_words) {
        switch (rng.next_below(4)) {
            case 0:
                stream.push_back(&pick(lex.dets));
                stream.push_back(&pick(lex.adjs));
                stream.push_back(&pick(lex.nouns));
                stream.push_back(&pick(lex.verbs));
                stream.push_back(&pick(lex.dets));
                stream.push_back(&pick(lex.nouns));
                break;
            case 1:
                stream.push_back(&pick(lex.prons));
                stream.push_back(&pick(lex.verbs));
                stream.push_back(&pick(lex.preps));
                stream.push_back(&pick(lex.dets));
                stream.push_back(&pick(lex.nouns));
                break;
            case 2:
                stream.push_back(&pick(lex.dets));
                stream.push_back(&pick(lex.nouns));
                stream.push_back(&pick(lex.verbs));
                stream.push_back(&pick(lex.advs));
                break;
            default:
                stream.push_back(&pick(lex.dets));
                stream.push_back(&pick(lex.nouns));
                stream.push_back(&pick(lex.verbs));
                stream.push_back(&pick(lex.conjs));
                stream.push_back(&pick(lex.verbs));
                stream.push_back(&pick(lex.advs));
                break;
        }
    }
    stream.resize(static_cast<size_t>(spec.n_words));

    // Split into runs of near-equal length.
    const int64_t base = spec.n_words / spec.n_runs;
    const int64_t extra = spec.n_words % spec.n_runs;
    int64_t start = 0;
    for (int r = 0; r < spec.n_runs; ++r) {
        const int64_t len = base + (r < extra ? 1 : 0);
        corpus.runs.push_back({start, start + len});
        start += len;
    }

    for (int64_t i = 0; i < spec.n_words; ++i) {
        WordRecord w;
        w.surface = stream[static_cast<size_t>(i)]->surface;
        w.annotations = stream[static_cast<size_t>(i)]->ann;
        w.word_index = i;
        w.run = 0;
        while (i >= corpus.runs[static_cast<size_t>(w.run)].end) ++w.run;
        w.tr_index = corpus.expected_tr(w.run, i);
        corpus.words.push_back(std::move(w));
    }

    if (spec.planted) {
        for (const auto& e : lex.planted) out.planted_surfaces.push_back(e.surface);
        Rng plant_rng(spec.seed ^ 0x706c616e74ULL);
        for (size_t run = 0; run < corpus.runs.size(); ++run) {
            const int trs = corpus.trs_in_run(static_cast<int>(run));
            for (int tr = 0; tr < trs; ++tr) {
                const auto [begin, end] = corpus.words_in_tr(static_cast<int>(run), tr);
                if (begin == end) continue;
                const int64_t slot = begin + static_cast<int64_t>(plant_rng.next_below(
                                                 static_cast<uint64_t>(end - begin)));
                if (end - begin > 1) {
                    // Multi-word TRs: swap in a lexically distinctive planted
                    // surface so a linear readout can key on the slot.
                    const int type = static_cast<int>(plant_rng.next_below(lex.planted.size()));
                    corpus.words[static_cast<size_t>(slot)].surface =
                        lex.planted[static_cast<size_t>(type)].surface;
                    corpus.words[static_cast<size_t>(slot)].annotations =
                        lex.planted[static_cast<size_t>(type)].ann;
                    out.planted_types.push_back(type);
                } else {
                    // Single-word TRs: the word is the TR; designation needs
                    // no surface replacement.
                    out.planted_types.push_back(-1);
                }
                out.planted_positions.push_back(slot);
            }
        }
    }

    corpus.validate();
    return out;
}

Tensor random_linear_map(int64_t rows, int64_t cols, uint64_t seed) {
    Rng rng(seed ^ 0x7773746172ULL);
    Tensor w = Tensor::zeros(rows, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
    for (auto& v : w.values) v = rng.next_gaussian() * scale;
    return w;
}

Tensor planted_linear_map(const Tensor& word_embeddings, const std::vector<int64_t>& planted_positions,
                          const std::vector<int>& planted_types, int delay_depth, int64_t voxels,
                          uint64_t seed, double background_scale) {
    if (planted_positions.empty()) throw invalid_input("planted map: no designated positions");
    if (planted_positions.size() != planted_types.size())
        throw invalid_input("planted map: one type per position required");
    const int64_t h = word_embeddings.cols();
    const int64_t n = word_embeddings.rows();

    // Designation without surface replacement (single-word TRs): each TR is
    // its designated word, so the readout is simply a dense delay-0 block.
    const bool typed = std::any_of(planted_types.begin(), planted_types.end(),
                                   [](int t) { return t >= 0; });
    if (!typed) {
        Rng rng(seed ^ 0x756e6971ULL);
        Tensor w = Tensor::zeros(static_cast<int64_t>(delay_depth) * h, voxels);
        const double scale = 1.0 / std::sqrt(static_cast<double>(h));
        for (int64_t j = 0; j < h; ++j)
            for (int64_t k = 0; k < voxels; ++k) w.at(j, k) = scale * rng.next_gaussian();
        return w;
    }

    std::vector<char> is_planted(static_cast<size_t>(n), 0);
    for (int64_t p : planted_positions) is_planted[static_cast<size_t>(p)] = 1;

    std::vector<double> mean_other(static_cast<size_t>(h), 0.0);
    int64_t n_other = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (is_planted[static_cast<size_t>(i)]) continue;
        ++n_other;
        for (int64_t j = 0; j < h; ++j) mean_other[static_cast<size_t>(j)] += word_embeddings.at(i, j);
    }
    if (n_other == 0) throw invalid_input("planted map: degenerate split");
    for (auto& v : mean_other) v /= static_cast<double>(n_other);

    // Covariance of the ordinary words' embeddings, slightly ridged.
    std::vector<double> cov(static_cast<size_t>(h * h), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        if (is_planted[static_cast<size_t>(i)]) continue;
        for (int64_t a = 0; a < h; ++a) {
            const double da = word_embeddings.at(i, a) - mean_other[static_cast<size_t>(a)];
            for (int64_t b = 0; b < h; ++b)
                cov[static_cast<size_t>(a * h + b)] +=
                    da * (word_embeddings.at(i, b) - mean_other[static_cast<size_t>(b)]);
        }
    }
    double trace = 0.0;
    for (int64_t a = 0; a < h; ++a) trace += cov[static_cast<size_t>(a * h + a)];
    for (int64_t a = 0; a < h; ++a)
        cov[static_cast<size_t>(a * h + a)] += 0.01 * trace / static_cast<double>(h);
    for (auto& v : cov) v /= static_cast<double>(n_other);

    // Cholesky factor (in place, lower triangular).
    std::vector<double> chol = cov;
    for (int64_t a = 0; a < h; ++a) {
        for (int64_t b = 0; b <= a; ++b) {
            double s = chol[static_cast<size_t>(a * h + b)];
            for (int64_t k = 0; k < b; ++k)
                s -= chol[static_cast<size_t>(a * h + k)] * chol[static_cast<size_t>(b * h + k)];
            if (a == b) {
                if (s <= 0) throw numerical_error("planted map: covariance not positive definite");
                chol[static_cast<size_t>(a * h + a)] = std::sqrt(s);
            } else {
                chol[static_cast<size_t>(a * h + b)] = s / chol[static_cast<size_t>(b * h + b)];
            }
        }
        for (int64_t b = a + 1; b < h; ++b) chol[static_cast<size_t>(a * h + b)] = 0.0;
    }
    auto solve_cov = [&](std::vector<double> rhs) {
        // Forward then back substitution with the Cholesky factor.
        for (int64_t a = 0; a < h; ++a) {
            double s = rhs[static_cast<size_t>(a)];
            for (int64_t k = 0; k < a; ++k) s -= chol[static_cast<size_t>(a * h + k)] * rhs[static_cast<size_t>(k)];
            rhs[static_cast<size_t>(a)] = s / chol[static_cast<size_t>(a * h + a)];
        }
        for (int64_t a = h - 1; a >= 0; --a) {
            double s = rhs[static_cast<size_t>(a)];
            for (int64_t k = a + 1; k < h; ++k) s -= chol[static_cast<size_t>(k * h + a)] * rhs[static_cast<size_t>(k)];
            rhs[static_cast<size_t>(a)] = s / chol[static_cast<size_t>(a * h + a)];
        }
        return rhs;
    };

    // Fisher-style read directions, C^{-1}(type mean - ordinary mean): the
    // between-type separation then dominates the ordinary words' variance.
    const int n_types = 1 + *std::max_element(planted_types.begin(), planted_types.end());
    std::vector<std::vector<double>> offsets(static_cast<size_t>(n_types),
                                             std::vector<double>(static_cast<size_t>(h), 0.0));
    std::vector<int64_t> type_counts(static_cast<size_t>(n_types), 0);
    for (size_t i = 0; i < planted_positions.size(); ++i) {
        if (planted_types[i] < 0) continue;
        const int64_t pos = planted_positions[i];
        auto& acc = offsets[static_cast<size_t>(planted_types[i])];
        for (int64_t j = 0; j < h; ++j) acc[static_cast<size_t>(j)] += word_embeddings.at(pos, j);
        type_counts[static_cast<size_t>(planted_types[i])] += 1;
    }
    std::vector<std::vector<double>> basis;
    for (int t = 0; t < n_types; ++t) {
        if (type_counts[static_cast<size_t>(t)] == 0) continue;
        std::vector<double> offset(static_cast<size_t>(h));
        for (int64_t j = 0; j < h; ++j)
            offset[static_cast<size_t>(j)] =
                offsets[static_cast<size_t>(t)][static_cast<size_t>(j)] / type_counts[static_cast<size_t>(t)] -
                mean_other[static_cast<size_t>(j)];
        auto dir = solve_cov(offset);
        double norm = 0.0;
        for (double v : dir) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-10) continue;
        for (auto& v : dir) v /= norm;
        basis.push_back(std::move(dir));
    }
    if (basis.empty()) throw numerical_error("planted map: designated words are not separable");

    Rng rng(seed ^ 0x756e6971ULL);
    Tensor w = Tensor::zeros(static_cast<int64_t>(delay_depth) * h, voxels);
    for (const auto& u : basis) {
        std::vector<double> voxel_dir(static_cast<size_t>(voxels));
        double vnorm = 0.0;
        for (auto& v : voxel_dir) {
            v = rng.next_gaussian();
            vnorm += v * v;
        }
        vnorm = std::sqrt(vnorm);
        for (int64_t j = 0; j < h; ++j)
            for (int64_t k = 0; k < voxels; ++k)
                w.at(j, k) += u[static_cast<size_t>(j)] * voxel_dir[static_cast<size_t>(k)] / vnorm;
    }
    for (int64_t j = 0; j < h; ++j)
        for (int64_t k = 0; k < voxels; ++k) w.at(j, k) += background_scale * rng.next_gaussian();
    return w;
}

ResponseMatrix gen_brain_responses(const DesignMatrix& design, const Tensor& w_star, double sigma,
                                   uint64_t seed, int subject) {
    if (design.values.cols() != w_star.rows())
        throw invalid_input("gen_brain_responses: design width does not match the truth map");
    if (sigma < 0) throw invalid_input("gen_brain_responses: negative noise");
    Rng rng(seed ^ 0x726573706fULL);

    ResponseMatrix out;
    out.subject = subject;
    out.row_trs = design.row_trs;
    const int64_t k = design.values.rows();
    const int64_t v = w_star.cols();
    out.values = Tensor::zeros(k, v);
    for (int64_t r = 0; r < k; ++r)
        for (int64_t j = 0; j < v; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < design.values.cols(); ++p)
                acc += design.values.at(r, p) * w_star.at(p, j);
            out.values.at(r, j) = acc + sigma * rng.next_gaussian();
        }
    return out;
}

std::vector<WordDelta> brute_force_word_importance(const ModelParams& params,
                                                   const Tokenizer& tokenizer, const Corpus& corpus,
                                                   const EncodingModel& encoder, int run, int tr,
                                                   const std::vector<double>& voxel_row,
                                                   int64_t context_words) {
    const auto [begin, end] = extended_window(corpus, run, tr, encoder.delay_depth, context_words);
    const double clean = brain_loss_with_zeroed_words(params, tokenizer, corpus, encoder, run, tr,
                                                      voxel_row, context_words, {});
    std::vector<WordDelta> out;
    for (int64_t w = begin; w <= end; ++w) {
        const double zeroed = brain_loss_with_zeroed_words(params, tokenizer, corpus, encoder, run,
                                                           tr, voxel_row, context_words, {w});
        out.push_back({w, zeroed - clean});
    }
    return out;
}

void save_truth_map(const Tensor& w_star, const std::string& path) {
    BinaryWriter w;
    w.str("BAWS");
    w.u32(1);
    w.u64(static_cast<uint64_t>(w_star.rows()));
    w.u64(static_cast<uint64_t>(w_star.cols()));
    w.f64_array(w_star.values);
    write_file_atomic(path, w.buffer());
}

Tensor load_truth_map(const std::string& path) {
    BinaryReader r(read_file(path));
    if (r.str() != "BAWS") throw invalid_input("truth map file: bad magic in " + path);
    if (r.u32() != 1) throw invalid_input("truth map file: unsupported version");
    const uint64_t rows = r.u64();
    const uint64_t cols = r.u64();
    return Tensor({static_cast<int64_t>(rows), static_cast<int64_t>(cols)}, r.f64_array(rows * cols));
}

}  // namespace brainattr
