#include "brainattr/stimulus.hpp"

#include <algorithm>
#include <iostream>

#include "brainattr/io_util.hpp"
#include "brainattr/parallel.hpp"
#include "brainattr/tape.hpp"

namespace brainattr {

std::vector<Context> build_contexts(const Corpus& corpus, int64_t context_words) {
    if (corpus.words.empty()) throw invalid_input("build_contexts: empty corpus");
    if (context_words < 1) throw invalid_input("build_contexts: context size must be >= 1");
    std::vector<Context> out;
    out.reserve(corpus.words.size());
    for (int64_t w = 0; w < corpus.size(); ++w)
        out.push_back({w, std::max<int64_t>(0, w - context_words + 1)});
    return out;
}

std::vector<double> word_embedding(const Tensor& layer_state, std::pair<int64_t, int64_t> span) {
    const auto [begin, end] = span;
    if (begin < 0 || end <= begin || end > layer_state.rows())
        throw invalid_input("word_embedding: token span out of range");
    const int64_t h = layer_state.cols();
    std::vector<double> acc(static_cast<size_t>(h), 0.0);
    for (int64_t r = begin; r < end; ++r)
        for (int64_t j = 0; j < h; ++j) acc[static_cast<size_t>(j)] += layer_state.at(r, j);
    const double inv = 1.0 / static_cast<double>(end - begin);
    for (auto& v : acc) v *= inv;
    return acc;
}

std::vector<double> tr_embedding(const std::vector<std::vector<double>>& word_embeddings) {
    if (word_embeddings.empty()) throw invalid_input("tr_embedding: no words");
    const size_t h = word_embeddings[0].size();
    std::vector<double> acc(h, 0.0);
    for (const auto& w : word_embeddings) {
        if (w.size() != h) throw invalid_input("tr_embedding: width mismatch");
        for (size_t j = 0; j < h; ++j) acc[j] += w[j];
    }
    const double inv = 1.0 / static_cast<double>(word_embeddings.size());
    for (auto& v : acc) v *= inv;
    return acc;
}

std::vector<StimulusEmbeddings> compute_stimulus_embeddings(const Corpus& corpus,
                                                            const ModelParams& params,
                                                            const Tokenizer& tokenizer,
                                                            int64_t context_words, int jobs) {
    corpus.validate();
    const auto contexts = build_contexts(corpus, context_words);
    const int n_layers = params.config.n_layers;
    const int64_t h = params.config.hidden_size;
    const int64_t n = corpus.size();

    std::vector<StimulusEmbeddings> layers(static_cast<size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) {
        layers[static_cast<size_t>(l)].layer = l;
        layers[static_cast<size_t>(l)].word_embeddings = Tensor::zeros(n, h);
    }

    parallel_for(n, jobs, [&](int64_t w) {
        const Context& ctx = contexts[static_cast<size_t>(w)];
        std::vector<std::string> surfaces;
        surfaces.reserve(static_cast<size_t>(ctx.length()));
        for (int64_t i = ctx.begin; i <= ctx.target; ++i)
            surfaces.push_back(corpus.words[static_cast<size_t>(i)].surface);
        const auto encoded = tokenizer.encode_words(surfaces);

        Tape tape;
        LmGraph graph(tape, params);
        const ForwardResult fwd = graph.forward_tokens(encoded.ids);
        const auto final_span = encoded.word_spans.back();
        for (int l = 0; l < n_layers; ++l) {
            const auto emb = word_embedding(tape.value(fwd.layer_states[static_cast<size_t>(l)]), final_span);
            std::copy(emb.begin(), emb.end(),
                      layers[static_cast<size_t>(l)].word_embeddings.values.begin() + w * h);
        }
    });

    // Aggregate word rows into per-run TR sequences.
    for (int l = 0; l < n_layers; ++l) {
        StimulusEmbeddings& se = layers[static_cast<size_t>(l)];
        for (size_t run = 0; run < corpus.runs.size(); ++run) {
            const int trs = corpus.trs_in_run(static_cast<int>(run));
            Tensor seq = Tensor::zeros(trs, h);
            std::vector<double> carry(static_cast<size_t>(h), 0.0);
            for (int tr = 0; tr < trs; ++tr) {
                const auto [begin, end] = corpus.words_in_tr(static_cast<int>(run), tr);
                if (begin == end) {
                    // Empty TR: carry the previous TR embedding forward.
                    for (int64_t j = 0; j < h; ++j) seq.at(tr, j) = carry[static_cast<size_t>(j)];
                    continue;
                }
                std::vector<std::vector<double>> word_rows;
                word_rows.reserve(static_cast<size_t>(end - begin));
                for (int64_t wi = begin; wi < end; ++wi) {
                    word_rows.emplace_back(
                        se.word_embeddings.values.begin() + wi * h,
                        se.word_embeddings.values.begin() + (wi + 1) * h);
                }
                const auto e = tr_embedding(word_rows);
                for (int64_t j = 0; j < h; ++j) seq.at(tr, j) = e[static_cast<size_t>(j)];
                carry = e;
            }
            se.run_trs.push_back(std::move(seq));
        }
    }
    return layers;
}

DesignMatrix delay_concatenate(const StimulusEmbeddings& embeddings, int delay_depth) {
    if (delay_depth < 1) throw invalid_input("delay_concatenate: delay depth must be >= 1");
    const int64_t h = embeddings.run_trs.empty() ? 0 : embeddings.run_trs[0].cols();

    DesignMatrix design;
    design.layer = embeddings.layer;
    design.delay_depth = delay_depth;
    design.hidden = static_cast<int>(h);

    int64_t total_rows = 0;
    for (const auto& seq : embeddings.run_trs)
        total_rows += std::max<int64_t>(0, seq.rows() - (delay_depth - 1));
    design.values = Tensor::zeros(total_rows, static_cast<int64_t>(delay_depth) * h);

    int64_t row = 0;
    for (size_t run = 0; run < embeddings.run_trs.size(); ++run) {
        const Tensor& seq = embeddings.run_trs[run];
        if (seq.rows() < delay_depth) {
            std::cerr << "warning: run " << run << " has " << seq.rows()
                      << " TRs, fewer than delay depth " << delay_depth
                      << "; it contributes no design rows\n";
            continue;
        }
        for (int64_t tr = delay_depth - 1; tr < seq.rows(); ++tr) {
            for (int d = 0; d < delay_depth; ++d) {
                const int64_t src_tr = tr - d;
                std::copy_n(seq.values.data() + src_tr * h, h,
                            design.values.values.data() + row * design.values.cols() + d * h);
            }
            design.row_trs.emplace_back(static_cast<int>(run), static_cast<int>(tr));
            ++row;
        }
    }
    if (!design.values.all_finite()) throw numerical_error("delay_concatenate: non-finite design entries");
    return design;
}

void save_design(const DesignMatrix& design, const std::string& path) {
    BinaryWriter w;
    w.str("BADM");
    w.u32(1);
    w.u32(static_cast<uint32_t>(design.layer));
    w.u32(static_cast<uint32_t>(design.delay_depth));
    w.u32(static_cast<uint32_t>(design.hidden));
    w.u64(static_cast<uint64_t>(design.values.rows()));
    w.u64(static_cast<uint64_t>(design.values.cols()));
    for (const auto& [run, tr] : design.row_trs) {
        w.u32(static_cast<uint32_t>(run));
        w.u32(static_cast<uint32_t>(tr));
    }
    w.f64_array(design.values.values);
    write_file_atomic(path, w.buffer());
}

DesignMatrix load_design(const std::string& path) {
    BinaryReader r(read_file(path));
    if (r.str() != "BADM") throw invalid_input("design file: bad magic in " + path);
    if (r.u32() != 1) throw invalid_input("design file: unsupported version");
    DesignMatrix d;
    d.layer = static_cast<int>(r.u32());
    d.delay_depth = static_cast<int>(r.u32());
    d.hidden = static_cast<int>(r.u32());
    const uint64_t rows = r.u64();
    const uint64_t cols = r.u64();
    d.row_trs.reserve(rows);
    for (uint64_t i = 0; i < rows; ++i) {
        const int run = static_cast<int>(r.u32());
        const int tr = static_cast<int>(r.u32());
        d.row_trs.emplace_back(run, tr);
    }
    d.values = Tensor({static_cast<int64_t>(rows), static_cast<int64_t>(cols)},
                      r.f64_array(rows * cols));
    return d;
}

void save_word_matrix(const Tensor& words, int layer, const std::string& path) {
    BinaryWriter w;
    w.str("BAWM");
    w.u32(1);
    w.u32(static_cast<uint32_t>(layer));
    w.u64(static_cast<uint64_t>(words.rows()));
    w.u64(static_cast<uint64_t>(words.cols()));
    w.f64_array(words.values);
    write_file_atomic(path, w.buffer());
}

Tensor load_word_matrix(const std::string& path, int* layer) {
    BinaryReader r(read_file(path));
    if (r.str() != "BAWM") throw invalid_input("word matrix file: bad magic in " + path);
    if (r.u32() != 1) throw invalid_input("word matrix file: unsupported version");
    const int l = static_cast<int>(r.u32());
    if (layer) *layer = l;
    const uint64_t rows = r.u64();
    const uint64_t cols = r.u64();
    return Tensor({static_cast<int64_t>(rows), static_cast<int64_t>(cols)}, r.f64_array(rows * cols));
}

}  // namespace brainattr
