#include "brainattr/attribution.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <unordered_set>

#include <json.hpp>

#include "brainattr/io_util.hpp"
#include "brainattr/stimulus.hpp"
#include "brainattr/tape.hpp"

namespace brainattr {

using nlohmann::json;

std::string task_name(AttributionTask t) { return t == AttributionTask::kBrain ? "brain" : "nwp"; }

std::string method_name(AttributionMethod m) { return m == AttributionMethod::kGxi ? "gxi" : "ig"; }

AttributionMethod method_from_name(const std::string& name) {
    if (name == "gxi") return AttributionMethod::kGxi;
    if (name == "ig") return AttributionMethod::kIg;
    throw invalid_input("unknown attribution method: " + name);
}

std::string ig_rule_name(IgRule r) {
    return r == IgRule::kGaussLegendre ? "gauss-legendre" : "riemann-right";
}

IgRule ig_rule_from_name(const std::string& name) {
    if (name == "gauss-legendre") return IgRule::kGaussLegendre;
    if (name == "riemann-right") return IgRule::kRiemannRight;
    throw invalid_input("unknown ig rule: " + name);
}

void ig_quadrature(IgRule rule, int steps, std::vector<double>& nodes, std::vector<double>& weights) {
    if (steps < 1) throw invalid_input("ig: interpolation steps must be >= 1");
    nodes.resize(static_cast<size_t>(steps));
    weights.resize(static_cast<size_t>(steps));
    if (rule == IgRule::kRiemannRight) {
        for (int k = 1; k <= steps; ++k) {
            nodes[static_cast<size_t>(k - 1)] = static_cast<double>(k) / steps;
            weights[static_cast<size_t>(k - 1)] = 1.0 / steps;
        }
        return;
    }
    // Gauss-Legendre on [-1, 1] by Newton iteration on P_n, mapped to [0, 1].
    const int n = steps;
    for (int i = 0; i < n; ++i) {
        double t = std::cos(3.14159265358979323846 * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = t;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (t * p1 - p0) / (t * t - 1.0);
            const double dt = p1 / dp;
            t -= dt;
            if (std::abs(dt) < 1e-15) break;
        }
        double p0 = 1.0, p1 = t;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n * (t * p1 - p0) / (t * t - 1.0);
        nodes[static_cast<size_t>(n - 1 - i)] = 0.5 * (t + 1.0);
        weights[static_cast<size_t>(n - 1 - i)] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
}

std::vector<double> gxi(const Tape& tape, NodeId loss, NodeId input_leaf) {
    const GradientMap grads = tape.backward(loss);
    const Tensor& x = tape.value(input_leaf);
    std::vector<double> scores(static_cast<size_t>(x.rows()), 0.0);
    if (!grads.has(input_leaf)) return scores;
    const Tensor& g = grads.at(input_leaf);
    for (int64_t i = 0; i < x.rows(); ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < x.cols(); ++j) s += g.at(i, j) * x.at(i, j);
        scores[static_cast<size_t>(i)] = s;
    }
    return scores;
}

namespace {

// Words of the nearest non-empty TR at or before `tr`; this is the
// carry-forward rule the design matrix applies to empty TRs. Empty result if
// the run opens with empty TRs.
std::vector<int64_t> tr_words_with_carry(const Corpus& corpus, int run, int tr) {
    for (int t = tr; t >= 0; --t) {
        const auto [begin, end] = corpus.words_in_tr(run, t);
        if (begin != end) {
            std::vector<int64_t> words;
            for (int64_t w = begin; w < end; ++w) words.push_back(w);
            return words;
        }
    }
    return {};
}

Tensor scaled(const Tensor& t, double s) {
    Tensor out = t;
    if (s != 1.0)
        for (auto& v : out.values) v *= s;
    return out;
}

struct LeafOut {
    Tensor base;                      // unscaled input embeddings x
    Tensor grad;                      // dLoss/dLeaf at the pass's scale
    std::vector<int64_t> token_word;  // word per token row, -1 = unscored
};

struct PassOutput {
    double loss = 0.0;
    std::vector<LeafOut> leaves;
};

// Single forward (and optional backward) of the brain-task loss with all
// attributed embedding leaves multiplied by `scale` (the IG path parameter;
// scale 1 is the real input).
PassOutput brain_pass(const ModelParams& params, const Tokenizer& tokenizer, const Corpus& corpus,
                      const EncodingModel& encoder, int run, int tr,
                      const std::vector<double>& voxel_row, int64_t context_words, int layer,
                      double scale, bool want_grads,
                      const std::unordered_set<int64_t>* zeroed_words = nullptr) {
    const int delay_depth = encoder.delay_depth;
    const int64_t h = encoder.hidden;
    if (layer < 0 || layer >= params.config.n_layers)
        throw invalid_input("brain attribution: layer out of range");
    if (tr < delay_depth - 1)
        throw invalid_input("TR " + std::to_string(tr) + " lacks the " +
                            std::to_string(delay_depth - 1) + " predecessor TRs required by the delay depth");
    if (static_cast<int64_t>(voxel_row.size()) != encoder.weights.cols())
        throw invalid_input("brain attribution: voxel row width mismatch");

    Tape tape;
    LmGraph graph(tape, params);
    PassOutput out;

    const auto heads = decompose_weights(encoder);
    std::vector<NodeId> leaf_nodes;

    NodeId yhat = -1;
    for (int d = 0; d < delay_depth; ++d) {
        const auto words = tr_words_with_carry(corpus, run, tr - d);
        NodeId tr_emb;
        if (words.empty()) {
            tr_emb = tape.leaf(Tensor::zeros(1, h));
        } else {
            std::vector<NodeId> word_nodes;
            for (int64_t w : words) {
                const int64_t begin = std::max<int64_t>(0, w - context_words + 1);
                std::vector<std::string> surfaces;
                for (int64_t i = begin; i <= w; ++i)
                    surfaces.push_back(corpus.words[static_cast<size_t>(i)].surface);
                const auto encoded = tokenizer.encode_words(surfaces);

                LeafOut leaf;
                leaf.base = embed_tokens(params, encoded.ids);
                for (size_t wi = 0; wi < surfaces.size(); ++wi) {
                    const auto [tb, te] = encoded.word_spans[wi];
                    for (int64_t t = tb; t < te; ++t)
                        leaf.token_word.push_back(begin + static_cast<int64_t>(wi));
                }
                if (zeroed_words) {
                    for (int64_t t = 0; t < leaf.base.rows(); ++t)
                        if (zeroed_words->count(leaf.token_word[static_cast<size_t>(t)]))
                            for (int64_t j = 0; j < leaf.base.cols(); ++j) leaf.base.at(t, j) = 0.0;
                }
                const NodeId leaf_node = tape.leaf(scaled(leaf.base, scale));
                leaf_nodes.push_back(leaf_node);
                out.leaves.push_back(std::move(leaf));

                const ForwardResult fwd = graph.forward_from(leaf_node);
                const auto [tb, te] = encoded.word_spans.back();
                std::vector<int64_t> final_rows;
                for (int64_t t = tb; t < te; ++t) final_rows.push_back(t);
                word_nodes.push_back(tape.mean_rows(
                    tape.gather_rows(fwd.layer_states[static_cast<size_t>(layer)], final_rows)));
            }
            tr_emb = word_nodes.size() == 1 ? word_nodes[0]
                                            : tape.mean_rows(tape.concat_rows(word_nodes));
        }

        // z-score with the encoder's full-data stats, then apply head d.
        Tensor neg_mu = Tensor::zeros(1, h);
        Tensor inv_sd = Tensor::zeros(1, h);
        for (int64_t j = 0; j < h; ++j) {
            const size_t p = static_cast<size_t>(d * h + j);
            neg_mu.values[static_cast<size_t>(j)] = -encoder.x_mean[p];
            inv_sd.values[static_cast<size_t>(j)] = 1.0 / encoder.x_std[p];
        }
        const NodeId z = tape.mul(tape.add(tr_emb, tape.leaf(std::move(neg_mu))),
                                  tape.leaf(std::move(inv_sd)));
        const NodeId part = tape.matmul(z, tape.leaf(heads[static_cast<size_t>(d)]));
        yhat = d == 0 ? part : tape.add(yhat, part);
    }

    const NodeId target = tape.leaf(Tensor::row(encoder.zscore_y(voxel_row)));
    const NodeId loss = tape.mse(yhat, target);
    out.loss = tape.value(loss).values[0];

    if (want_grads) {
        const GradientMap grads = tape.backward(loss);
        for (size_t i = 0; i < leaf_nodes.size(); ++i)
            out.leaves[i].grad = grads.has(leaf_nodes[i]) ? grads.at(leaf_nodes[i])
                                                          : Tensor::zeros_like(out.leaves[i].base);
    }
    return out;
}

// Teacher-forced NWP loss: the extended context plus all but the last target
// token go in; mean cross-entropy is taken over the target word's tokens.
PassOutput nwp_pass(const ModelParams& params, const Tokenizer& tokenizer, const Corpus& corpus,
                    int run, int tr, int delay_depth, int64_t context_words, double scale,
                    bool want_grads) {
    const auto [win_begin, win_end] = extended_window(corpus, run, tr, delay_depth, context_words);
    const int64_t target_word = win_end + 1;
    if (target_word >= corpus.size())
        throw invalid_input("nwp attribution: no word follows the extended context of TR " +
                            std::to_string(tr));

    std::vector<std::string> surfaces;
    for (int64_t w = win_begin; w <= win_end; ++w)
        surfaces.push_back(corpus.words[static_cast<size_t>(w)].surface);
    const auto ctx = tokenizer.encode_words(surfaces);
    const auto target_tokens = tokenizer.tokenize(corpus.words[static_cast<size_t>(target_word)].surface);

    const int64_t s = static_cast<int64_t>(ctx.ids.size());
    const int64_t k = static_cast<int64_t>(target_tokens.size());
    std::vector<int64_t> input = ctx.ids;
    input.insert(input.end(), target_tokens.begin(), target_tokens.end() - 1);
    const int64_t t_len = static_cast<int64_t>(input.size());
    if (t_len > params.config.max_positions)
        throw invalid_input("nwp attribution: extended context needs " + std::to_string(t_len) +
                            " tokens but max_positions is " + std::to_string(params.config.max_positions) +
                            "; truncate " + std::to_string(t_len - params.config.max_positions) +
                            " tokens by lowering context_words");

    PassOutput out;
    LeafOut leaf;
    leaf.base = embed_tokens(params, input);
    for (size_t wi = 0; wi < surfaces.size(); ++wi) {
        const auto [tb, te] = ctx.word_spans[wi];
        for (int64_t t = tb; t < te; ++t) leaf.token_word.push_back(win_begin + static_cast<int64_t>(wi));
    }
    leaf.token_word.resize(static_cast<size_t>(t_len), -1);  // teacher-forced target tokens

    Tape tape;
    LmGraph graph(tape, params);
    const NodeId leaf_node = tape.leaf(scaled(leaf.base, scale));
    const ForwardResult fwd = graph.forward_from(leaf_node);

    // logits row s-1+i predicts target token i.
    std::vector<int64_t> targets(static_cast<size_t>(t_len), 0);
    std::vector<double> weights(static_cast<size_t>(t_len), 0.0);
    for (int64_t i = 0; i < k; ++i) {
        targets[static_cast<size_t>(s - 1 + i)] = target_tokens[static_cast<size_t>(i)];
        weights[static_cast<size_t>(s - 1 + i)] = 1.0;
    }
    const NodeId loss = tape.cross_entropy(fwd.logits, targets, weights);
    out.loss = tape.value(loss).values[0];

    if (want_grads) {
        const GradientMap grads = tape.backward(loss);
        leaf.grad = grads.has(leaf_node) ? grads.at(leaf_node) : Tensor::zeros_like(leaf.base);
    }
    out.leaves.push_back(std::move(leaf));
    return out;
}

using PassFn = std::function<PassOutput(double scale, bool want_grads)>;

// Runs GXI (one pass) or IG (m passes at k/m, right-endpoint Riemann sum with
// zero baseline), sums token scores per word instance across overlapping
// contexts, and attaches distances from the most recent context word.
AttributionRecord aggregate(const PassFn& pass, const AttributionTarget& target, int64_t latest_word) {
    std::vector<LeafOut> leaves;
    double loss_value = 0.0;

    if (target.method == AttributionMethod::kGxi) {
        PassOutput out = pass(1.0, true);
        loss_value = out.loss;
        leaves = std::move(out.leaves);
    } else {
        std::vector<double> nodes, weights;
        ig_quadrature(target.ig_rule, target.ig_steps, nodes, weights);
        for (size_t k = 0; k < nodes.size(); ++k) {
            PassOutput out = pass(nodes[k], true);
            if (k == 0) {
                leaves = std::move(out.leaves);
                for (auto& lf : leaves)
                    for (auto& v : lf.grad.values) v *= weights[k];
            } else {
                for (size_t i = 0; i < leaves.size(); ++i)
                    for (size_t j = 0; j < leaves[i].grad.values.size(); ++j)
                        leaves[i].grad.values[j] += weights[k] * out.leaves[i].grad.values[j];
            }
        }
        loss_value = pass(1.0, false).loss;
    }

    std::map<int64_t, double> word_scores;
    double total = 0.0;
    for (const auto& leaf : leaves) {
        const int64_t cols = leaf.base.cols();
        for (int64_t t = 0; t < leaf.base.rows(); ++t) {
            double s = 0.0;
            for (int64_t j = 0; j < cols; ++j) s += leaf.grad.at(t, j) * leaf.base.at(t, j);
            total += s;
            const int64_t w = leaf.token_word[static_cast<size_t>(t)];
            if (w < 0) continue;
            word_scores[w] += s;
        }
    }

    AttributionRecord rec;
    rec.target = target;
    rec.loss_value = loss_value;
    rec.total_token_score = total;
    for (const auto& [w, s] : word_scores) {
        rec.word_index.push_back(w);
        rec.distance.push_back(latest_word - w);
        rec.score.push_back(s);
    }
    return rec;
}

}  // namespace

std::pair<int64_t, int64_t> extended_window(const Corpus& corpus, int run, int tr, int delay_depth,
                                            int64_t context_words) {
    if (tr < delay_depth - 1)
        throw invalid_input("TR " + std::to_string(tr) + " lacks the " + std::to_string(delay_depth - 1) +
                            " predecessor TRs required by the delay depth");
    int64_t earliest = corpus.size();
    for (int d = 0; d < delay_depth; ++d) {
        const auto words = tr_words_with_carry(corpus, run, tr - d);
        for (int64_t w : words) earliest = std::min(earliest, std::max<int64_t>(0, w - context_words + 1));
    }
    if (earliest == corpus.size())
        throw invalid_input("extended_window: no words found in the delay window");
    const int64_t latest = corpus.last_word_of_tr(run, tr);
    return {earliest, latest};
}

AttributionRecord attribute_brain_tr(const ModelParams& params, const Tokenizer& tokenizer,
                                     const Corpus& corpus, const EncodingModel& encoder,
                                     int run, int tr, const std::vector<double>& voxel_row,
                                     const AttributionOptions& opts) {
    AttributionTarget target;
    target.task = AttributionTask::kBrain;
    target.method = opts.method;
    target.layer = encoder.layer;
    target.subject = encoder.subject;
    target.run = run;
    target.tr = tr;
    target.ig_steps = opts.ig_steps;
    target.ig_rule = opts.ig_rule;
    const auto pass = [&](double scale, bool want_grads) {
        return brain_pass(params, tokenizer, corpus, encoder, run, tr, voxel_row,
                          opts.context_words, encoder.layer, scale, want_grads);
    };
    return aggregate(pass, target, corpus.last_word_of_tr(run, tr));
}

AttributionRecord attribute_nwp(const ModelParams& params, const Tokenizer& tokenizer,
                                const Corpus& corpus, int run, int tr, int delay_depth,
                                const AttributionOptions& opts) {
    AttributionTarget target;
    target.task = AttributionTask::kNwp;
    target.method = opts.method;
    target.run = run;
    target.tr = tr;
    target.ig_steps = opts.ig_steps;
    target.ig_rule = opts.ig_rule;
    const auto pass = [&](double scale, bool want_grads) {
        return nwp_pass(params, tokenizer, corpus, run, tr, delay_depth, opts.context_words,
                        scale, want_grads);
    };
    return aggregate(pass, target, corpus.last_word_of_tr(run, tr));
}

double brain_loss_at_scale(const ModelParams& params, const Tokenizer& tokenizer,
                           const Corpus& corpus, const EncodingModel& encoder, int run, int tr,
                           const std::vector<double>& voxel_row, int64_t context_words,
                           double scale) {
    return brain_pass(params, tokenizer, corpus, encoder, run, tr, voxel_row, context_words,
                      encoder.layer, scale, false)
        .loss;
}

double nwp_loss_at_scale(const ModelParams& params, const Tokenizer& tokenizer, const Corpus& corpus,
                         int run, int tr, int delay_depth, int64_t context_words, double scale) {
    return nwp_pass(params, tokenizer, corpus, run, tr, delay_depth, context_words, scale, false).loss;
}

double brain_loss_with_zeroed_words(const ModelParams& params, const Tokenizer& tokenizer,
                                    const Corpus& corpus, const EncodingModel& encoder, int run,
                                    int tr, const std::vector<double>& voxel_row,
                                    int64_t context_words, const std::vector<int64_t>& zeroed_words) {
    const std::unordered_set<int64_t> zeroed(zeroed_words.begin(), zeroed_words.end());
    return brain_pass(params, tokenizer, corpus, encoder, run, tr, voxel_row, context_words,
                      encoder.layer, 1.0, false, &zeroed)
        .loss;
}

void save_attributions(const std::vector<AttributionRecord>& records, const std::string& path) {
    std::string body;
    for (const auto& rec : records) {
        json j;
        j["task"] = task_name(rec.target.task);
        j["method"] = method_name(rec.target.method);
        if (rec.target.task == AttributionTask::kBrain) {
            j["layer"] = rec.target.layer;
            j["subject"] = rec.target.subject;
        }
        j["run"] = rec.target.run;
        j["tr"] = rec.target.tr;
        if (rec.target.method == AttributionMethod::kIg) {
            j["ig_steps"] = rec.target.ig_steps;
            j["ig_rule"] = ig_rule_name(rec.target.ig_rule);
        }
        j["loss"] = rec.loss_value;
        j["score_total"] = rec.total_token_score;
        j["word_index"] = rec.word_index;
        j["distance"] = rec.distance;
        j["score"] = rec.score;
        body += j.dump() + "\n";
    }
    write_file_atomic(path, body);
}

std::vector<AttributionRecord> load_attributions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw invalid_input("attribution file: cannot open " + path);
    std::vector<AttributionRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw invalid_input("attribution file: malformed JSON line");
        AttributionRecord rec;
        rec.target.task = j.at("task").get<std::string>() == "brain" ? AttributionTask::kBrain
                                                                     : AttributionTask::kNwp;
        rec.target.method = method_from_name(j.at("method").get<std::string>());
        if (rec.target.task == AttributionTask::kBrain) {
            rec.target.layer = j.at("layer").get<int>();
            rec.target.subject = j.at("subject").get<int>();
        }
        rec.target.run = j.at("run").get<int>();
        rec.target.tr = j.at("tr").get<int>();
        if (j.contains("ig_steps")) rec.target.ig_steps = j.at("ig_steps").get<int>();
        if (j.contains("ig_rule")) rec.target.ig_rule = ig_rule_from_name(j.at("ig_rule").get<std::string>());
        rec.loss_value = j.at("loss").get<double>();
        rec.total_token_score = j.value("score_total", 0.0);
        rec.word_index = j.at("word_index").get<std::vector<int64_t>>();
        rec.distance = j.at("distance").get<std::vector<int64_t>>();
        rec.score = j.at("score").get<std::vector<double>>();
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace brainattr
