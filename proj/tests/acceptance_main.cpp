// Acceptance suite: runs every exit criterion at its stated tolerance and
// prints one pass/fail line per criterion. Exit code is the failure count.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "brainattr/attribution.hpp"
#include "brainattr/io_util.hpp"
#include "brainattr/metrics.hpp"
#include "brainattr/pipeline.hpp"
#include "brainattr/synthdata.hpp"
#include "helpers.hpp"

using namespace brainattr;
using testutil::GraphSpec;
using testutil::random_tensor;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool pass, const std::string& detail,
            double seconds) {
    std::printf("[%s] criterion %2d: %-28s %s (%.1fs)\n", pass ? "PASS" : "FAIL", index,
                name.c_str(), detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

template <typename Fn>
void criterion(int index, const std::string& name, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    bool pass = false;
    std::string detail;
    try {
        std::tie(pass, detail) = fn();
    } catch (const std::exception& e) {
        pass = false;
        detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report(index, name, pass, detail, secs);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Shared world: synthetic corpus + trained toy transformer + fitted encoder.
// ---------------------------------------------------------------------------

struct World {
    Corpus corpus;
    ModelParams params{};
    Tokenizer tokenizer{256};
    DesignMatrix design;
    ResponseMatrix responses;
    EncodingModel encoder;
    int64_t context_words = 10;
};

World build_world() {
    World w;
    SyntheticSpec spec;
    spec.n_words = 320;
    spec.n_runs = 1;
    spec.voxels = 16;
    spec.noise_sigma = 0.05;
    spec.seed = 3;
    w.corpus = gen_corpus(spec).corpus;

    ModelConfig mc;
    mc.family = ModelFamily::kTransformer;
    mc.n_layers = 3;
    mc.hidden_size = 16;
    mc.n_heads = 2;
    mc.vocab_size = 256;
    mc.max_positions = 128;
    mc.seed = 3;

    std::vector<std::string> surfaces;
    for (const auto& word : w.corpus.words) surfaces.push_back(word.surface);
    const auto stream = w.tokenizer.encode_words(surfaces).ids;
    TrainOptions topt;
    topt.steps = 800;
    topt.learning_rate = 5e-4;
    topt.seq_len = 24;
    w.params = train_lm(mc, stream, topt);

    const auto layers = compute_stimulus_embeddings(w.corpus, w.params, w.tokenizer,
                                                    w.context_words, 2);
    w.design = delay_concatenate(layers[1], 4);
    const Tensor w_star = random_linear_map(w.design.values.cols(), spec.voxels, spec.seed);
    w.responses = gen_brain_responses(w.design, w_star, spec.noise_sigma, spec.seed);
    w.encoder = nested_cv(w.design, w.responses, make_contiguous_folds(w.design.rows(), 4, 3),
                          default_lambda_grid(), nullptr);
    w.encoder.layer = 1;
    return w;
}

std::vector<double> voxel_row(const World& w, int64_t row) {
    std::vector<double> y(static_cast<size_t>(w.responses.values.cols()));
    for (int64_t j = 0; j < w.responses.values.cols(); ++j)
        y[static_cast<size_t>(j)] = w.responses.values.at(row, j);
    return y;
}

// ---------------------------------------------------------------------------
// Criterion 1: randomized composite graphs vs central finite differences.
// ---------------------------------------------------------------------------

GraphSpec random_graph(Rng& rng, int kind) {
    GraphSpec spec;
    const int64_t m = 2 + static_cast<int64_t>(rng.next_below(4));
    const int64_t k = 2 + static_cast<int64_t>(rng.next_below(4));
    const int64_t n = 2 + static_cast<int64_t>(rng.next_below(4));
    switch (kind % 8) {
        case 0:  // attention-style: softmax(Q K^T) V against a target
            spec.leaves = {random_tensor(rng, m, k), random_tensor(rng, n, k),
                           random_tensor(rng, n, k), random_tensor(rng, m, k)};
            spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
                const NodeId att = t.softmax_last(t.scale(t.matmul_nt(ids[0], ids[1]), 0.5));
                return t.mse(t.matmul(att, ids[2]), ids[3]);
            };
            break;
        case 1:  // gated mlp: (silu(xW1) . xW3) W2
            spec.leaves = {random_tensor(rng, m, k), random_tensor(rng, k, n),
                           random_tensor(rng, k, n), random_tensor(rng, n, k)};
            spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
                const NodeId gate = t.silu(t.matmul(ids[0], ids[1]));
                const NodeId lin = t.matmul(ids[0], ids[2]);
                return t.mse(t.matmul(t.mul(gate, lin), ids[3]),
                             t.leaf(Tensor::zeros(t.value(ids[0]).rows(), t.value(ids[3]).cols())));
            };
            break;
        case 2: {  // rms_norm residual block
            spec.leaves = {random_tensor(rng, m, k), random_tensor(rng, 1, k),
                           random_tensor(rng, k, k)};
            spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
                const NodeId normed = t.mul(t.rms_norm(ids[0]), ids[1]);
                const NodeId res = t.add(ids[0], t.matmul(normed, ids[2]));
                return t.mse(res, t.leaf(Tensor::zeros(t.value(ids[0]).rows(), t.value(ids[0]).cols())));
            };
            break;
        }
        case 3: {  // scan + gate
            Tensor decay = random_tensor(rng, 1, k, 0.4);
            for (auto& v : decay.values) v = 0.2 + 0.6 * std::abs(std::tanh(v));
            spec.leaves = {random_tensor(rng, m, k), decay, random_tensor(rng, m, k)};
            spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
                const NodeId h = t.ssm_scan(ids[0], ids[1]);
                return t.mse(t.mul(h, t.sigmoid(ids[2])),
                             t.leaf(Tensor::zeros(t.value(ids[0]).rows(), t.value(ids[0]).cols())));
            };
            break;
        }
        case 4: {  // cross entropy over projected logits
            spec.leaves = {random_tensor(rng, m, k), random_tensor(rng, k, 5 + n)};
            std::vector<int64_t> targets;
            std::vector<double> weights;
            for (int64_t r = 0; r < m; ++r) {
                targets.push_back(static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(5 + n))));
                weights.push_back(rng.next_below(4) == 0 ? 0.0 : 1.0);
            }
            if (std::count(weights.begin(), weights.end(), 1.0) == 0) weights[0] = 1.0;
            spec.build = [targets, weights](Tape& t, const std::vector<NodeId>& ids) {
                return t.cross_entropy(t.matmul(ids[0], ids[1]), targets, weights);
            };
            break;
        }
        case 5: {  // gather + mean + concat + slice
            spec.leaves = {random_tensor(rng, 4 + m, k), random_tensor(rng, 1, k)};
            std::vector<int64_t> picks;
            for (int i = 0; i < 3; ++i)
                picks.push_back(static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(4 + m))));
            spec.build = [picks](Tape& t, const std::vector<NodeId>& ids) {
                const NodeId g = t.gather_rows(ids[0], picks);
                const NodeId mean = t.mean_rows(g);
                const NodeId cat = t.concat_cols({mean, ids[1]});
                const NodeId sl = t.slice_cols(cat, 1, t.value(cat).cols() - 1);
                return t.mse(sl, t.leaf(Tensor::zeros(1, t.value(sl).cols())));
            };
            break;
        }
        case 6:  // two-branch sum of losses
            spec.leaves = {random_tensor(rng, m, k), random_tensor(rng, k, n),
                           random_tensor(rng, m, n)};
            spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
                const NodeId prod = t.matmul(ids[0], ids[1]);
                const NodeId l1 = t.mse(prod, ids[2]);
                const NodeId l2 = t.mse(t.silu(prod), ids[2]);
                return t.scale(t.add(l1, l2), 0.5);
            };
            break;
        default:  // concat_rows + softmax chain
            spec.leaves = {random_tensor(rng, m, k), random_tensor(rng, n, k)};
            spec.build = [](Tape& t, const std::vector<NodeId>& ids) {
                const NodeId cat = t.concat_rows({ids[0], ids[1]});
                const NodeId sm = t.softmax_last(cat);
                return t.mse(sm, t.leaf(Tensor::zeros(t.value(cat).rows(), t.value(cat).cols())));
            };
            break;
    }
    return spec;
}

std::pair<bool, std::string> criterion_gradients() {
    Rng rng(2024);
    double worst = 0.0;
    const int graphs = 120;
    for (int g = 0; g < graphs; ++g) {
        const GraphSpec spec = random_graph(rng, g);
        worst = std::max(worst, testutil::fd_relative_error(spec, 1e-4));
    }
    return {worst < 1e-4, std::to_string(graphs) + " graphs, worst rel err " + fmt(worst)};
}

// ---------------------------------------------------------------------------
// Criterion 2: IG completeness on the toy model, both losses.
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion_completeness(const World& w) {
    const std::vector<int64_t> rows = {2, 14, 27, 41, 55, 70};
    double worst20 = 0.0, worst200 = 0.0;
    for (const bool nwp_task : {false, true}) {
        for (const int m : {20, 200}) {
            for (int64_t row : rows) {
                const auto [run, tr] = w.design.row_trs[static_cast<size_t>(row)];
                const auto y = voxel_row(w, row);
                AttributionOptions opts;
                opts.method = AttributionMethod::kIg;
                opts.ig_steps = m;
                opts.context_words = w.context_words;

                double total, fx, f0;
                if (nwp_task) {
                    const auto rec = attribute_nwp(w.params, w.tokenizer, w.corpus, run, tr, 4, opts);
                    total = rec.total_token_score;
                    fx = nwp_loss_at_scale(w.params, w.tokenizer, w.corpus, run, tr, 4, w.context_words, 1.0);
                    f0 = nwp_loss_at_scale(w.params, w.tokenizer, w.corpus, run, tr, 4, w.context_words, 0.0);
                } else {
                    const auto rec = attribute_brain_tr(w.params, w.tokenizer, w.corpus, w.encoder,
                                                        run, tr, y, opts);
                    total = rec.total_token_score;
                    fx = brain_loss_at_scale(w.params, w.tokenizer, w.corpus, w.encoder, run, tr, y,
                                             w.context_words, 1.0);
                    f0 = brain_loss_at_scale(w.params, w.tokenizer, w.corpus, w.encoder, run, tr, y,
                                             w.context_words, 0.0);
                }
                const double err = std::abs(total - (fx - f0)) / std::abs(fx - f0);
                (m == 20 ? worst20 : worst200) = std::max(m == 20 ? worst20 : worst200, err);
            }
        }
    }
    const bool pass = worst20 < 1e-2 && worst200 < 1e-3;
    return {pass, "worst rel err " + fmt(worst20) + " @ m=20, " + fmt(worst200) + " @ m=200"};
}

// ---------------------------------------------------------------------------
// Criterion 3: GXI == IG on a purely linear head, any m.
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion_linear_coincidence() {
    Rng rng(77);
    const int64_t t_len = 6, h = 5, v = 4;
    const Tensor x = random_tensor(rng, t_len, h);
    const Tensor head = random_tensor(rng, h, v);
    const Tensor readout = random_tensor(rng, v, 1);
    Tensor neg_mu = random_tensor(rng, 1, h, 0.2);
    Tensor inv_sd = Tensor::zeros(1, h);
    for (auto& s : inv_sd.values) s = 1.0 + std::abs(rng.next_gaussian());

    auto linear_loss = [&](Tape& tape, NodeId leaf) {
        const NodeId z = tape.mul(tape.add(tape.mean_rows(leaf), tape.leaf(neg_mu)), tape.leaf(inv_sd));
        return tape.scale(tape.matmul(tape.matmul(z, tape.leaf(head)), tape.leaf(readout)), 3.0);
    };

    Tape base;
    const NodeId base_leaf = base.leaf(x);
    const auto gxi_scores = gxi(base, linear_loss(base, base_leaf), base_leaf);

    double worst = 0.0;
    for (const IgRule rule : {IgRule::kGaussLegendre, IgRule::kRiemannRight}) {
        for (const int m : {1, 7, 20, 64}) {
            std::vector<double> nodes, weights;
            ig_quadrature(rule, m, nodes, weights);
            std::vector<double> ig_scores(static_cast<size_t>(t_len), 0.0);
            for (size_t k = 0; k < nodes.size(); ++k) {
                Tensor xs = x;
                for (auto& val : xs.values) val *= nodes[k];
                Tape tape;
                const NodeId leaf = tape.leaf(xs);
                const auto grads = tape.backward(linear_loss(tape, leaf));
                const Tensor& g = grads.at(leaf);
                for (int64_t t = 0; t < t_len; ++t) {
                    double s = 0.0;
                    for (int64_t j = 0; j < h; ++j) s += g.at(t, j) * x.at(t, j);
                    ig_scores[static_cast<size_t>(t)] += weights[k] * s;
                }
            }
            for (int64_t t = 0; t < t_len; ++t)
                worst = std::max(worst, std::abs(ig_scores[static_cast<size_t>(t)] -
                                                 gxi_scores[static_cast<size_t>(t)]));
        }
    }
    return {worst < 1e-10, "max |GXI - IG| = " + fmt(worst) + " over both rules, m in {1,7,20,64}"};
}

// ---------------------------------------------------------------------------
// Criterion 4: ridge oracle.
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion_ridge() {
    Rng rng(99);
    const Tensor x = random_tensor(rng, 25, 6);
    const Tensor y = random_tensor(rng, 25, 3);
    double gd_dev = 0.0;
    for (double lambda : {0.1, 1.0, 10.0}) {
        const Tensor closed = fit_ridge(x, y, lambda);
        const Tensor gd = testutil::ridge_by_gradient_descent(x, y, lambda);
        for (size_t i = 0; i < closed.values.size(); ++i)
            gd_dev = std::max(gd_dev, std::abs(closed.values[i] - gd.values[i]));
    }

    // Noiseless linear responses through a pipeline design that is tall
    // enough for exact recovery (rows well above D*H columns).
    SyntheticSpec spec;
    spec.n_words = 400;
    spec.n_runs = 1;
    spec.voxels = 8;
    spec.seed = 171;
    const Corpus corpus = gen_corpus(spec).corpus;
    ModelConfig mc;
    mc.n_layers = 3;
    mc.hidden_size = 8;
    mc.n_heads = 2;
    mc.vocab_size = 256;
    mc.max_positions = 64;
    mc.seed = 171;
    const ModelParams params = ModelParams::init(mc);
    const Tokenizer tok(mc.vocab_size);
    const auto layers = compute_stimulus_embeddings(corpus, params, tok, 8, 2);
    const DesignMatrix design = delay_concatenate(layers[1], 4);

    const Tensor w_star = random_linear_map(design.values.cols(), spec.voxels, 171);
    const ResponseMatrix clean = gen_brain_responses(design, w_star, 0.0, 171);
    AlignmentScore clean_score;
    nested_cv(design, clean, make_contiguous_folds(design.rows(), 4, 3), default_lambda_grid(),
              &clean_score);

    // Pure noise, five seeds.
    double noise_mean = 0.0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        ResponseMatrix noise = clean;
        Rng nrng(4000 + seed);
        for (auto& v : noise.values.values) v = nrng.next_gaussian();
        AlignmentScore s;
        nested_cv(design, noise, make_contiguous_folds(design.rows(), 4, 3), default_lambda_grid(),
                  &s);
        noise_mean += s.mean_r;
    }
    noise_mean /= 5.0;

    const bool pass = gd_dev < 1e-6 && clean_score.mean_r > 0.99 && std::abs(noise_mean) < 0.1;
    return {pass, "gd dev " + fmt(gd_dev) + ", clean r " + fmt(clean_score.mean_r) +
                      ", noise mean r " + fmt(noise_mean)};
}

// ---------------------------------------------------------------------------
// Criterion 5: decomposition exactness, bit level.
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion_decomposition() {
    Rng rng(123);
    DesignMatrix design;
    design.hidden = 8;
    design.delay_depth = 4;
    design.values = random_tensor(rng, 60, 32);
    for (int64_t r = 0; r < 60; ++r) design.row_trs.emplace_back(0, static_cast<int>(r + 3));
    ResponseMatrix resp;
    resp.values = random_tensor(rng, 60, 5);
    resp.row_trs = design.row_trs;
    const EncodingModel model =
        nested_cv(design, resp, make_contiguous_folds(60, 3, 3), {0.5}, nullptr);

    const auto heads = decompose_weights(model);
    // Restack bit-exactly.
    size_t offset = 0;
    for (const auto& g : heads) {
        for (size_t i = 0; i < g.values.size(); ++i)
            if (g.values[i] != model.weights.values[offset + i]) return {false, "restack differs"};
        offset += g.values.size();
    }

    int64_t mismatches = 0;
    for (int64_t r = 0; r < design.values.rows(); ++r) {
        std::vector<double> row(static_cast<size_t>(design.values.cols()));
        for (int64_t p = 0; p < design.values.cols(); ++p) row[static_cast<size_t>(p)] = design.values.at(r, p);
        const auto direct = model.predict_row(row);
        for (int64_t j = 0; j < resp.values.cols(); ++j) {
            double acc = 0.0;
            for (int d = 0; d < model.delay_depth; ++d) {
                double part = 0.0;
                for (int64_t k = 0; k < model.hidden; ++k) {
                    const size_t p = static_cast<size_t>(d * model.hidden + k);
                    part += (row[p] - model.x_mean[p]) * (1.0 / model.x_std[p]) *
                            heads[static_cast<size_t>(d)].at(k, j);
                }
                acc += part;
            }
            if (acc != direct[static_cast<size_t>(j)]) ++mismatches;
        }
    }
    return {mismatches == 0,
            "all " + std::to_string(design.values.rows()) + " rows bit-identical (" +
                std::to_string(mismatches) + " mismatches)"};
}

// ---------------------------------------------------------------------------
// Planted-signal world, built through the command pipeline.
// ---------------------------------------------------------------------------

RunConfig planted_config(const std::string& out_dir) {
    RunConfig c;
    c.seed = 17;
    c.jobs = 2;
    c.paths.out_dir = out_dir;
    c.paths.corpus = out_dir + "/corpus.jsonl";
    c.paths.responses = out_dir + "/responses.bin";
    c.paths.checkpoint = out_dir + "/model.bin";
    c.model.n_layers = 3;
    c.model.hidden_size = 16;
    c.model.n_heads = 2;
    c.model.vocab_size = 256;
    c.model.max_positions = 128;
    c.model.seed = 17;
    c.train.steps = 800;
    c.train.learning_rate = 5e-4;
    c.train.seq_len = 24;
    // Short contexts keep every window word causally relevant, which the
    // leave-one-out rank comparison depends on.
    c.pipeline.context_words = 8;
    c.synth.words = 480;
    c.synth.runs = 1;
    c.synth.voxels = 24;
    // Noiseless planted responses: the held-out fit is then exact, masking
    // the designated words collapses it, and the leave-one-out oracle sees
    // structured (not noise-dominated) deltas.
    c.synth.noise_sigma = 0.0;
    c.synth.planted = true;
    // One word per TR: each TR's response is driven by its designated word,
    // so masking the top-attributed words abolishes the alignment.
    c.synth.word_duration_s = 2.0;
    c.analysis.iou_draws = 50;
    c.masking.thresholds = {1};
    c.masking.seeds = 5;
    return c;
}

struct PlantedWorld {
    RunConfig config;
    Corpus corpus;
    ModelParams params{};
    Tokenizer tokenizer{256};
    ResponseMatrix responses;
    EncodingModel encoder;
    std::vector<AttributionRecord> brain_records;  // signal layer
    std::map<std::pair<int, int>, int64_t> planted_by_tr;
};

PlantedWorld build_planted(const std::string& out_dir) {
    PlantedWorld w;
    w.config = planted_config(out_dir);
    fs::remove_all(out_dir);
    cmd_synth(w.config);
    cmd_train(w.config);
    cmd_embed(w.config);
    cmd_synth(w.config);
    cmd_fit(w.config);
    cmd_attribute(w.config);
    cmd_mask(w.config);

    w.corpus = load_corpus(w.config.paths.corpus);
    w.params = load_model(w.config.paths.checkpoint);
    w.responses = load_responses(w.config.paths.responses);
    const int signal_layer = w.config.resolved_signal_layer();
    w.encoder = load_encoder(w.config.encoder_path(signal_layer));

    const auto records = load_attributions(w.config.attributions_path());
    for (const auto& rec : records)
        if (rec.target.task == AttributionTask::kBrain && rec.target.layer == signal_layer)
            w.brain_records.push_back(rec);

    const nlohmann::json planted = nlohmann::json::parse(read_file(w.config.planted_path()));
    for (int64_t pos : planted.at("positions").get<std::vector<int64_t>>()) {
        const auto& word = w.corpus.words[static_cast<size_t>(pos)];
        w.planted_by_tr[{word.run, word.tr_index}] = pos;
    }
    return w;
}

std::pair<bool, std::string> criterion_planted(const PlantedWorld& w) {
    double share_sum = 0.0, uniform_sum = 0.0;
    int64_t counted = 0;
    for (const auto& rec : w.brain_records) {
        const auto it = w.planted_by_tr.find({rec.target.run, rec.target.tr});
        if (it == w.planted_by_tr.end()) continue;
        double mass = 0.0, planted_mass = 0.0;
        for (size_t i = 0; i < rec.size(); ++i) {
            mass += std::abs(rec.score[i]);
            if (rec.word_index[i] == it->second) planted_mass += std::abs(rec.score[i]);
        }
        if (mass == 0.0) continue;
        share_sum += planted_mass / mass;
        uniform_sum += 1.0 / static_cast<double>(rec.size());
        ++counted;
    }
    const double share = share_sum / static_cast<double>(counted);
    const double uniform = uniform_sum / static_cast<double>(counted);

    // Spearman of |GXI| vs the leave-one-out oracle over a spread of TRs.
    std::vector<double> spearmans;
    for (size_t pick = 4; pick < w.brain_records.size(); pick += 11) {
        const auto& rec = w.brain_records[pick];
        std::vector<double> y(static_cast<size_t>(w.responses.values.cols()));
        bool found = false;
        for (size_t r = 0; r < w.responses.row_trs.size(); ++r)
            if (w.responses.row_trs[r] == std::make_pair(rec.target.run, rec.target.tr)) {
                for (int64_t j = 0; j < w.responses.values.cols(); ++j)
                    y[static_cast<size_t>(j)] = w.responses.values.at(static_cast<int64_t>(r), j);
                found = true;
            }
        if (!found) continue;
        const auto deltas = brute_force_word_importance(w.params, w.tokenizer, w.corpus, w.encoder,
                                                        rec.target.run, rec.target.tr, y,
                                                        w.config.pipeline.context_words);
        std::map<int64_t, double> delta_by_word;
        for (const auto& d : deltas) delta_by_word[d.word_index] = d.delta;
        std::vector<double> a, b;
        for (size_t i = 0; i < rec.size(); ++i) {
            const auto it = delta_by_word.find(rec.word_index[i]);
            if (it == delta_by_word.end()) continue;
            a.push_back(std::abs(rec.score[i]));
            b.push_back(it->second);
        }
        spearmans.push_back(testutil::spearman(a, b));
        if (spearmans.size() >= 6) break;
    }
    double rho = 0.0;
    for (double s : spearmans) rho += s;
    rho /= static_cast<double>(spearmans.size());

    const bool pass = share > 5.0 * uniform && rho > 0.6;
    return {pass, "share " + fmt(share) + " vs uniform " + fmt(uniform) + " (x" +
                      fmt(share / uniform) + "), mean spearman " + fmt(rho) + " over " +
                      std::to_string(spearmans.size()) + " TRs"};
}

std::pair<bool, std::string> criterion_masking(const PlantedWorld& w) {
    // Parse masking.csv emitted by cmd_mask.
    std::ifstream in(w.config.report_path("masking.csv"));
    std::string line;
    std::getline(in, line);  // header
    double min_brain_drop = 1e300;
    bool saw_brain = false;
    std::map<int, double> nwp_top, nwp_random;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::vector<std::string> cells;
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 11) continue;
        const std::string& task = cells[0];
        const double threshold = std::stod(cells[4]);
        const int seed = std::stoi(cells[5]);
        const std::string& selection = cells[6];
        const double delta = std::stod(cells[10]);
        if (threshold != 1.0) continue;
        if (task == "brain" && selection == "top") {
            min_brain_drop = std::min(min_brain_drop, delta);
            saw_brain = true;
        } else if (task == "nwp") {
            (selection == "top" ? nwp_top : nwp_random)[seed] = delta;
        }
    }
    int ordered = 0;
    for (const auto& [seed, top] : nwp_top)
        if (nwp_random.count(seed) && top > nwp_random.at(seed)) ++ordered;
    const bool pass = saw_brain && min_brain_drop > 90.0 && nwp_top.size() >= 5 &&
                      ordered == static_cast<int>(nwp_top.size());
    return {pass, "min brain r drop " + fmt(min_brain_drop) + "%, nwp top>random in " +
                      std::to_string(ordered) + "/" + std::to_string(nwp_top.size()) + " seeds"};
}

// ---------------------------------------------------------------------------
// Criterion 8: metric arithmetic.
// ---------------------------------------------------------------------------

double exact_hypergeom_iou(int64_t n, int64_t a, int64_t b) {
    auto log_choose = [](int64_t nn, int64_t kk) {
        return std::lgamma(static_cast<double>(nn) + 1) - std::lgamma(static_cast<double>(kk) + 1) -
               std::lgamma(static_cast<double>(nn - kk) + 1);
    };
    double e = 0.0;
    for (int64_t x = std::max<int64_t>(0, a + b - n); x <= std::min(a, b); ++x)
        e += std::exp(log_choose(b, x) + log_choose(n - b, a - x) - log_choose(n, a)) *
             static_cast<double>(x) / static_cast<double>(a + b - x);
    return e;
}

std::pair<bool, std::string> criterion_metrics() {
    std::vector<std::string> problems;

    auto rec_of = [](const std::vector<double>& scores) {
        AttributionRecord rec;
        const int64_t n = static_cast<int64_t>(scores.size());
        for (int64_t i = 0; i < n; ++i) {
            rec.word_index.push_back(i);
            rec.distance.push_back(n - 1 - i);
            rec.score.push_back(scores[static_cast<size_t>(i)]);
        }
        return rec;
    };

    // Top-set arithmetic.
    if (top_set(rec_of({9, 1}), 50).words != std::vector<int64_t>{0}) problems.push_back("topset50");
    if (top_set(rec_of({9, 1}), 98).words != std::vector<int64_t>{0, 1}) problems.push_back("topset98");

    // IoU arithmetic.
    std::vector<int64_t> a10, b10;
    for (int64_t i = 0; i < 10; ++i) a10.push_back(i);
    for (int64_t i = 5; i < 15; ++i) b10.push_back(i);
    if (std::abs(iou(a10, b10) - 5.0 / 15.0) > 1e-15) problems.push_back("iou");
    if (iou(a10, a10) != 1.0) problems.push_back("iou self");

    // CoM arithmetic.
    if (com(rec_of({0, 0, 0, 1})) != 0.0) problems.push_back("com recent");
    if (std::abs(com(rec_of({1, 1, 1, 1, 1})) - 2.0) > 1e-15) problems.push_back("com uniform");

    // Spread AUC of a uniform record against the ceil closed form.
    {
        const auto rec = rec_of(std::vector<double>(41, 1.0));
        const auto grid = paper_thresholds();
        const auto curve = spread_curve({&rec}, grid);
        double auc = 0.0;
        std::vector<double> expect;
        for (double t : grid) expect.push_back(std::ceil(41.0 * t / 100.0));
        for (size_t i = 1; i < grid.size(); ++i)
            auc += (grid[i] - grid[i - 1]) / 100.0 * 0.5 * (expect[i] + expect[i - 1]);
        for (size_t i = 0; i < grid.size(); ++i)
            if (curve.mean_unique_words[i] != expect[i]) problems.push_back("spread curve");
        if (std::abs(curve.auc - auc) > 1e-12) problems.push_back("spread auc");
    }

    // Benjamini-Hochberg worked example: all four rejected at alpha 0.05.
    for (double adj : bh_adjust({0.01, 0.04, 0.03, 0.005}))
        if (adj > 0.05) problems.push_back("bh");

    // Monte-Carlo baseline within 3 standard errors of the exact expectation.
    double worst_gap = 0.0;
    for (auto [n, sa, sb] : {std::tuple<int64_t, int64_t, int64_t>{100, 1, 1},
                             std::tuple<int64_t, int64_t, int64_t>{30, 5, 7},
                             std::tuple<int64_t, int64_t, int64_t>{50, 10, 10}}) {
        const double exact = exact_hypergeom_iou(n, sa, sb);
        const double mc = random_baseline_iou(n, sa, sb, 10000, 5);
        const double gap = std::abs(mc - exact) / (3.0 * 0.5 / std::sqrt(10000.0));
        worst_gap = std::max(worst_gap, gap);
        if (gap > 1.0) problems.push_back("mc baseline");
    }

    std::string detail = problems.empty()
                             ? "all worked examples exact; MC gap " + fmt(worst_gap) + " of 3 SE"
                             : "failed: " + problems.front();
    return {problems.empty(), detail};
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism of the full pipeline.
// ---------------------------------------------------------------------------

RunConfig determinism_config(const std::string& out_dir) {
    RunConfig c;
    c.seed = 29;
    c.jobs = 2;
    c.paths.out_dir = out_dir;
    c.paths.corpus = out_dir + "/corpus.jsonl";
    c.paths.responses = out_dir + "/responses.bin";
    c.paths.checkpoint = out_dir + "/model.bin";
    c.model.n_layers = 3;
    c.model.hidden_size = 16;
    c.model.n_heads = 2;
    c.model.vocab_size = 256;
    c.model.max_positions = 128;
    c.model.seed = 29;
    c.train.steps = 60;
    c.train.seq_len = 16;
    c.pipeline.context_words = 8;
    c.synth.words = 160;
    c.synth.runs = 1;
    c.synth.voxels = 8;
    c.attribution.tr_limit = 8;
    c.analysis.iou_draws = 25;
    c.masking.seeds = 2;
    return c;
}

void run_pipeline(const RunConfig& c) {
    cmd_synth(c);
    cmd_train(c);
    cmd_embed(c);
    cmd_synth(c);
    cmd_fit(c);
    cmd_attribute(c);
    cmd_analyze(c);
    cmd_mask(c);
    cmd_report(c);
}

std::pair<bool, std::string> criterion_determinism() {
    const std::string dir = (fs::temp_directory_path() / "ba_acceptance_det").string();
    const std::vector<std::string> files = {"corpus.jsonl",  "responses.bin", "model.bin",
                                            "scores.csv",    "attributions.jsonl",
                                            "iou.csv",       "com.csv",       "spread.csv",
                                            "positions.csv", "features.csv",  "stats.csv",
                                            "masking.csv",   "summary.json"};
    fs::remove_all(dir);
    const RunConfig c = determinism_config(dir);
    run_pipeline(c);
    std::map<std::string, std::string> first;
    for (const auto& f : files) first[f] = sha256_file_hex(c.report_path(f));

    fs::remove_all(dir);
    run_pipeline(c);
    int mismatched = 0;
    for (const auto& f : files)
        if (first.at(f) != sha256_file_hex(c.report_path(f))) ++mismatched;
    fs::remove_all(dir);
    return {mismatched == 0, std::to_string(files.size()) + " artifacts compared, " +
                                 std::to_string(mismatched) + " differ"};
}

// ---------------------------------------------------------------------------
// Criterion 10: directional replication of the rising IoU curve.
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion_directional(const World& w) {
    AttributionOptions opts;
    opts.context_words = w.context_words;
    double iou10 = 0.0, iou98 = 0.0;
    int64_t pairs = 0;
    for (int64_t row = 0; row < w.design.rows(); row += 3) {
        const auto [run, tr] = w.design.row_trs[static_cast<size_t>(row)];
        const auto window = extended_window(w.corpus, run, tr, 4, opts.context_words);
        if (window.second + 1 >= w.corpus.size()) continue;
        const auto ba = attribute_brain_tr(w.params, w.tokenizer, w.corpus, w.encoder, run, tr,
                                           voxel_row(w, row), opts);
        const auto nwp = attribute_nwp(w.params, w.tokenizer, w.corpus, run, tr, 4, opts);
        iou10 += iou(top_set(ba, 10).words, top_set(nwp, 10).words);
        iou98 += iou(top_set(ba, 98).words, top_set(nwp, 98).words);
        ++pairs;
    }
    iou10 /= static_cast<double>(pairs);
    iou98 /= static_cast<double>(pairs);
    const double gap = iou98 - iou10;
    return {gap > 0.3, "IoU " + fmt(iou10) + " @ t=10 vs " + fmt(iou98) + " @ t=98 (gap " +
                           fmt(gap) + ", " + std::to_string(pairs) + " TRs)"};
}

}  // namespace

int main() {
    std::printf("acceptance suite\n");

    criterion(1, "gradient correctness", [] { return criterion_gradients(); });

    const World world = build_world();
    criterion(2, "ig completeness", [&] { return criterion_completeness(world); });
    criterion(3, "linear coincidence", [] { return criterion_linear_coincidence(); });
    criterion(4, "ridge oracle", [] { return criterion_ridge(); });
    criterion(5, "decomposition exactness", [] { return criterion_decomposition(); });

    const std::string planted_dir = (fs::temp_directory_path() / "ba_acceptance_planted").string();
    const PlantedWorld planted = build_planted(planted_dir);
    criterion(6, "planted-signal attribution", [&] { return criterion_planted(planted); });
    criterion(7, "masking directionality", [&] { return criterion_masking(planted); });
    fs::remove_all(planted_dir);

    criterion(8, "metric arithmetic", [] { return criterion_metrics(); });
    criterion(9, "determinism", [] { return criterion_determinism(); });
    criterion(10, "directional replication", [&] { return criterion_directional(world); });

    std::printf("%s: %d criterion(s) failed\n", g_failures == 0 ? "SUCCESS" : "FAILURE", g_failures);
    return g_failures;
}
