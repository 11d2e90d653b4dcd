#include "brainattr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "brainattr/attribution.hpp"
#include "brainattr/corpus.hpp"
#include "brainattr/encoder.hpp"
#include "brainattr/io_util.hpp"
#include "brainattr/metrics.hpp"
#include "brainattr/parallel.hpp"
#include "brainattr/rng.hpp"
#include "brainattr/synthdata.hpp"

namespace brainattr {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

void check_known(const json& j, const std::set<std::string>& allowed, const std::string& where,
                 std::vector<std::string>& errors) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) errors.push_back("unknown field '" + it.key() + "' in " + where);
}

}  // namespace

void RunConfig::validate() const {
    std::vector<std::string> errors;
    auto err = [&](const std::string& m) { errors.push_back(m); };

    if (jobs < 1) err("jobs must be >= 1");
    if (paths.out_dir.empty()) err("paths.out_dir must not be empty");
    try {
        model.validate();
    } catch (const std::exception& e) {
        err(e.what());
    }
    if (train.steps < 0) err("train.steps must be >= 0");
    if (train.batch < 1) err("train.batch must be >= 1");
    if (train.seq_len < 2) err("train.seq_len must be >= 2");
    if (pipeline.delay_depth < 1) err("pipeline.delay_depth must be >= 1");
    if (pipeline.context_words < 1) err("pipeline.context_words must be >= 1");
    if (pipeline.ig_steps < 1) err("pipeline.ig_steps must be >= 1");
    if (pipeline.ig_rule != "gauss-legendre" && pipeline.ig_rule != "riemann-right")
        err("pipeline.ig_rule must be 'gauss-legendre' or 'riemann-right'");
    if (pipeline.bin_width < 1) err("pipeline.bin_width must be >= 1");
    if (pipeline.thresholds.empty()) err("pipeline.thresholds must not be empty");
    for (size_t i = 0; i < pipeline.thresholds.size(); ++i) {
        if (pipeline.thresholds[i] <= 0 || pipeline.thresholds[i] > 100)
            err("pipeline.thresholds entries must be in (0, 100]");
        if (i > 0 && pipeline.thresholds[i] <= pipeline.thresholds[i - 1])
            err("pipeline.thresholds must be strictly ascending");
    }
    if (folds.outer < 2) err("folds.outer must be >= 2");
    if (folds.inner < 2) err("folds.inner must be >= 2");
    if (synth.words < 8) err("synth.words must be >= 8");
    if (synth.runs < 1) err("synth.runs must be >= 1");
    if (synth.voxels < 2) err("synth.voxels must be >= 2");
    if (synth.noise_sigma < 0) err("synth.noise_sigma must be >= 0");
    if (synth.signal_layer >= model.n_layers) err("synth.signal_layer out of range");
    if (synth.tr_duration_s <= 0 || synth.word_duration_s <= 0)
        err("synth durations must be positive");
    if (synth.word_duration_s > synth.tr_duration_s)
        err("synth.word_duration_s must not exceed synth.tr_duration_s");
    if (attribution.methods.empty()) err("attribution.methods must not be empty");
    for (const auto& m : attribution.methods)
        if (m != "gxi" && m != "ig") err("attribution.methods entries must be 'gxi' or 'ig'");
    if (attribution.tr_stride < 1) err("attribution.tr_stride must be >= 1");
    if (attribution.tr_limit < 0) err("attribution.tr_limit must be >= 0");
    if (attribution.layers != "auto") {
        std::stringstream ss(attribution.layers);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                const int l = std::stoi(tok);
                if (l < 0 || l >= model.n_layers) err("attribution.layers id out of range: " + tok);
            } catch (...) {
                err("attribution.layers must be 'auto' or comma-separated layer ids");
            }
        }
    }
    if (analysis.iou_draws < 1) err("analysis.iou_draws must be >= 1");
    if (analysis.com_threshold <= 0 || analysis.com_threshold > 100)
        err("analysis.com_threshold must be in (0, 100]");
    if (masking.seeds < 1) err("masking.seeds must be >= 1");
    for (double t : masking.thresholds)
        if (t <= 0 || t > 100) err("masking.thresholds entries must be in (0, 100]");

    // Rough token budget: the extended NWP context must fit the model.
    const double max_tokens_per_word = 4.0;  // ceil(longest surface / 3) at toy scale
    const double window_words =
        static_cast<double>(pipeline.context_words) + 4.0 * pipeline.delay_depth;
    if (window_words * max_tokens_per_word > 4.0 * model.max_positions)
        err("pipeline.context_words is too large for model.max_positions (extended contexts may not fit)");

    if (!errors.empty()) {
        std::string msg = "config validation failed:";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw config_error(msg);
    }
}

std::string RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["jobs"] = jobs;
    j["paths"] = {{"out_dir", paths.out_dir},
                  {"corpus", paths.corpus},
                  {"responses", paths.responses},
                  {"checkpoint", paths.checkpoint}};
    j["model"] = {{"family", family_name(model.family)}, {"n_layers", model.n_layers},
                  {"hidden_size", model.hidden_size},   {"n_heads", model.n_heads},
                  {"vocab_size", model.vocab_size},     {"max_positions", model.max_positions},
                  {"seed", model.seed}};
    j["train"] = {{"steps", train.steps},
                  {"learning_rate", train.learning_rate},
                  {"batch", train.batch},
                  {"seq_len", train.seq_len}};
    j["pipeline"] = {{"context_words", pipeline.context_words},
                     {"delay_depth", pipeline.delay_depth},
                     {"ig_steps", pipeline.ig_steps},
                     {"ig_rule", pipeline.ig_rule},
                     {"bin_width", pipeline.bin_width},
                     {"thresholds", pipeline.thresholds}};
    j["folds"] = {{"outer", folds.outer}, {"inner", folds.inner}};
    j["synth"] = {{"words", synth.words},           {"runs", synth.runs},
                  {"voxels", synth.voxels},         {"noise_sigma", synth.noise_sigma},
                  {"planted", synth.planted},       {"signal_layer", synth.signal_layer},
                  {"tr_duration_s", synth.tr_duration_s},
                  {"word_duration_s", synth.word_duration_s}};
    j["attribution"] = {{"methods", attribution.methods},
                        {"layers", attribution.layers},
                        {"tr_stride", attribution.tr_stride},
                        {"tr_limit", attribution.tr_limit}};
    j["analysis"] = {{"iou_draws", analysis.iou_draws},
                     {"com_threshold", analysis.com_threshold},
                     {"position_thresholds", analysis.position_thresholds},
                     {"feature_thresholds", analysis.feature_thresholds}};
    j["masking"] = {{"thresholds", masking.thresholds}, {"seeds", masking.seeds}};
    return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw config_error("config: malformed JSON");
    std::vector<std::string> errors;
    check_known(j, {"seed", "jobs", "paths", "model", "train", "pipeline", "folds", "synth",
                    "attribution", "analysis", "masking"},
                "config root", errors);

    RunConfig c;
    try {
        if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
        if (j.contains("jobs")) c.jobs = j["jobs"].get<int>();
        if (j.contains("paths")) {
            const auto& p = j["paths"];
            check_known(p, {"out_dir", "corpus", "responses", "checkpoint"}, "paths", errors);
            if (p.contains("out_dir")) c.paths.out_dir = p["out_dir"].get<std::string>();
            if (p.contains("corpus")) c.paths.corpus = p["corpus"].get<std::string>();
            if (p.contains("responses")) c.paths.responses = p["responses"].get<std::string>();
            if (p.contains("checkpoint")) c.paths.checkpoint = p["checkpoint"].get<std::string>();
        }
        if (j.contains("model")) {
            const auto& m = j["model"];
            check_known(m, {"family", "n_layers", "hidden_size", "n_heads", "vocab_size",
                            "max_positions", "seed"},
                        "model", errors);
            if (m.contains("family")) c.model.family = family_from_name(m["family"].get<std::string>());
            if (m.contains("n_layers")) c.model.n_layers = m["n_layers"].get<int>();
            if (m.contains("hidden_size")) c.model.hidden_size = m["hidden_size"].get<int>();
            if (m.contains("n_heads")) c.model.n_heads = m["n_heads"].get<int>();
            if (m.contains("vocab_size")) c.model.vocab_size = m["vocab_size"].get<int>();
            if (m.contains("max_positions")) c.model.max_positions = m["max_positions"].get<int>();
            if (m.contains("seed")) c.model.seed = m["seed"].get<uint64_t>();
        }
        if (j.contains("train")) {
            const auto& t = j["train"];
            check_known(t, {"steps", "learning_rate", "batch", "seq_len"}, "train", errors);
            if (t.contains("steps")) c.train.steps = t["steps"].get<int64_t>();
            if (t.contains("learning_rate")) c.train.learning_rate = t["learning_rate"].get<double>();
            if (t.contains("batch")) c.train.batch = t["batch"].get<int>();
            if (t.contains("seq_len")) c.train.seq_len = t["seq_len"].get<int>();
        }
        if (j.contains("pipeline")) {
            const auto& p = j["pipeline"];
            check_known(p, {"context_words", "delay_depth", "ig_steps", "ig_rule", "bin_width",
                            "thresholds"},
                        "pipeline", errors);
            if (p.contains("context_words")) c.pipeline.context_words = p["context_words"].get<int64_t>();
            if (p.contains("delay_depth")) c.pipeline.delay_depth = p["delay_depth"].get<int>();
            if (p.contains("ig_steps")) c.pipeline.ig_steps = p["ig_steps"].get<int>();
            if (p.contains("ig_rule")) c.pipeline.ig_rule = p["ig_rule"].get<std::string>();
            if (p.contains("bin_width")) c.pipeline.bin_width = p["bin_width"].get<int64_t>();
            if (p.contains("thresholds")) c.pipeline.thresholds = p["thresholds"].get<std::vector<double>>();
        }
        if (j.contains("folds")) {
            const auto& f = j["folds"];
            check_known(f, {"outer", "inner"}, "folds", errors);
            if (f.contains("outer")) c.folds.outer = f["outer"].get<int>();
            if (f.contains("inner")) c.folds.inner = f["inner"].get<int>();
        }
        if (j.contains("synth")) {
            const auto& s = j["synth"];
            check_known(s, {"words", "runs", "voxels", "noise_sigma", "planted", "signal_layer",
                            "tr_duration_s", "word_duration_s"},
                        "synth", errors);
            if (s.contains("words")) c.synth.words = s["words"].get<int64_t>();
            if (s.contains("runs")) c.synth.runs = s["runs"].get<int>();
            if (s.contains("voxels")) c.synth.voxels = s["voxels"].get<int>();
            if (s.contains("noise_sigma")) c.synth.noise_sigma = s["noise_sigma"].get<double>();
            if (s.contains("planted")) c.synth.planted = s["planted"].get<bool>();
            if (s.contains("signal_layer")) c.synth.signal_layer = s["signal_layer"].get<int>();
            if (s.contains("tr_duration_s")) c.synth.tr_duration_s = s["tr_duration_s"].get<double>();
            if (s.contains("word_duration_s")) c.synth.word_duration_s = s["word_duration_s"].get<double>();
        }
        if (j.contains("attribution")) {
            const auto& a = j["attribution"];
            check_known(a, {"methods", "layers", "tr_stride", "tr_limit"}, "attribution", errors);
            if (a.contains("methods")) c.attribution.methods = a["methods"].get<std::vector<std::string>>();
            if (a.contains("layers")) c.attribution.layers = a["layers"].get<std::string>();
            if (a.contains("tr_stride")) c.attribution.tr_stride = a["tr_stride"].get<int>();
            if (a.contains("tr_limit")) c.attribution.tr_limit = a["tr_limit"].get<int>();
        }
        if (j.contains("analysis")) {
            const auto& a = j["analysis"];
            check_known(a, {"iou_draws", "com_threshold", "position_thresholds", "feature_thresholds"},
                        "analysis", errors);
            if (a.contains("iou_draws")) c.analysis.iou_draws = a["iou_draws"].get<int>();
            if (a.contains("com_threshold")) c.analysis.com_threshold = a["com_threshold"].get<double>();
            if (a.contains("position_thresholds"))
                c.analysis.position_thresholds = a["position_thresholds"].get<std::vector<double>>();
            if (a.contains("feature_thresholds"))
                c.analysis.feature_thresholds = a["feature_thresholds"].get<std::vector<double>>();
        }
        if (j.contains("masking")) {
            const auto& m = j["masking"];
            check_known(m, {"thresholds", "seeds"}, "masking", errors);
            if (m.contains("thresholds")) c.masking.thresholds = m["thresholds"].get<std::vector<double>>();
            if (m.contains("seeds")) c.masking.seeds = m["seeds"].get<int>();
        }
    } catch (const json::exception& e) {
        throw config_error(std::string("config: ") + e.what());
    }
    if (!errors.empty()) {
        std::string msg = "config validation failed:";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw config_error(msg);
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    if (!file_exists(path)) throw config_error("config file not found: " + path);
    return from_json(read_file(path));
}

std::string RunConfig::design_path(int layer) const {
    return paths.out_dir + "/design_layer" + std::to_string(layer) + ".bin";
}
std::string RunConfig::words_path(int layer) const {
    return paths.out_dir + "/words_layer" + std::to_string(layer) + ".bin";
}
std::string RunConfig::encoder_path(int layer) const {
    return paths.out_dir + "/encoder_layer" + std::to_string(layer) + ".bin";
}
std::string RunConfig::attributions_path() const { return paths.out_dir + "/attributions.jsonl"; }
std::string RunConfig::scores_path() const { return paths.out_dir + "/scores.csv"; }
std::string RunConfig::selected_layers_path() const { return paths.out_dir + "/selected_layers.json"; }
std::string RunConfig::planted_path() const { return paths.out_dir + "/planted.json"; }
std::string RunConfig::truth_map_path() const { return paths.out_dir + "/truth_map.bin"; }
std::string RunConfig::manifest_path(const std::string& command) const {
    return paths.out_dir + "/manifest_" + command + ".json";
}
std::string RunConfig::report_path(const std::string& name) const {
    return paths.out_dir + "/" + name;
}

namespace {

// ---------------------------------------------------------------------------
// Shared command machinery
// ---------------------------------------------------------------------------

class Manifest {
public:
    Manifest(const RunConfig& config, std::string command)
        : config_(config), command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

    void stage_done(const std::string& name) {
        const auto now = std::chrono::steady_clock::now();
        stages_.emplace_back(name, std::chrono::duration<double>(now - start_).count());
        start_ = now;
    }

    void add_output(const std::string& path) { outputs_.push_back(path); }

    void write() {
        json j;
        j["command"] = command_;
        j["version"] = kProjectVersion;
        j["seed"] = config_.seed;
        j["config"] = json::parse(config_.to_json());
        json stages = json::object();
        for (const auto& [name, secs] : stages_) stages[name] = secs;
        j["wall_clock_s"] = stages;
        json outs = json::array();
        for (const auto& p : outputs_) outs.push_back({{"path", p}, {"sha256", sha256_file_hex(p)}});
        j["outputs"] = outs;
        write_file_atomic(config_.manifest_path(command_), j.dump(2) + "\n");
    }

private:
    const RunConfig& config_;
    std::string command_;
    std::chrono::steady_clock::time_point start_;
    std::vector<std::pair<std::string, double>> stages_;
    std::vector<std::string> outputs_;
};

void require_artifact(const std::string& path, const std::string& producer) {
    if (!file_exists(path))
        throw dependency_error("missing " + path + "; produce it with the '" + producer + "' command");
}

std::vector<int64_t> corpus_token_stream(const Corpus& corpus, const Tokenizer& tokenizer) {
    std::vector<std::string> surfaces;
    surfaces.reserve(corpus.words.size());
    for (const auto& w : corpus.words) surfaces.push_back(w.surface);
    return tokenizer.encode_words(surfaces).ids;
}

// (run, tr) pairs with full delay history, in design-row order, subsampled by
// the attribution stride/limit settings.
std::vector<std::pair<int, int>> eligible_trs(const Corpus& corpus, const RunConfig& config) {
    std::vector<std::pair<int, int>> all;
    for (size_t run = 0; run < corpus.runs.size(); ++run) {
        const int trs = corpus.trs_in_run(static_cast<int>(run));
        for (int tr = config.pipeline.delay_depth - 1; tr < trs; ++tr)
            all.emplace_back(static_cast<int>(run), tr);
    }
    std::vector<std::pair<int, int>> picked;
    for (size_t i = 0; i < all.size(); i += static_cast<size_t>(config.attribution.tr_stride)) {
        picked.push_back(all[i]);
        if (config.attribution.tr_limit > 0 &&
            static_cast<int>(picked.size()) >= config.attribution.tr_limit)
            break;
    }
    return picked;
}

std::vector<int> attribution_layers(const RunConfig& config) {
    if (config.attribution.layers == "auto") {
        require_artifact(config.selected_layers_path(), "fit");
        json j = json::parse(read_file(config.selected_layers_path()));
        return {j.at("early").get<int>(), j.at("middle").get<int>(), j.at("late").get<int>()};
    }
    std::vector<int> layers;
    std::stringstream ss(config.attribution.layers);
    std::string tok;
    while (std::getline(ss, tok, ',')) layers.push_back(std::stoi(tok));
    return layers;
}

std::vector<double> voxel_row_for(const ResponseMatrix& responses, int run, int tr) {
    for (size_t i = 0; i < responses.row_trs.size(); ++i)
        if (responses.row_trs[i] == std::make_pair(run, tr)) {
            const int64_t v = responses.values.cols();
            std::vector<double> row(static_cast<size_t>(v));
            for (int64_t j = 0; j < v; ++j) row[static_cast<size_t>(j)] = responses.values.at(static_cast<int64_t>(i), j);
            return row;
        }
    throw invalid_input("responses: no row for run " + std::to_string(run) + " tr " + std::to_string(tr));
}

std::string csv_join(const std::vector<std::string>& cells) {
    std::string line;
    for (size_t i = 0; i < cells.size(); ++i) {
        if (i) line += ",";
        line += cells[i];
    }
    return line + "\n";
}

// Grouped view over the attribution records of one method.
struct RecordIndex {
    std::map<std::pair<int, int>, const AttributionRecord*> nwp;             // (run,tr)
    std::map<int, std::map<std::pair<int, int>, const AttributionRecord*>> brain;  // layer -> (run,tr)

    std::vector<std::pair<int, int>> common_trs(int layer) const {
        std::vector<std::pair<int, int>> out;
        auto it = brain.find(layer);
        if (it == brain.end()) return out;
        for (const auto& [key, rec] : it->second) {
            (void)rec;
            if (nwp.count(key)) out.push_back(key);
        }
        return out;
    }
};

std::map<std::string, RecordIndex> index_records(const std::vector<AttributionRecord>& records) {
    std::map<std::string, RecordIndex> by_method;
    for (const auto& rec : records) {
        RecordIndex& idx = by_method[method_name(rec.target.method)];
        const auto key = std::make_pair(rec.target.run, rec.target.tr);
        if (rec.target.task == AttributionTask::kNwp)
            idx.nwp[key] = &rec;
        else
            idx.brain[rec.target.layer][key] = &rec;
    }
    return by_method;
}

}  // namespace

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

void cmd_synth(const RunConfig& config) {
    config.validate();
    Manifest manifest(config, "synth");

    SyntheticSpec spec;
    spec.n_words = config.synth.words;
    spec.n_runs = config.synth.runs;
    spec.voxels = config.synth.voxels;
    spec.noise_sigma = config.synth.noise_sigma;
    spec.planted = config.synth.planted;
    spec.seed = config.seed;
    spec.tr_duration_s = config.synth.tr_duration_s;
    spec.word_duration_s = config.synth.word_duration_s;

    const SyntheticCorpus synth = gen_corpus(spec);
    save_corpus(synth.corpus, config.paths.corpus);
    manifest.add_output(config.paths.corpus);

    if (spec.planted) {
        json j;
        j["surfaces"] = synth.planted_surfaces;
        j["positions"] = synth.planted_positions;
        j["types"] = synth.planted_types;
        j["signal_layer"] = config.resolved_signal_layer();
        write_file_atomic(config.planted_path(), j.dump(2) + "\n");
        manifest.add_output(config.planted_path());
    }
    manifest.stage_done("corpus");

    // Responses are linear in the design matrix of the signal layer, which
    // exists only after 'embed'; until then this command emits the corpus and
    // defers the responses.
    const int signal_layer = config.resolved_signal_layer();
    const std::string design_file = config.design_path(signal_layer);
    if (file_exists(design_file)) {
        const DesignMatrix design = load_design(design_file);
        Tensor w_star;
        if (spec.planted) {
            const Tensor words = load_word_matrix(config.words_path(signal_layer));
            w_star = planted_linear_map(words, synth.planted_positions, synth.planted_types,
                                        design.delay_depth, spec.voxels, spec.seed);
        } else {
            w_star = random_linear_map(design.values.cols(), spec.voxels, spec.seed);
        }
        save_truth_map(w_star, config.truth_map_path());
        const ResponseMatrix responses =
            gen_brain_responses(design, w_star, spec.noise_sigma, spec.seed, 0);
        save_responses(responses, config.paths.responses);
        manifest.add_output(config.truth_map_path());
        manifest.add_output(config.paths.responses);
        manifest.stage_done("responses");
        std::cout << "synth: wrote corpus (" << synth.corpus.size() << " words) and responses ("
                  << responses.values.rows() << " TRs x " << responses.values.cols() << " voxels)\n";
    } else {
        std::cout << "synth: wrote corpus (" << synth.corpus.size()
                  << " words); responses deferred until '" << design_file
                  << "' exists (run embed, then synth again)\n";
    }
    manifest.write();
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void cmd_train(const RunConfig& config) {
    config.validate();
    require_artifact(config.paths.corpus, "synth");
    Manifest manifest(config, "train");

    const Corpus corpus = load_corpus(config.paths.corpus);
    const Tokenizer tokenizer(config.model.vocab_size);
    const auto stream = corpus_token_stream(corpus, tokenizer);
    manifest.stage_done("tokenize");

    TrainOptions opts;
    opts.steps = config.train.steps;
    opts.learning_rate = config.train.learning_rate;
    opts.batch = config.train.batch;
    opts.seq_len = config.train.seq_len;

    TrainReport report;
    const ModelParams params = train_lm(config.model, stream, opts, &report);
    manifest.stage_done("train");

    save_model(params, config.paths.checkpoint);
    manifest.add_output(config.paths.checkpoint);
    manifest.write();
    std::cout << "train: " << opts.steps << " steps, stream CE " << format_double(report.initial_ce)
              << " -> " << format_double(report.final_ce) << "\n";
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

void cmd_embed(const RunConfig& config) {
    config.validate();
    require_artifact(config.paths.corpus, "synth");
    require_artifact(config.paths.checkpoint, "train");
    Manifest manifest(config, "embed");

    const Corpus corpus = load_corpus(config.paths.corpus);
    const ModelParams params = load_model(config.paths.checkpoint);
    const Tokenizer tokenizer(params.config.vocab_size);

    const auto layers = compute_stimulus_embeddings(corpus, params, tokenizer,
                                                    config.pipeline.context_words, config.jobs);
    manifest.stage_done("contexts");

    for (const auto& se : layers) {
        const DesignMatrix design = delay_concatenate(se, config.pipeline.delay_depth);
        save_design(design, config.design_path(se.layer));
        save_word_matrix(se.word_embeddings, se.layer, config.words_path(se.layer));
        manifest.add_output(config.design_path(se.layer));
        manifest.add_output(config.words_path(se.layer));
    }
    manifest.stage_done("designs");
    manifest.write();
    std::cout << "embed: wrote " << layers.size() << " per-layer designs\n";
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

void cmd_fit(const RunConfig& config) {
    config.validate();
    require_artifact(config.paths.responses, "synth");
    for (int l = 0; l < config.model.n_layers; ++l) require_artifact(config.design_path(l), "embed");
    Manifest manifest(config, "fit");

    const ResponseMatrix responses = load_responses(config.paths.responses);

    std::string scores_csv = "layer,subject,voxel,r\n";
    std::vector<double> layer_mean_r(static_cast<size_t>(config.model.n_layers), 0.0);

    for (int l = 0; l < config.model.n_layers; ++l) {
        const DesignMatrix design = load_design(config.design_path(l));
        const FoldSpec folds = make_contiguous_folds(design.rows(), config.folds.outer, config.folds.inner);
        AlignmentScore score;
        const EncodingModel model = nested_cv(design, responses, folds, default_lambda_grid(), &score);
        save_encoder(model, config.encoder_path(l));
        manifest.add_output(config.encoder_path(l));
        for (size_t vx = 0; vx < score.voxel_r.size(); ++vx)
            scores_csv += csv_join({std::to_string(l), std::to_string(responses.subject),
                                    std::to_string(vx), format_double(score.voxel_r[vx])});
        layer_mean_r[static_cast<size_t>(l)] = score.mean_r;
        manifest.stage_done("layer" + std::to_string(l));
    }

    write_file_atomic(config.scores_path(), scores_csv);
    manifest.add_output(config.scores_path());

    const SelectedLayers selected = select_layers(layer_mean_r, config.model.n_layers);
    int best = selected.early;
    for (int l : {selected.middle, selected.late})
        if (layer_mean_r[static_cast<size_t>(l)] > layer_mean_r[static_cast<size_t>(best)]) best = l;
    json sel;
    sel["early"] = selected.early;
    sel["middle"] = selected.middle;
    sel["late"] = selected.late;
    sel["best"] = best;
    sel["mean_r"] = layer_mean_r;
    write_file_atomic(config.selected_layers_path(), sel.dump(2) + "\n");
    manifest.add_output(config.selected_layers_path());
    manifest.write();

    std::cout << "fit: selected layers early=" << selected.early << " middle=" << selected.middle
              << " late=" << selected.late << " (best " << best << ", mean r "
              << format_double(layer_mean_r[static_cast<size_t>(best)]) << ")\n";
}

// ---------------------------------------------------------------------------
// attribute
// ---------------------------------------------------------------------------

void cmd_attribute(const RunConfig& config) {
    config.validate();
    require_artifact(config.paths.corpus, "synth");
    require_artifact(config.paths.checkpoint, "train");
    require_artifact(config.paths.responses, "synth");
    Manifest manifest(config, "attribute");

    const Corpus corpus = load_corpus(config.paths.corpus);
    const ModelParams params = load_model(config.paths.checkpoint);
    const Tokenizer tokenizer(params.config.vocab_size);
    const ResponseMatrix responses = load_responses(config.paths.responses);
    const auto layers = attribution_layers(config);
    for (int l : layers) require_artifact(config.encoder_path(l), "fit");

    const auto trs = eligible_trs(corpus, config);
    std::vector<AttributionRecord> records;

    for (const auto& method_name_str : config.attribution.methods) {
        AttributionOptions opts;
        opts.method = method_from_name(method_name_str);
        opts.context_words = config.pipeline.context_words;
        opts.ig_steps = config.pipeline.ig_steps;
        opts.ig_rule = ig_rule_from_name(config.pipeline.ig_rule);

        // NWP records: one per eligible TR that has a following word.
        {
            std::vector<AttributionRecord> slot(trs.size());
            std::vector<char> ok(trs.size(), 0);
            parallel_for(static_cast<int64_t>(trs.size()), config.jobs, [&](int64_t i) {
                const auto [run, tr] = trs[static_cast<size_t>(i)];
                const auto window =
                    extended_window(corpus, run, tr, config.pipeline.delay_depth, opts.context_words);
                if (window.second + 1 >= corpus.size()) return;  // no target word
                slot[static_cast<size_t>(i)] = attribute_nwp(params, tokenizer, corpus, run, tr,
                                                             config.pipeline.delay_depth, opts);
                ok[static_cast<size_t>(i)] = 1;
            });
            for (size_t i = 0; i < trs.size(); ++i)
                if (ok[i]) records.push_back(std::move(slot[i]));
        }
        manifest.stage_done(method_name_str + "_nwp");

        for (int l : layers) {
            const EncodingModel encoder = load_encoder(config.encoder_path(l));
            std::vector<AttributionRecord> slot(trs.size());
            parallel_for(static_cast<int64_t>(trs.size()), config.jobs, [&](int64_t i) {
                const auto [run, tr] = trs[static_cast<size_t>(i)];
                const auto y = voxel_row_for(responses, run, tr);
                slot[static_cast<size_t>(i)] =
                    attribute_brain_tr(params, tokenizer, corpus, encoder, run, tr, y, opts);
            });
            for (auto& rec : slot) records.push_back(std::move(rec));
            manifest.stage_done(method_name_str + "_brain_layer" + std::to_string(l));
        }
    }

    save_attributions(records, config.attributions_path());
    manifest.add_output(config.attributions_path());
    manifest.write();
    std::cout << "attribute: wrote " << records.size() << " records over " << trs.size() << " TRs\n";
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

void cmd_analyze(const RunConfig& config) {
    config.validate();
    require_artifact(config.paths.corpus, "synth");
    if (!file_exists(config.attributions_path()))
        throw dependency_error("missing " + config.attributions_path() +
                               "; produce it with the 'attribute' command");
    Manifest manifest(config, "analyze");

    const Corpus corpus = load_corpus(config.paths.corpus);
    const auto records = load_attributions(config.attributions_path());
    const auto by_method = index_records(records);

    std::string iou_csv = "method,layer,subject,threshold_pct,iou_mean,iou_random_mean,n_pairs\n";
    std::string com_csv = "task,method,layer,subject,threshold_pct,mode,com_mean,n_records\n";
    std::string spread_csv = "task,method,layer,subject,threshold_pct,mean_unique_words,auc\n";
    std::string positions_csv = "task,method,layer,subject,threshold_pct,bin_start,bin_end,proportion\n";
    std::string features_csv = "method,threshold_pct,category,set,percent_mean,n_contexts\n";
    std::string stats_csv = "method,comparison,layer,threshold_pct,n,t_stat,p_value,p_adjusted,significant\n";

    const auto& thresholds = config.pipeline.thresholds;
    const char* categories[3] = {"semantic", "syntactic", "discourse"};

    for (const auto& [method, idx] : by_method) {
        std::vector<double> stat_p;
        std::vector<std::array<std::string, 4>> stat_rows;  // layer, threshold, n, t

        std::vector<const AttributionRecord*> all_ba_paired, all_nwp_paired;

        for (const auto& [layer, ba_map] : idx.brain) {
            const auto common = idx.common_trs(layer);
            if (common.empty()) continue;
            std::vector<const AttributionRecord*> ba_recs, nwp_recs;
            for (const auto& key : common) {
                ba_recs.push_back(ba_map.at(key));
                nwp_recs.push_back(idx.nwp.at(key));
                all_ba_paired.push_back(ba_map.at(key));
                all_nwp_paired.push_back(idx.nwp.at(key));
            }
            const int subject = ba_recs[0]->target.subject;

            // IoU curve with the size-matched random baseline.
            for (size_t ti = 0; ti < thresholds.size(); ++ti) {
                const double t = thresholds[ti];
                double mean_iou = 0.0, mean_rand = 0.0;
                for (size_t i = 0; i < ba_recs.size(); ++i) {
                    const TopSet a = top_set(*ba_recs[i], t);
                    const TopSet b = top_set(*nwp_recs[i], t);
                    mean_iou += iou(a.words, b.words);
                    std::set<int64_t> window(ba_recs[i]->word_index.begin(), ba_recs[i]->word_index.end());
                    window.insert(nwp_recs[i]->word_index.begin(), nwp_recs[i]->word_index.end());
                    const uint64_t seed = Rng::derive(
                        config.seed, 1000003ULL * static_cast<uint64_t>(layer + 1) +
                                         257ULL * static_cast<uint64_t>(i) + ti);
                    mean_rand += random_baseline_iou(static_cast<int64_t>(window.size()),
                                                     static_cast<int64_t>(a.words.size()),
                                                     static_cast<int64_t>(b.words.size()),
                                                     config.analysis.iou_draws, seed);
                }
                mean_iou /= static_cast<double>(ba_recs.size());
                mean_rand /= static_cast<double>(ba_recs.size());
                iou_csv += csv_join({method, std::to_string(layer), std::to_string(subject),
                                     format_double(t), format_double(mean_iou),
                                     format_double(mean_rand), std::to_string(ba_recs.size())});
            }

            // Spread curves, AUC, and the BA-vs-NWP paired tests.
            const SpreadCurve ba_curve = spread_curve(ba_recs, thresholds);
            const SpreadCurve nwp_curve = spread_curve(nwp_recs, thresholds);
            for (size_t ti = 0; ti < thresholds.size(); ++ti) {
                spread_csv += csv_join({"brain", method, std::to_string(layer), std::to_string(subject),
                                        format_double(thresholds[ti]),
                                        format_double(ba_curve.mean_unique_words[ti]),
                                        format_double(ba_curve.auc)});
                spread_csv += csv_join({"nwp", method, std::to_string(layer), std::to_string(subject),
                                        format_double(thresholds[ti]),
                                        format_double(nwp_curve.mean_unique_words[ti]),
                                        format_double(nwp_curve.auc)});
                const PairedTest test = paired_t_test(spread_counts(ba_recs, thresholds[ti]),
                                                      spread_counts(nwp_recs, thresholds[ti]));
                stat_p.push_back(test.p_value);
                stat_rows.push_back({std::to_string(layer), format_double(thresholds[ti]),
                                     std::to_string(test.n), format_double(test.t_stat)});
            }

            // Centers of mass, top-t mode (figure convention) and full mode.
            auto mean_com = [](const std::vector<const AttributionRecord*>& recs, double t,
                               bool top_mode) {
                double acc = 0.0;
                int64_t n = 0;
                for (const auto* r : recs) {
                    try {
                        acc += top_mode ? com_top(*r, t) : com(*r);
                        n += 1;
                    } catch (const invalid_input&) {
                    }
                }
                return std::make_pair(n == 0 ? 0.0 : acc / static_cast<double>(n), n);
            };
            const auto [ba_com_top, nb1] = mean_com(ba_recs, config.analysis.com_threshold, true);
            const auto [ba_com_full, nb2] = mean_com(ba_recs, 0, false);
            com_csv += csv_join({"brain", method, std::to_string(layer), std::to_string(subject),
                                 format_double(config.analysis.com_threshold), "top",
                                 format_double(ba_com_top), std::to_string(nb1)});
            com_csv += csv_join({"brain", method, std::to_string(layer), std::to_string(subject), "",
                                 "full", format_double(ba_com_full), std::to_string(nb2)});

            // Positional histograms.
            for (double t : config.analysis.position_thresholds) {
                const auto hist = positional_histogram(ba_recs, t, config.pipeline.bin_width);
                for (size_t b = 0; b < hist.size(); ++b)
                    positions_csv += csv_join(
                        {"brain", method, std::to_string(layer), std::to_string(subject),
                         format_double(t), std::to_string(static_cast<int64_t>(b) * config.pipeline.bin_width),
                         std::to_string((static_cast<int64_t>(b) + 1) * config.pipeline.bin_width),
                         format_double(hist[b])});
            }
        }

        // NWP-side rows (layer -1: task is layer-independent).
        if (!idx.nwp.empty()) {
            std::vector<const AttributionRecord*> nwp_recs;
            for (const auto& [key, rec] : idx.nwp) {
                (void)key;
                nwp_recs.push_back(rec);
            }
            auto mean_com_n = [&](double t, bool top_mode) {
                double acc = 0.0;
                int64_t n = 0;
                for (const auto* r : nwp_recs) {
                    try {
                        acc += top_mode ? com_top(*r, t) : com(*r);
                        n += 1;
                    } catch (const invalid_input&) {
                    }
                }
                return std::make_pair(n == 0 ? 0.0 : acc / static_cast<double>(n), n);
            };
            const auto [nwp_com_top, nn1] = mean_com_n(config.analysis.com_threshold, true);
            const auto [nwp_com_full, nn2] = mean_com_n(0, false);
            com_csv += csv_join({"nwp", method, "-1", "-1",
                                 format_double(config.analysis.com_threshold), "top",
                                 format_double(nwp_com_top), std::to_string(nn1)});
            com_csv += csv_join({"nwp", method, "-1", "-1", "", "full", format_double(nwp_com_full),
                                 std::to_string(nn2)});
            for (double t : config.analysis.position_thresholds) {
                const auto hist = positional_histogram(nwp_recs, t, config.pipeline.bin_width);
                for (size_t b = 0; b < hist.size(); ++b)
                    positions_csv += csv_join(
                        {"nwp", method, "-1", "-1", format_double(t),
                         std::to_string(static_cast<int64_t>(b) * config.pipeline.bin_width),
                         std::to_string((static_cast<int64_t>(b) + 1) * config.pipeline.bin_width),
                         format_double(hist[b])});
            }
        }

        // Feature percentages aggregate the paired records across layers.
        if (!all_ba_paired.empty()) {
            for (double t : config.analysis.feature_thresholds) {
                const FeatureShare share =
                    feature_percentages(all_ba_paired, all_nwp_paired, corpus, t);
                for (int cat = 0; cat < 3; ++cat)
                    for (int gidx = 0; gidx < 3; ++gidx)
                        features_csv += csv_join(
                            {method, format_double(t), categories[cat],
                             group_name(static_cast<TopGroup>(gidx)),
                             format_double(share.percent[cat][gidx]),
                             std::to_string(share.contexts_used[cat])});
            }
        }

        const auto adjusted = bh_adjust(stat_p);
        for (size_t i = 0; i < stat_rows.size(); ++i)
            stats_csv += csv_join({method, "spread_ba_vs_nwp", stat_rows[i][0], stat_rows[i][1],
                                   stat_rows[i][2], stat_rows[i][3], format_double(stat_p[i]),
                                   format_double(adjusted[i]),
                                   adjusted[i] <= 0.05 ? "1" : "0"});
    }

    write_file_atomic(config.report_path("iou.csv"), iou_csv);
    write_file_atomic(config.report_path("com.csv"), com_csv);
    write_file_atomic(config.report_path("spread.csv"), spread_csv);
    write_file_atomic(config.report_path("positions.csv"), positions_csv);
    write_file_atomic(config.report_path("features.csv"), features_csv);
    write_file_atomic(config.report_path("stats.csv"), stats_csv);
    for (const char* f : {"iou.csv", "com.csv", "spread.csv", "positions.csv", "features.csv", "stats.csv"})
        manifest.add_output(config.report_path(f));
    manifest.stage_done("analyze");
    manifest.write();
    std::cout << "analyze: wrote iou/com/spread/positions/features/stats CSVs\n";
}

// ---------------------------------------------------------------------------
// mask
// ---------------------------------------------------------------------------

namespace {

// Replace the given word instances with words drawn uniformly from the rest
// of the corpus. Drawing from outside the masked set keeps a replacement from
// reinstating a word that masking meant to remove (at desk scale the masked
// set is a sizable corpus fraction, unlike at full scale).
Corpus masked_corpus(const Corpus& corpus, const std::set<int64_t>& masked, uint64_t seed) {
    Corpus out = corpus;
    std::vector<int64_t> pool;
    for (int64_t w = 0; w < corpus.size(); ++w)
        if (!masked.count(w)) pool.push_back(w);
    if (pool.empty()) throw invalid_input("masking: nothing left to draw replacements from");
    Rng rng(seed);
    for (int64_t w : masked) {
        const int64_t src = pool[rng.next_below(pool.size())];
        out.words[static_cast<size_t>(w)].surface = corpus.words[static_cast<size_t>(src)].surface;
        out.words[static_cast<size_t>(w)].annotations = corpus.words[static_cast<size_t>(src)].annotations;
    }
    return out;
}

std::set<int64_t> select_masked_words(const std::vector<const AttributionRecord*>& recs, double t,
                                      bool random_control, uint64_t seed) {
    std::set<int64_t> out;
    for (size_t i = 0; i < recs.size(); ++i) {
        const TopSet top = top_set(*recs[i], t);
        if (!random_control) {
            out.insert(top.words.begin(), top.words.end());
        } else {
            Rng rng(Rng::derive(seed, i));
            const auto perm = rng.permutation(recs[i]->word_index.size());
            for (size_t k = 0; k < top.words.size() && k < perm.size(); ++k)
                out.insert(recs[i]->word_index[perm[k]]);
        }
    }
    return out;
}

}  // namespace

void cmd_mask(const RunConfig& config) {
    config.validate();
    require_artifact(config.paths.corpus, "synth");
    require_artifact(config.paths.checkpoint, "train");
    require_artifact(config.paths.responses, "synth");
    if (!file_exists(config.attributions_path()))
        throw dependency_error("missing " + config.attributions_path() +
                               "; produce it with the 'attribute' command");
    require_artifact(config.selected_layers_path(), "fit");
    Manifest manifest(config, "mask");

    const Corpus corpus = load_corpus(config.paths.corpus);
    const ModelParams params = load_model(config.paths.checkpoint);
    const Tokenizer tokenizer(params.config.vocab_size);
    const ResponseMatrix responses = load_responses(config.paths.responses);
    const auto records = load_attributions(config.attributions_path());
    const auto by_method = index_records(records);

    const json sel = json::parse(read_file(config.selected_layers_path()));
    const int best_layer = sel.at("best").get<int>();
    require_artifact(config.encoder_path(best_layer), "fit");
    require_artifact(config.design_path(best_layer), "embed");
    const EncodingModel encoder = load_encoder(config.encoder_path(best_layer));
    const DesignMatrix clean_design = load_design(config.design_path(best_layer));

    auto mean_of = [](const std::vector<double>& v) {
        double acc = 0;
        for (double x : v) acc += x;
        return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
    };
    const double clean_r = mean_of(held_out_voxel_r(encoder, clean_design, responses));

    std::string csv =
        "task,method,layer,subject,threshold_pct,seed,selection,metric,clean,masked,delta\n";

    for (const auto& [method, idx] : by_method) {
        // Brain side: the best-aligned layer's records.
        auto brain_it = idx.brain.find(best_layer);
        std::vector<const AttributionRecord*> ba_recs;
        if (brain_it != idx.brain.end())
            for (const auto& [key, rec] : brain_it->second) {
                (void)key;
                ba_recs.push_back(rec);
            }
        std::vector<const AttributionRecord*> nwp_recs;
        for (const auto& [key, rec] : idx.nwp) {
            (void)key;
            nwp_recs.push_back(rec);
        }

        for (double t : config.masking.thresholds) {
            for (int s = 0; s < config.masking.seeds; ++s) {
                const uint64_t seed = Rng::derive(config.seed, 777 + static_cast<uint64_t>(s));
                for (const bool random_control : {false, true}) {
                    const char* selection = random_control ? "random" : "top";

                    if (!ba_recs.empty()) {
                        const auto masked =
                            select_masked_words(ba_recs, t, random_control, seed ^ 0xba);
                        if (masked.empty())
                            std::cerr << "warning: empty masking set (brain, t=" << t << ")\n";
                        const Corpus mc = masked_corpus(corpus, masked, seed ^ 0xba5e);
                        const auto layers = compute_stimulus_embeddings(
                            mc, params, tokenizer, config.pipeline.context_words, config.jobs);
                        const DesignMatrix md = delay_concatenate(
                            layers[static_cast<size_t>(best_layer)], config.pipeline.delay_depth);
                        const double masked_r = mean_of(held_out_voxel_r(encoder, md, responses));
                        const double drop_pct =
                            clean_r == 0.0 ? 0.0 : 100.0 * (clean_r - masked_r) / clean_r;
                        csv += csv_join({"brain", method, std::to_string(best_layer), "0",
                                         format_double(t), std::to_string(s), selection, "r_pct_drop",
                                         format_double(clean_r), format_double(masked_r),
                                         format_double(drop_pct)});
                    }

                    if (!nwp_recs.empty()) {
                        const auto masked =
                            select_masked_words(nwp_recs, t, random_control, seed ^ 0x9d);
                        if (masked.empty())
                            std::cerr << "warning: empty masking set (nwp, t=" << t << ")\n";
                        Corpus mc = masked_corpus(corpus, masked, seed ^ 0x9dd5);
                        double clean_ce = 0.0, masked_ce = 0.0;
                        for (const auto* rec : nwp_recs) {
                            clean_ce += rec->loss_value;
                            // The prediction target keeps its clean surface.
                            const auto window =
                                extended_window(corpus, rec->target.run, rec->target.tr,
                                                config.pipeline.delay_depth,
                                                config.pipeline.context_words);
                            const int64_t target_word = window.second + 1;
                            const WordRecord saved = mc.words[static_cast<size_t>(target_word)];
                            mc.words[static_cast<size_t>(target_word)] =
                                corpus.words[static_cast<size_t>(target_word)];
                            masked_ce += nwp_loss_at_scale(params, tokenizer, mc, rec->target.run,
                                                           rec->target.tr, config.pipeline.delay_depth,
                                                           config.pipeline.context_words, 1.0);
                            mc.words[static_cast<size_t>(target_word)] = saved;
                        }
                        clean_ce /= static_cast<double>(nwp_recs.size());
                        masked_ce /= static_cast<double>(nwp_recs.size());
                        const double rel_increase =
                            clean_ce == 0.0 ? 0.0 : (masked_ce - clean_ce) / clean_ce;
                        csv += csv_join({"nwp", method, "-1", "-1", format_double(t),
                                         std::to_string(s), selection, "ce_rel_increase",
                                         format_double(clean_ce), format_double(masked_ce),
                                         format_double(rel_increase)});
                    }
                }
            }
            manifest.stage_done("threshold_" + format_double(t));
        }
    }

    write_file_atomic(config.report_path("masking.csv"), csv);
    manifest.add_output(config.report_path("masking.csv"));
    manifest.write();
    std::cout << "mask: wrote masking.csv\n";
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

void cmd_report(const RunConfig& config) {
    config.validate();
    const char* files[] = {"iou.csv", "com.csv", "spread.csv", "positions.csv", "features.csv", "stats.csv"};
    for (const char* f : files)
        if (!file_exists(config.report_path(f)))
            throw dependency_error("missing " + config.report_path(f) +
                                   "; produce it with the 'analyze' command");
    if (!file_exists(config.report_path("masking.csv")))
        throw dependency_error("missing " + config.report_path("masking.csv") +
                               "; produce it with the 'mask' command");
    Manifest manifest(config, "report");

    // Verify every digest recorded by earlier manifests.
    json verified = json::array();
    for (const char* cmd : {"synth", "train", "embed", "fit", "attribute", "analyze", "mask"}) {
        const std::string mpath = config.manifest_path(cmd);
        if (!file_exists(mpath)) continue;
        const json m = json::parse(read_file(mpath));
        for (const auto& out : m.at("outputs")) {
            const std::string path = out.at("path").get<std::string>();
            const std::string expected = out.at("sha256").get<std::string>();
            const bool ok = file_exists(path) && sha256_file_hex(path) == expected;
            verified.push_back({{"path", path}, {"ok", ok}});
            if (!ok)
                throw numerical_error("report: digest mismatch for " + path +
                                      " (artifact changed since '" + std::string(cmd) + "' ran)");
        }
    }

    json summary;
    summary["version"] = kProjectVersion;
    summary["seed"] = config.seed;
    summary["config"] = json::parse(config.to_json());
    summary["verified_artifacts"] = verified;
    json tables = json::object();
    for (const char* f : {"iou.csv", "com.csv", "spread.csv", "positions.csv", "features.csv",
                          "stats.csv", "masking.csv"})
        tables[f] = read_file(config.report_path(f));
    summary["tables_csv"] = tables;
    if (file_exists(config.selected_layers_path()))
        summary["selected_layers"] = json::parse(read_file(config.selected_layers_path()));

    write_file_atomic(config.report_path("summary.json"), summary.dump(2) + "\n");
    manifest.add_output(config.report_path("summary.json"));
    manifest.write();
    std::cout << "report: verified " << verified.size() << " artifacts, wrote summary.json\n";
}

}  // namespace brainattr
