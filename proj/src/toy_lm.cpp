#include "brainattr/toy_lm.hpp"

#include <cmath>

#include "brainattr/io_util.hpp"
#include "brainattr/rng.hpp"

namespace brainattr {

std::string family_name(ModelFamily f) {
    return f == ModelFamily::kTransformer ? "transformer" : "ssm";
}

ModelFamily family_from_name(const std::string& name) {
    if (name == "transformer") return ModelFamily::kTransformer;
    if (name == "ssm") return ModelFamily::kSsm;
    throw invalid_input("unknown model family: " + name);
}

void ModelConfig::validate() const {
    if (n_layers < 3) throw invalid_input("model: n_layers must be >= 3 for depth-third layer selection");
    if (hidden_size < 1 || vocab_size < 2 || max_positions < 1) throw invalid_input("model: bad dimensions");
    if (family == ModelFamily::kTransformer) {
        if (n_heads < 1 || hidden_size % n_heads != 0)
            throw invalid_input("model: hidden_size must be divisible by n_heads");
    }
}

const Tensor& ModelParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw invalid_input("model: missing parameter " + name);
    return it->second;
}

namespace {

Tensor gaussian_tensor(Rng& rng, int64_t r, int64_t c, double stddev) {
    Tensor t = Tensor::zeros(r, c);
    for (auto& v : t.values) v = rng.next_gaussian() * stddev;
    return t;
}

Tensor ones_row(int64_t n) {
    return Tensor({1, n}, std::vector<double>(static_cast<size_t>(n), 1.0));
}

std::string lkey(int layer, const std::string& suffix) {
    return "l" + std::to_string(layer) + "." + suffix;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    p.config = config;
    Rng rng(config.seed);
    const int64_t h = config.hidden_size;
    const int64_t f = config.mlp_width();
    const double std_in = 0.06;
    // Residual-branch outputs are scaled down with depth to keep the
    // untrained forward pass well-conditioned.
    const double std_out = std_in / std::sqrt(2.0 * config.n_layers);

    p.tensors["embed"] = gaussian_tensor(rng, config.vocab_size, h, std_in);
    if (config.family == ModelFamily::kTransformer)
        p.tensors["pos"] = gaussian_tensor(rng, config.max_positions, h, std_in);

    for (int l = 0; l < config.n_layers; ++l) {
        p.tensors[lkey(l, "norm1.g")] = ones_row(h);
        p.tensors[lkey(l, "norm2.g")] = ones_row(h);
        if (config.family == ModelFamily::kTransformer) {
            p.tensors[lkey(l, "attn.wq")] = gaussian_tensor(rng, h, h, std_in);
            p.tensors[lkey(l, "attn.wk")] = gaussian_tensor(rng, h, h, std_in);
            p.tensors[lkey(l, "attn.wv")] = gaussian_tensor(rng, h, h, std_in);
            p.tensors[lkey(l, "attn.wo")] = gaussian_tensor(rng, h, h, std_out);
        } else {
            p.tensors[lkey(l, "ssm.wu")] = gaussian_tensor(rng, h, h, std_in);
            p.tensors[lkey(l, "ssm.wg")] = gaussian_tensor(rng, h, h, std_in);
            p.tensors[lkey(l, "ssm.wo")] = gaussian_tensor(rng, h, h, std_out);
            // Raw decay init: sigmoid maps to roughly (0.45, 0.85).
            Tensor a = Tensor::zeros(1, h);
            for (auto& v : a.values) v = rng.next_uniform(-0.2, 1.7);
            p.tensors[lkey(l, "ssm.a_raw")] = std::move(a);
        }
        p.tensors[lkey(l, "mlp.w1")] = gaussian_tensor(rng, h, f, std_in);
        p.tensors[lkey(l, "mlp.w3")] = gaussian_tensor(rng, h, f, std_in);
        p.tensors[lkey(l, "mlp.w2")] = gaussian_tensor(rng, f, h, std_out);
    }
    p.tensors["final_norm.g"] = ones_row(h);
    p.tensors["head"] = gaussian_tensor(rng, h, config.vocab_size, std_in);
    return p;
}

LmGraph::LmGraph(Tape& tape, const ModelParams& params) : tape_(tape), config_(params.config) {
    config_.validate();
    for (const auto& [name, tensor] : params.tensors) param_nodes_[name] = tape_.leaf(tensor);
}

NodeId LmGraph::param(const std::string& name) const {
    auto it = param_nodes_.find(name);
    if (it == param_nodes_.end()) throw invalid_input("model graph: unknown parameter " + name);
    return it->second;
}

ForwardResult LmGraph::forward_tokens(const std::vector<int64_t>& tokens) {
    for (int64_t t : tokens)
        if (t < 0 || t >= config_.vocab_size) throw invalid_input("forward: token id out of vocabulary");
    const NodeId emb = tape_.gather_rows(param("embed"), tokens);
    return forward_from(emb);
}

ForwardResult LmGraph::forward_from(NodeId embeddings) {
    const Tensor& x = tape_.value(embeddings);
    const int64_t t_len = x.rows();
    if (t_len > config_.max_positions)
        throw invalid_input("forward: input of " + std::to_string(t_len) + " tokens exceeds max_positions " +
                            std::to_string(config_.max_positions));
    if (x.cols() != config_.hidden_size) throw invalid_input("forward: embedding width mismatch");

    ForwardResult result;
    result.embeddings = embeddings;

    NodeId h = embeddings;
    if (config_.family == ModelFamily::kTransformer) {
        std::vector<int64_t> positions(static_cast<size_t>(t_len));
        for (int64_t i = 0; i < t_len; ++i) positions[static_cast<size_t>(i)] = i;
        h = tape_.add(h, tape_.gather_rows(param("pos"), positions));
    }

    NodeId mask = -1;
    if (config_.family == ModelFamily::kTransformer) {
        Tensor m = Tensor::zeros(t_len, t_len);
        for (int64_t i = 0; i < t_len; ++i)
            for (int64_t j = i + 1; j < t_len; ++j) m.at(i, j) = -1e30;
        mask = tape_.leaf(std::move(m));
    }

    const int64_t head_dim = config_.hidden_size / std::max(1, config_.n_heads);
    for (int l = 0; l < config_.n_layers; ++l) {
        const NodeId n1 = tape_.mul(tape_.rms_norm(h), param(lkey(l, "norm1.g")));
        if (config_.family == ModelFamily::kTransformer) {
            const NodeId q = tape_.matmul(n1, param(lkey(l, "attn.wq")));
            const NodeId k = tape_.matmul(n1, param(lkey(l, "attn.wk")));
            const NodeId v = tape_.matmul(n1, param(lkey(l, "attn.wv")));
            std::vector<NodeId> head_outs;
            for (int hd = 0; hd < config_.n_heads; ++hd) {
                const int64_t c0 = hd * head_dim;
                const NodeId qh = tape_.slice_cols(q, c0, head_dim);
                const NodeId kh = tape_.slice_cols(k, c0, head_dim);
                const NodeId vh = tape_.slice_cols(v, c0, head_dim);
                NodeId scores = tape_.scale(tape_.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(head_dim)));
                scores = tape_.add(scores, mask);
                head_outs.push_back(tape_.matmul(tape_.softmax_last(scores), vh));
            }
            const NodeId attn = tape_.matmul(tape_.concat_cols(head_outs), param(lkey(l, "attn.wo")));
            h = tape_.add(h, attn);
        } else {
            const NodeId u = tape_.matmul(n1, param(lkey(l, "ssm.wu")));
            const NodeId gate = tape_.silu(tape_.matmul(n1, param(lkey(l, "ssm.wg"))));
            const NodeId decay = tape_.sigmoid(param(lkey(l, "ssm.a_raw")));
            const NodeId scan = tape_.ssm_scan(u, decay);
            const NodeId mixed = tape_.matmul(tape_.mul(scan, gate), param(lkey(l, "ssm.wo")));
            h = tape_.add(h, mixed);
        }
        const NodeId n2 = tape_.mul(tape_.rms_norm(h), param(lkey(l, "norm2.g")));
        const NodeId gate = tape_.silu(tape_.matmul(n2, param(lkey(l, "mlp.w1"))));
        const NodeId lin = tape_.matmul(n2, param(lkey(l, "mlp.w3")));
        const NodeId mlp = tape_.matmul(tape_.mul(gate, lin), param(lkey(l, "mlp.w2")));
        h = tape_.add(h, mlp);
        result.layer_states.push_back(h);
    }

    const NodeId final_norm = tape_.mul(tape_.rms_norm(h), param("final_norm.g"));
    result.logits = tape_.matmul(final_norm, param("head"));
    return result;
}

Tensor embed_tokens(const ModelParams& params, const std::vector<int64_t>& tokens) {
    const Tensor& table = params.at("embed");
    const int64_t h = table.cols();
    Tensor out = Tensor::zeros(static_cast<int64_t>(tokens.size()), h);
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= table.rows()) throw invalid_input("embed: token id out of vocabulary");
        std::copy_n(table.values.data() + tokens[i] * h, h, out.values.data() + static_cast<int64_t>(i) * h);
    }
    return out;
}

namespace {

struct AdamState {
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    int64_t t = 0;
};

void adam_step(ModelParams& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const TrainOptions& opts) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.t));
    for (auto& [name, tensor] : params.tensors) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const std::vector<double>& g = git->second.values;
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) {
            m.assign(g.size(), 0.0);
            v.assign(g.size(), 0.0);
        }
        for (size_t i = 0; i < g.size(); ++i) {
            m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * g[i];
            v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            tensor.values[i] -= opts.learning_rate * mhat / (std::sqrt(vhat) + opts.adam_eps);
        }
    }
}

}  // namespace

ModelParams train_lm(const ModelConfig& config, const std::vector<int64_t>& stream,
                     const TrainOptions& opts, TrainReport* report) {
    config.validate();
    if (opts.steps < 0) throw invalid_input("train: steps must be >= 0");
    if (static_cast<int64_t>(stream.size()) < opts.seq_len + 1)
        throw invalid_input("train: stream shorter than one training window");

    ModelParams params = ModelParams::init(config);
    if (report) report->initial_ce = eval_stream_ce(params, stream, opts.seq_len);

    Rng rng(config.seed ^ 0x7261696e6c6dULL);
    AdamState adam;
    const int64_t max_start = static_cast<int64_t>(stream.size()) - opts.seq_len - 1;

    for (int64_t step = 0; step < opts.steps; ++step) {
        Tape tape;
        LmGraph graph(tape, params);
        NodeId total = -1;
        for (int b = 0; b < opts.batch; ++b) {
            const int64_t start = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(max_start + 1)));
            std::vector<int64_t> input(stream.begin() + start, stream.begin() + start + opts.seq_len);
            std::vector<int64_t> target(stream.begin() + start + 1, stream.begin() + start + opts.seq_len + 1);
            ForwardResult fwd = graph.forward_tokens(input);
            const NodeId loss = tape.cross_entropy(fwd.logits, target,
                                                   std::vector<double>(input.size(), 1.0));
            total = (total < 0) ? loss : tape.add(total, loss);
        }
        total = tape.scale(total, 1.0 / opts.batch);
        const double loss_value = tape.value(total).values[0];
        if (!std::isfinite(loss_value))
            throw numerical_error("train: non-finite loss at step " + std::to_string(step));

        GradientMap grads = tape.backward(total);
        std::map<std::string, Tensor> by_name;
        for (const auto& [name, tensor] : params.tensors) {
            (void)tensor;
            const NodeId id = graph.param(name);
            if (grads.has(id)) by_name[name] = grads.at(id);
        }
        adam_step(params, by_name, adam, opts);
    }

    if (report) report->final_ce = eval_stream_ce(params, stream, opts.seq_len);
    return params;
}

double eval_stream_ce(const ModelParams& params, const std::vector<int64_t>& stream, int seq_len) {
    if (static_cast<int64_t>(stream.size()) < seq_len + 1)
        throw invalid_input("eval: stream shorter than one window");
    double total = 0.0;
    int64_t windows = 0;
    for (int64_t start = 0; start + seq_len + 1 <= static_cast<int64_t>(stream.size()); start += seq_len) {
        Tape tape;
        LmGraph graph(tape, params);
        std::vector<int64_t> input(stream.begin() + start, stream.begin() + start + seq_len);
        std::vector<int64_t> target(stream.begin() + start + 1, stream.begin() + start + seq_len + 1);
        ForwardResult fwd = graph.forward_tokens(input);
        const NodeId loss = tape.cross_entropy(fwd.logits, target, std::vector<double>(input.size(), 1.0));
        total += tape.value(loss).values[0];
        windows += 1;
    }
    return total / static_cast<double>(windows);
}

void save_model(const ModelParams& params, const std::string& path) {
    BinaryWriter w;
    w.str("BALM");
    w.u32(1);  // format version
    w.u8(static_cast<uint8_t>(params.config.family));
    w.u32(static_cast<uint32_t>(params.config.n_layers));
    w.u32(static_cast<uint32_t>(params.config.hidden_size));
    w.u32(static_cast<uint32_t>(params.config.n_heads));
    w.u32(static_cast<uint32_t>(params.config.vocab_size));
    w.u32(static_cast<uint32_t>(params.config.max_positions));
    w.u64(params.config.seed);
    w.u64(params.tensors.size());
    for (const auto& [name, tensor] : params.tensors) {
        w.str(name);
        w.u32(static_cast<uint32_t>(tensor.shape.size()));
        for (int64_t d : tensor.shape) w.u64(static_cast<uint64_t>(d));
        w.f64_array(tensor.values);
    }
    write_file_atomic(path, w.buffer());
}

ModelParams load_model(const std::string& path) {
    BinaryReader r(read_file(path));
    if (r.str() != "BALM") throw invalid_input("model file: bad magic in " + path);
    if (r.u32() != 1) throw invalid_input("model file: unsupported version");
    ModelParams p;
    p.config.family = static_cast<ModelFamily>(r.u8());
    p.config.n_layers = static_cast<int>(r.u32());
    p.config.hidden_size = static_cast<int>(r.u32());
    p.config.n_heads = static_cast<int>(r.u32());
    p.config.vocab_size = static_cast<int>(r.u32());
    p.config.max_positions = static_cast<int>(r.u32());
    p.config.seed = r.u64();
    const uint64_t count = r.u64();
    for (uint64_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        const uint32_t ndims = r.u32();
        std::vector<int64_t> shape(ndims);
        for (auto& d : shape) d = static_cast<int64_t>(r.u64());
        const int64_t n = Tensor::numel_of(shape);
        p.tensors[name] = Tensor(shape, r.f64_array(static_cast<size_t>(n)));
    }
    p.config.validate();
    return p;
}

}  // namespace brainattr
