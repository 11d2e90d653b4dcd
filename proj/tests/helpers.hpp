#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "brainattr/rng.hpp"
#include "brainattr/tape.hpp"

namespace testutil {

using brainattr::NodeId;
using brainattr::Rng;
using brainattr::Tape;
using brainattr::Tensor;

// A rebuildable scalar graph over explicit leaf inputs, so central finite
// differences can re-evaluate it at perturbed points.
struct GraphSpec {
    std::vector<Tensor> leaves;
    std::function<NodeId(Tape&, const std::vector<NodeId>&)> build;
};

inline double eval_graph(const GraphSpec& spec, const std::vector<Tensor>& values) {
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(values.size());
    for (const auto& v : values) ids.push_back(tape.leaf(v));
    const NodeId loss = spec.build(tape, ids);
    return tape.value(loss).values[0];
}

inline std::vector<Tensor> autodiff_grads(const GraphSpec& spec) {
    Tape tape;
    std::vector<NodeId> ids;
    for (const auto& v : spec.leaves) ids.push_back(tape.leaf(v));
    const NodeId loss = spec.build(tape, ids);
    const auto grads = tape.backward(loss);
    std::vector<Tensor> out;
    for (NodeId id : ids)
        out.push_back(grads.has(id) ? grads.at(id) : Tensor::zeros_like(tape.value(id)));
    return out;
}

// Norm-relative deviation between reverse-mode and central-difference
// gradients, maximized over leaves.
inline double fd_relative_error(const GraphSpec& spec, double step = 1e-4) {
    const auto ad = autodiff_grads(spec);
    double worst = 0.0;
    for (size_t li = 0; li < spec.leaves.size(); ++li) {
        double diff2 = 0.0, ref2 = 0.0;
        for (size_t i = 0; i < spec.leaves[li].values.size(); ++i) {
            auto plus = spec.leaves;
            auto minus = spec.leaves;
            plus[li].values[i] += step;
            minus[li].values[i] -= step;
            const double fd = (eval_graph(spec, plus) - eval_graph(spec, minus)) / (2.0 * step);
            const double d = ad[li].values[i] - fd;
            diff2 += d * d;
            ref2 += fd * fd;
        }
        worst = std::max(worst, std::sqrt(diff2) / (std::sqrt(ref2) + 1e-12));
    }
    return worst;
}

inline Tensor random_tensor(Rng& rng, int64_t r, int64_t c, double scale = 1.0) {
    Tensor t = Tensor::zeros(r, c);
    for (auto& v : t.values) v = rng.next_gaussian() * scale;
    return t;
}

// Independent gradient-descent minimizer of |XW - Y|^2 + lambda |W|^2, run to
// a tight gradient norm. Deliberately shares nothing with the closed form.
inline Tensor ridge_by_gradient_descent(const Tensor& x, const Tensor& y, double lambda) {
    const int64_t p = x.cols();
    const int64_t v = y.cols();
    const int64_t n = x.rows();
    Tensor w = Tensor::zeros(p, v);

    // Lipschitz bound via the Frobenius norm of X^T X.
    double frob = 0.0;
    for (int64_t i = 0; i < p; ++i)
        for (int64_t j = 0; j < p; ++j) {
            double g = 0.0;
            for (int64_t r = 0; r < n; ++r) g += x.at(r, i) * x.at(r, j);
            frob += g * g;
        }
    const double step = 1.0 / (2.0 * (std::sqrt(frob) + lambda) + 1e-9);

    for (int iter = 0; iter < 200000; ++iter) {
        Tensor resid = Tensor::zeros(n, v);
        for (int64_t r = 0; r < n; ++r)
            for (int64_t j = 0; j < v; ++j) {
                double acc = 0.0;
                for (int64_t k = 0; k < p; ++k) acc += x.at(r, k) * w.at(k, j);
                resid.at(r, j) = acc - y.at(r, j);
            }
        Tensor grad = Tensor::zeros(p, v);
        double gnorm = 0.0;
        for (int64_t k = 0; k < p; ++k)
            for (int64_t j = 0; j < v; ++j) {
                double acc = 0.0;
                for (int64_t r = 0; r < n; ++r) acc += x.at(r, k) * resid.at(r, j);
                grad.at(k, j) = 2.0 * acc + 2.0 * lambda * w.at(k, j);
                gnorm += grad.at(k, j) * grad.at(k, j);
            }
        if (std::sqrt(gnorm) < 1e-10) break;
        for (size_t i = 0; i < w.values.size(); ++i) w.values[i] -= step * grad.values[i];
    }
    return w;
}

// Spearman rank correlation (average ranks on ties).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& x) {
        std::vector<size_t> order(x.size());
        for (size_t i = 0; i < x.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](size_t p, size_t q) { return x[p] < x[q]; });
        std::vector<double> r(x.size());
        size_t i = 0;
        while (i < order.size()) {
            size_t j = i;
            while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    double ma = 0, mb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(ra.size());
    mb /= static_cast<double>(ra.size());
    double saa = 0, sbb = 0, sab = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0 || sbb == 0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace testutil
