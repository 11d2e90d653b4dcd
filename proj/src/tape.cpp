#include "brainattr/tape.hpp"

#include <algorithm>
#include <cmath>

namespace brainattr {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw invalid_input(msg);
}

// C += A * B, row-major, ikj order.
void matmul_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A * B^T with A (m,k), B (n,k).
void matmul_nt_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

// C += A^T * B with A (m,k), B (m,n), C (k,n).
void matmul_tn_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

bool row_broadcastable(const Tensor& a, const Tensor& b) {
    return b.rows() == 1 && b.cols() == a.cols();
}

}  // namespace

NodeId Tape::push(TapeNode n, uint64_t cost) {
    op_count_ += cost;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor t) {
    require(!t.values.empty(), "leaf: empty tensor");
    return push({OpKind::kLeaf, {}, std::move(t), {}, {}}, 0);
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.cols() == B.rows(), "matmul: inner dimensions differ " + A.shape_str() + " x " + B.shape_str());
    Tensor C = Tensor::zeros(A.rows(), B.cols());
    matmul_acc(A.values.data(), B.values.data(), C.values.data(), A.rows(), A.cols(), B.cols());
    return push({OpKind::kMatmul, {a, b}, std::move(C), {}, {}},
                static_cast<uint64_t>(A.rows() * A.cols() * B.cols()));
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.cols() == B.cols(), "matmul_nt: inner dimensions differ");
    Tensor C = Tensor::zeros(A.rows(), B.rows());
    matmul_nt_acc(A.values.data(), B.values.data(), C.values.data(), A.rows(), A.cols(), B.rows());
    return push({OpKind::kMatmulNT, {a, b}, std::move(C), {}, {}},
                static_cast<uint64_t>(A.rows() * A.cols() * B.rows()));
}

NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    Tensor C = A;
    if (same_shape(A, B)) {
        for (size_t i = 0; i < C.values.size(); ++i) C.values[i] += B.values[i];
    } else if (row_broadcastable(A, B)) {
        const int64_t n = A.cols();
        for (int64_t r = 0; r < A.rows(); ++r)
            for (int64_t j = 0; j < n; ++j) C.at(r, j) += B.values[static_cast<size_t>(j)];
    } else {
        require(false, "add: incompatible shapes " + A.shape_str() + " + " + B.shape_str());
    }
    return push({OpKind::kAdd, {a, b}, std::move(C), {}, {}}, static_cast<uint64_t>(A.numel()));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    Tensor C = A;
    if (same_shape(A, B)) {
        for (size_t i = 0; i < C.values.size(); ++i) C.values[i] *= B.values[i];
    } else if (row_broadcastable(A, B)) {
        const int64_t n = A.cols();
        for (int64_t r = 0; r < A.rows(); ++r)
            for (int64_t j = 0; j < n; ++j) C.at(r, j) *= B.values[static_cast<size_t>(j)];
    } else {
        require(false, "mul: incompatible shapes " + A.shape_str() + " * " + B.shape_str());
    }
    return push({OpKind::kMul, {a, b}, std::move(C), {}, {}}, static_cast<uint64_t>(A.numel()));
}

NodeId Tape::scale(NodeId a, double s) {
    Tensor C = value(a);
    for (double& v : C.values) v *= s;
    return push({OpKind::kScale, {a}, std::move(C), {}, {s}}, static_cast<uint64_t>(C.numel()));
}

NodeId Tape::silu(NodeId a) {
    Tensor C = value(a);
    for (double& v : C.values) v = v / (1.0 + std::exp(-v));
    return push({OpKind::kSilu, {a}, std::move(C), {}, {}}, static_cast<uint64_t>(C.numel()));
}

NodeId Tape::sigmoid(NodeId a) {
    Tensor C = value(a);
    for (double& v : C.values) v = 1.0 / (1.0 + std::exp(-v));
    return push({OpKind::kSigmoid, {a}, std::move(C), {}, {}}, static_cast<uint64_t>(C.numel()));
}

NodeId Tape::softmax_last(NodeId a) {
    Tensor C = value(a);
    const int64_t n = C.cols();
    require(n >= 1, "softmax: empty rows");
    for (int64_t r = 0; r < C.rows(); ++r) {
        double* row = C.values.data() + r * n;
        double mx = row[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int64_t j = 0; j < n; ++j) row[j] /= sum;
    }
    return push({OpKind::kSoftmaxLast, {a}, std::move(C), {}, {}}, static_cast<uint64_t>(3 * C.numel()));
}

NodeId Tape::rms_norm(NodeId a, double eps) {
    Tensor C = value(a);
    const int64_t n = C.cols();
    for (int64_t r = 0; r < C.rows(); ++r) {
        double* row = C.values.data() + r * n;
        double ms = 0.0;
        for (int64_t j = 0; j < n; ++j) ms += row[j] * row[j];
        ms /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(ms + eps);
        for (int64_t j = 0; j < n; ++j) row[j] *= inv;
    }
    return push({OpKind::kRmsNorm, {a}, std::move(C), {}, {eps}}, static_cast<uint64_t>(2 * C.numel()));
}

NodeId Tape::gather_rows(NodeId a, const std::vector<int64_t>& row_ids) {
    const Tensor& A = value(a);
    require(!row_ids.empty(), "gather_rows: empty index list");
    const int64_t n = A.cols();
    Tensor C = Tensor::zeros(static_cast<int64_t>(row_ids.size()), n);
    for (size_t i = 0; i < row_ids.size(); ++i) {
        const int64_t r = row_ids[i];
        require(r >= 0 && r < A.rows(), "gather_rows: index out of range");
        std::copy_n(A.values.data() + r * n, n, C.values.data() + static_cast<int64_t>(i) * n);
    }
    return push({OpKind::kGatherRows, {a}, std::move(C), row_ids, {}}, static_cast<uint64_t>(C.numel()));
}

NodeId Tape::concat_rows(const std::vector<NodeId>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const int64_t n = value(parts[0]).cols();
    int64_t rows = 0;
    for (NodeId p : parts) {
        require(value(p).cols() == n, "concat_rows: column counts differ");
        rows += value(p).rows();
    }
    Tensor C = Tensor::zeros(rows, n);
    int64_t r0 = 0;
    for (NodeId p : parts) {
        const Tensor& P = value(p);
        std::copy(P.values.begin(), P.values.end(), C.values.begin() + r0 * n);
        r0 += P.rows();
    }
    return push({OpKind::kConcatRows, parts, std::move(C), {}, {}}, static_cast<uint64_t>(rows * n));
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const int64_t m = value(parts[0]).rows();
    int64_t cols = 0;
    for (NodeId p : parts) {
        require(value(p).rows() == m, "concat_cols: row counts differ");
        cols += value(p).cols();
    }
    Tensor C = Tensor::zeros(m, cols);
    int64_t c0 = 0;
    for (NodeId p : parts) {
        const Tensor& P = value(p);
        for (int64_t r = 0; r < m; ++r)
            std::copy_n(P.values.data() + r * P.cols(), P.cols(), C.values.data() + r * cols + c0);
        c0 += P.cols();
    }
    return push({OpKind::kConcatCols, parts, std::move(C), {}, {}}, static_cast<uint64_t>(m * cols));
}

NodeId Tape::slice_cols(NodeId a, int64_t start, int64_t len) {
    const Tensor& A = value(a);
    require(start >= 0 && len >= 1 && start + len <= A.cols(), "slice_cols: range out of bounds");
    Tensor C = Tensor::zeros(A.rows(), len);
    for (int64_t r = 0; r < A.rows(); ++r)
        std::copy_n(A.values.data() + r * A.cols() + start, len, C.values.data() + r * len);
    return push({OpKind::kSliceCols, {a}, std::move(C), {start, len}, {}}, static_cast<uint64_t>(C.numel()));
}

NodeId Tape::mean_rows(NodeId a) {
    const Tensor& A = value(a);
    require(A.rows() >= 1, "mean_rows: no rows");
    Tensor C = Tensor::zeros(1, A.cols());
    for (int64_t r = 0; r < A.rows(); ++r)
        for (int64_t j = 0; j < A.cols(); ++j) C.values[static_cast<size_t>(j)] += A.at(r, j);
    const double inv = 1.0 / static_cast<double>(A.rows());
    for (double& v : C.values) v *= inv;
    return push({OpKind::kMeanRows, {a}, std::move(C), {}, {}}, static_cast<uint64_t>(A.numel()));
}

NodeId Tape::ssm_scan(NodeId u, NodeId decay) {
    const Tensor& U = value(u);
    const Tensor& A = value(decay);
    require(A.rows() == 1 && A.cols() == U.cols(), "ssm_scan: decay must be (1,H)");
    Tensor H = Tensor::zeros(U.rows(), U.cols());
    const int64_t n = U.cols();
    for (int64_t t = 0; t < U.rows(); ++t) {
        for (int64_t j = 0; j < n; ++j) {
            const double prev = t > 0 ? H.at(t - 1, j) : 0.0;
            H.at(t, j) = A.values[static_cast<size_t>(j)] * prev + U.at(t, j);
        }
    }
    return push({OpKind::kSsmScan, {u, decay}, std::move(H), {}, {}},
                static_cast<uint64_t>(2 * U.numel()));
}

NodeId Tape::mse(NodeId pred, NodeId target) {
    const Tensor& P = value(pred);
    const Tensor& T = value(target);
    require(same_shape(P, T), "mse: shapes differ " + P.shape_str() + " vs " + T.shape_str());
    double s = 0.0;
    for (size_t i = 0; i < P.values.size(); ++i) {
        const double d = P.values[i] - T.values[i];
        s += d * d;
    }
    s /= static_cast<double>(P.numel());
    return push({OpKind::kMse, {pred, target}, Tensor::scalar(s), {}, {}},
                static_cast<uint64_t>(2 * P.numel()));
}

NodeId Tape::cross_entropy(NodeId logits, const std::vector<int64_t>& targets,
                           const std::vector<double>& weights) {
    const Tensor& L = value(logits);
    require(static_cast<int64_t>(targets.size()) == L.rows(), "cross_entropy: one target per row required");
    require(targets.size() == weights.size(), "cross_entropy: one weight per row required");
    const int64_t v = L.cols();
    double total_w = 0.0;
    double loss = 0.0;
    for (int64_t r = 0; r < L.rows(); ++r) {
        const double w = weights[static_cast<size_t>(r)];
        if (w == 0.0) continue;
        require(targets[static_cast<size_t>(r)] >= 0 && targets[static_cast<size_t>(r)] < v,
                "cross_entropy: target id out of range");
        const double* row = L.values.data() + r * v;
        double mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double lse = 0.0;
        for (int64_t j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
        lse = mx + std::log(lse);
        loss += w * (lse - row[targets[static_cast<size_t>(r)]]);
        total_w += w;
    }
    require(total_w > 0.0, "cross_entropy: no active rows");
    loss /= total_w;
    TapeNode n{OpKind::kCrossEntropy, {logits}, Tensor::scalar(loss), targets, weights};
    n.daux.push_back(total_w);  // appended after the per-row weights
    return push(std::move(n), static_cast<uint64_t>(3 * L.numel()));
}

GradientMap Tape::backward(NodeId loss) const {
    require(loss >= 0 && static_cast<size_t>(loss) < nodes_.size(), "backward: bad loss node");
    require(value(loss).is_scalar(), "backward: loss must be scalar, got " + value(loss).shape_str());

    GradientMap g(nodes_.size());
    g.accum(loss, value(loss)).values[0] = 1.0;

    for (NodeId id = loss; id >= 0; --id) {
        if (!g.has(id)) continue;
        const TapeNode& n = nodes_[static_cast<size_t>(id)];
        const Tensor& dout = g.at(id);
        switch (n.kind) {
            case OpKind::kLeaf:
                break;
            case OpKind::kMatmul: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                Tensor& da = g.accum(n.inputs[0], A);
                Tensor& db = g.accum(n.inputs[1], B);
                // dA += dC * B^T ; dB += A^T * dC
                matmul_nt_acc(dout.values.data(), B.values.data(), da.values.data(),
                              dout.rows(), dout.cols(), B.rows());
                matmul_tn_acc(A.values.data(), dout.values.data(), db.values.data(),
                              A.rows(), A.cols(), dout.cols());
                break;
            }
            case OpKind::kMatmulNT: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                Tensor& da = g.accum(n.inputs[0], A);
                Tensor& db = g.accum(n.inputs[1], B);
                // C = A B^T : dA += dC * B ; dB += dC^T * A
                matmul_acc(dout.values.data(), B.values.data(), da.values.data(),
                           dout.rows(), dout.cols(), B.cols());
                matmul_tn_acc(dout.values.data(), A.values.data(), db.values.data(),
                              dout.rows(), dout.cols(), A.cols());
                break;
            }
            case OpKind::kAdd: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                Tensor& da = g.accum(n.inputs[0], A);
                for (size_t i = 0; i < da.values.size(); ++i) da.values[i] += dout.values[i];
                Tensor& db = g.accum(n.inputs[1], B);
                if (same_shape(A, B)) {
                    for (size_t i = 0; i < db.values.size(); ++i) db.values[i] += dout.values[i];
                } else {
                    for (int64_t r = 0; r < dout.rows(); ++r)
                        for (int64_t j = 0; j < dout.cols(); ++j)
                            db.values[static_cast<size_t>(j)] += dout.at(r, j);
                }
                break;
            }
            case OpKind::kMul: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                Tensor& da = g.accum(n.inputs[0], A);
                Tensor& db = g.accum(n.inputs[1], B);
                if (same_shape(A, B)) {
                    for (size_t i = 0; i < da.values.size(); ++i) {
                        da.values[i] += dout.values[i] * B.values[i];
                        db.values[i] += dout.values[i] * A.values[i];
                    }
                } else {
                    for (int64_t r = 0; r < A.rows(); ++r)
                        for (int64_t j = 0; j < A.cols(); ++j) {
                            da.at(r, j) += dout.at(r, j) * B.values[static_cast<size_t>(j)];
                            db.values[static_cast<size_t>(j)] += dout.at(r, j) * A.at(r, j);
                        }
                }
                break;
            }
            case OpKind::kScale: {
                Tensor& da = g.accum(n.inputs[0], value(n.inputs[0]));
                const double s = n.daux[0];
                for (size_t i = 0; i < da.values.size(); ++i) da.values[i] += s * dout.values[i];
                break;
            }
            case OpKind::kSilu: {
                const Tensor& X = value(n.inputs[0]);
                Tensor& da = g.accum(n.inputs[0], X);
                for (size_t i = 0; i < X.values.size(); ++i) {
                    const double s = 1.0 / (1.0 + std::exp(-X.values[i]));
                    da.values[i] += dout.values[i] * s * (1.0 + X.values[i] * (1.0 - s));
                }
                break;
            }
            case OpKind::kSigmoid: {
                Tensor& da = g.accum(n.inputs[0], value(n.inputs[0]));
                for (size_t i = 0; i < n.value.values.size(); ++i) {
                    const double y = n.value.values[i];
                    da.values[i] += dout.values[i] * y * (1.0 - y);
                }
                break;
            }
            case OpKind::kSoftmaxLast: {
                Tensor& da = g.accum(n.inputs[0], value(n.inputs[0]));
                const int64_t ncol = n.value.cols();
                for (int64_t r = 0; r < n.value.rows(); ++r) {
                    const double* y = n.value.values.data() + r * ncol;
                    const double* dy = dout.values.data() + r * ncol;
                    double dot = 0.0;
                    for (int64_t j = 0; j < ncol; ++j) dot += dy[j] * y[j];
                    double* dx = da.values.data() + r * ncol;
                    for (int64_t j = 0; j < ncol; ++j) dx[j] += (dy[j] - dot) * y[j];
                }
                break;
            }
            case OpKind::kRmsNorm: {
                const Tensor& X = value(n.inputs[0]);
                Tensor& da = g.accum(n.inputs[0], X);
                const double eps = n.daux[0];
                const int64_t ncol = X.cols();
                for (int64_t r = 0; r < X.rows(); ++r) {
                    const double* x = X.values.data() + r * ncol;
                    const double* dy = dout.values.data() + r * ncol;
                    double ms = 0.0, dot = 0.0;
                    for (int64_t j = 0; j < ncol; ++j) ms += x[j] * x[j];
                    ms = ms / static_cast<double>(ncol) + eps;
                    const double inv = 1.0 / std::sqrt(ms);
                    for (int64_t j = 0; j < ncol; ++j) dot += dy[j] * x[j];
                    const double c = inv * inv * inv * dot / static_cast<double>(ncol);
                    double* dx = da.values.data() + r * ncol;
                    for (int64_t j = 0; j < ncol; ++j) dx[j] += inv * dy[j] - c * x[j];
                }
                break;
            }
            case OpKind::kGatherRows: {
                const Tensor& A = value(n.inputs[0]);
                Tensor& da = g.accum(n.inputs[0], A);
                const int64_t ncol = A.cols();
                for (size_t i = 0; i < n.iaux.size(); ++i) {
                    const int64_t r = n.iaux[i];
                    const double* src = dout.values.data() + static_cast<int64_t>(i) * ncol;
                    double* dst = da.values.data() + r * ncol;
                    for (int64_t j = 0; j < ncol; ++j) dst[j] += src[j];
                }
                break;
            }
            case OpKind::kConcatRows: {
                int64_t r0 = 0;
                const int64_t ncol = n.value.cols();
                for (NodeId p : n.inputs) {
                    const Tensor& P = value(p);
                    Tensor& dp = g.accum(p, P);
                    for (int64_t r = 0; r < P.rows(); ++r)
                        for (int64_t j = 0; j < ncol; ++j) dp.at(r, j) += dout.at(r0 + r, j);
                    r0 += P.rows();
                }
                break;
            }
            case OpKind::kConcatCols: {
                int64_t c0 = 0;
                for (NodeId p : n.inputs) {
                    const Tensor& P = value(p);
                    Tensor& dp = g.accum(p, P);
                    for (int64_t r = 0; r < P.rows(); ++r)
                        for (int64_t j = 0; j < P.cols(); ++j) dp.at(r, j) += dout.at(r, c0 + j);
                    c0 += P.cols();
                }
                break;
            }
            case OpKind::kSliceCols: {
                const Tensor& A = value(n.inputs[0]);
                Tensor& da = g.accum(n.inputs[0], A);
                const int64_t start = n.iaux[0];
                const int64_t len = n.iaux[1];
                for (int64_t r = 0; r < A.rows(); ++r)
                    for (int64_t j = 0; j < len; ++j) da.at(r, start + j) += dout.at(r, j);
                break;
            }
            case OpKind::kMeanRows: {
                const Tensor& A = value(n.inputs[0]);
                Tensor& da = g.accum(n.inputs[0], A);
                const double inv = 1.0 / static_cast<double>(A.rows());
                for (int64_t r = 0; r < A.rows(); ++r)
                    for (int64_t j = 0; j < A.cols(); ++j)
                        da.at(r, j) += inv * dout.values[static_cast<size_t>(j)];
                break;
            }
            case OpKind::kSsmScan: {
                const Tensor& U = value(n.inputs[0]);
                const Tensor& A = value(n.inputs[1]);
                Tensor& du = g.accum(n.inputs[0], U);
                Tensor& da = g.accum(n.inputs[1], A);
                const int64_t T = U.rows();
                const int64_t H = U.cols();
                // Reverse recurrence: G_t = dH_t + a (.) G_{t+1};
                // dU_t = G_t; dA_j = sum_t G_t[j] * h_{t-1}[j].
                std::vector<double> carry(static_cast<size_t>(H), 0.0);
                for (int64_t t = T - 1; t >= 0; --t) {
                    for (int64_t j = 0; j < H; ++j) {
                        const double gt = dout.at(t, j) + A.values[static_cast<size_t>(j)] * carry[static_cast<size_t>(j)];
                        du.at(t, j) += gt;
                        if (t > 0) da.values[static_cast<size_t>(j)] += gt * n.value.at(t - 1, j);
                        carry[static_cast<size_t>(j)] = gt;
                    }
                }
                break;
            }
            case OpKind::kMse: {
                const Tensor& P = value(n.inputs[0]);
                const Tensor& T = value(n.inputs[1]);
                Tensor& dp = g.accum(n.inputs[0], P);
                Tensor& dt = g.accum(n.inputs[1], T);
                const double c = 2.0 * dout.values[0] / static_cast<double>(P.numel());
                for (size_t i = 0; i < P.values.size(); ++i) {
                    const double d = c * (P.values[i] - T.values[i]);
                    dp.values[i] += d;
                    dt.values[i] -= d;
                }
                break;
            }
            case OpKind::kCrossEntropy: {
                const Tensor& L = value(n.inputs[0]);
                Tensor& dl = g.accum(n.inputs[0], L);
                const int64_t v = L.cols();
                const double total_w = n.daux.back();
                for (int64_t r = 0; r < L.rows(); ++r) {
                    const double w = n.daux[static_cast<size_t>(r)];
                    if (w == 0.0) continue;
                    const double* row = L.values.data() + r * v;
                    double mx = row[0];
                    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                    double sum = 0.0;
                    for (int64_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
                    const double c = dout.values[0] * w / total_w;
                    double* dst = dl.values.data() + r * v;
                    for (int64_t j = 0; j < v; ++j) dst[j] += c * (std::exp(row[j] - mx) / sum);
                    dst[n.iaux[static_cast<size_t>(r)]] -= c;
                }
                break;
            }
        }
        // All consumers of this node were already visited (reverse order), so
        // interior gradients can be dropped; only leaf gradients are returned.
        if (n.kind != OpKind::kLeaf) g.release(id);
    }
    return g;
}

}  // namespace brainattr
