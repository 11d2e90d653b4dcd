#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "brainattr/tensor.hpp"

namespace brainattr {

// Reverse-mode autodiff over a linear tape. A tape and its gradients belong
// to one thread; independent tapes run in parallel freely.

using NodeId = int32_t;

enum class OpKind : uint8_t {
    kLeaf,
    kMatmul,       // (m,k)x(k,n) -> (m,n)
    kMatmulNT,     // (m,k)x(n,k)^T -> (m,n)
    kAdd,          // same shape, or rhs (1,n) broadcast over rows
    kMul,          // same shape, or rhs (1,n) broadcast over rows
    kScale,        // multiply by compile-time scalar
    kSilu,
    kSigmoid,
    kSoftmaxLast,  // softmax over last axis, per row
    kRmsNorm,      // x / sqrt(mean(x^2) + eps), per row
    kGatherRows,   // embedding lookup / row select
    kConcatRows,
    kConcatCols,
    kSliceCols,
    kMeanRows,     // mean over axis 0 -> (1,n)
    kSsmScan,      // h_t = a (.) h_{t-1} + u_t, diagonal linear recurrence
    kMse,          // scalar mean squared error over all elements
    kCrossEntropy, // scalar mean CE over weighted rows of logits
};

struct TapeNode {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor value;                 // cached forward value
    std::vector<int64_t> iaux;    // gather indices / slice offsets / CE targets
    std::vector<double> daux;     // scale factor / eps / CE row weights
};

// node id -> gradient tensor of the node's output shape. Absent means zero.
class GradientMap {
public:
    explicit GradientMap(size_t n_nodes) : grads_(n_nodes) {}

    bool has(NodeId id) const { return !grads_[static_cast<size_t>(id)].values.empty(); }
    const Tensor& at(NodeId id) const { return grads_[static_cast<size_t>(id)]; }
    Tensor& accum(NodeId id, const Tensor& like) {
        Tensor& g = grads_[static_cast<size_t>(id)];
        if (g.values.empty()) g = Tensor::zeros_like(like);
        return g;
    }
    void release(NodeId id) {
        grads_[static_cast<size_t>(id)] = Tensor();
    }

private:
    std::vector<Tensor> grads_;
};

class Tape {
public:
    NodeId leaf(Tensor t);

    NodeId matmul(NodeId a, NodeId b);
    NodeId matmul_nt(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double s);
    NodeId silu(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId softmax_last(NodeId a);
    NodeId rms_norm(NodeId a, double eps = 1e-6);
    NodeId gather_rows(NodeId a, const std::vector<int64_t>& row_ids);
    NodeId concat_rows(const std::vector<NodeId>& parts);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    NodeId slice_cols(NodeId a, int64_t start, int64_t len);
    NodeId mean_rows(NodeId a);
    NodeId ssm_scan(NodeId u, NodeId decay);
    NodeId mse(NodeId pred, NodeId target);
    // Mean cross-entropy of logits rows against integer targets; rows with
    // weight 0 are inactive. Mean is over the total weight.
    NodeId cross_entropy(NodeId logits, const std::vector<int64_t>& targets,
                         const std::vector<double>& weights);

    const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    size_t size() const { return nodes_.size(); }
    const TapeNode& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }

    // Approximate scalar-operation count of all forward work so far. Used by
    // tests to assert the SSM path scales linearly with sequence length.
    uint64_t op_count() const { return op_count_; }

    // Exact reverse-mode gradients for every node that influences the loss.
    // The loss node must be scalar.
    GradientMap backward(NodeId loss) const;

private:
    NodeId push(TapeNode n, uint64_t cost);
    std::vector<TapeNode> nodes_;
    uint64_t op_count_ = 0;
};

}  // namespace brainattr
