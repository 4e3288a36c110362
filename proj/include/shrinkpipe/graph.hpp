// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over Tensor. A Graph is built eagerly: every op
// runs its forward kernel at construction time and records what the
// backward pass needs. backward(loss) walks nodes in reverse creation
// order; parameter leaves accumulate into caller-owned gradient tensors,
// so tied weights are expressed by reusing one node in several ops.

#pragma once

#include <cstdint>
#include <vector>

#include "shrinkpipe/tensor.hpp"

namespace shrinkpipe {

using NodeId = std::int32_t;

inline constexpr float kLayerNormEps = 1e-5f;

class Graph {
public:
    // Leaves. param gradients accumulate into *grad (pass nullptr to freeze);
    // constant wraps read-only external storage; input moves a tensor in.
    NodeId param(Tensor* value, Tensor* grad);
    NodeId constant(const Tensor* value);
    NodeId input(Tensor value);

    NodeId matmul(NodeId a, NodeId b);     // (m,k) x (k,n)
    NodeId matmul_nt(NodeId a, NodeId b);  // (m,k) x (n,k)^T
    NodeId add(NodeId a, NodeId b);
    NodeId add_bias(NodeId x, NodeId bias);
    NodeId gelu(NodeId x);
    NodeId softmax_rows(NodeId x);
    NodeId layer_norm(NodeId x, NodeId scale, NodeId bias);
    NodeId gather_rows(NodeId table, std::vector<int> ids);
    // q, k, v: (batch*seq, heads*head_dim); valid (batch*seq entries, 1 =
    // usable key) may be null for fully valid batches.
    NodeId attention(NodeId q, NodeId k, NodeId v, int batch, int seq, int heads,
                     const std::vector<std::uint8_t>* valid);
    // Losses are means over rows with mask[r] == 1.
    NodeId cross_entropy_masked(NodeId logits, std::vector<int> targets, std::vector<std::uint8_t> mask);
    NodeId mse_masked(NodeId student, NodeId teacher, std::vector<std::uint8_t> mask);
    NodeId kl_masked(NodeId student, NodeId teacher, float temperature, std::vector<std::uint8_t> mask);
    NodeId scalar_mix(NodeId a, NodeId b, float wa, float wb);

    const Tensor& value(NodeId id) const;
    float scalar_value(NodeId id) const;
    // Gradient buffer of a node after backward(); nullptr if none was needed.
    const Tensor* grad(NodeId id) const;

    // loss must be a scalar op node; call once per graph.
    void backward(NodeId loss);

    int size() const { return static_cast<int>(nodes_.size()); }

private:
    enum class Op : std::uint8_t {
        kParam,
        kConstant,
        kInput,
        kMatmul,
        kMatmulNT,
        kAdd,
        kAddBias,
        kGelu,
        kSoftmaxRows,
        kLayerNorm,
        kGatherRows,
        kAttention,
        kCrossEntropyMasked,
        kMseMasked,
        kKlMasked,
        kScalarMix,
    };

    struct Node {
        Op op;
        NodeId in0 = -1;
        NodeId in1 = -1;
        NodeId in2 = -1;
        bool needs_grad = false;
        Tensor value;            // owned output (ops, kInput)
        Tensor* ext_value = nullptr;
        Tensor* ext_grad = nullptr;
        Tensor grad;             // owned gradient buffer (allocated in backward)
        // Saved-for-backward state, used per op kind.
        std::vector<float> stats;        // layer_norm mean ++ inv_std
        std::vector<int> ids;            // gather indices / CE targets
        std::vector<std::uint8_t> mask;  // loss masks / attention validity
        Tensor probs;                    // attention probabilities
        int batch = 0, seq = 0, heads = 0;
        float wa = 0.0f, wb = 0.0f;      // scalar_mix weights / KL temperature in wa
        int mask_count = 0;
    };

    const Node& at(NodeId id) const;
    Node& at(NodeId id);
    NodeId push(Node node);
    Tensor* grad_buffer(NodeId id);
    void check_rank2(NodeId id, const char* op) const;
    void backward_node(NodeId id);

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

}  // namespace shrinkpipe
