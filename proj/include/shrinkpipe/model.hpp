// SPDX-License-Identifier: Apache-2.0
//
// BERT-style transformer encoder: configuration, weight storage, exact
// parameter counting, the graph-building forward pass (with optional
// bottleneck adapters), and student initialization from a teacher.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "shrinkpipe/graph.hpp"
#include "shrinkpipe/tensor.hpp"

namespace shrinkpipe {

struct AdapterStack;

struct ModelConfig {
    int num_layers = 0;
    int hidden_size = 0;
    int num_heads = 0;
    int ffn_size = 0;
    int vocab_size = 0;
    int max_positions = 0;
    bool tie_output_projection = true;

    void validate() const;  // throws ConfigError
    bool operator==(const ModelConfig&) const = default;
};

// Exact scalar total from config metadata alone.
std::int64_t param_count(const ModelConfig& config);

struct LayerWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor attn_norm_scale, attn_norm_bias;
    Tensor w1, b1, w2, b2;
    Tensor ffn_norm_scale, ffn_norm_bias;
};

struct NamedTensor {
    std::string name;
    Tensor* tensor;
};

struct EncoderModel {
    ModelConfig config;
    Tensor tok_emb;  // V x H
    Tensor pos_emb;  // P x H
    Tensor emb_norm_scale, emb_norm_bias;
    std::vector<LayerWeights> layers;
    Tensor mlm_dense, mlm_dense_bias;  // H x H, H
    Tensor mlm_norm_scale, mlm_norm_bias;
    Tensor mlm_out_bias;  // V
    Tensor out_proj;      // V x H, only when untied

    // Zero-filled weights of the right shapes.
    static EncoderModel create(const ModelConfig& config);
    // BERT-family initialization: weights N(0, 0.02), norms 1/0, biases 0.
    static EncoderModel random_init(const ModelConfig& config, std::uint64_t seed);
    static EncoderModel zeros_like(const EncoderModel& other) { return create(other.config); }

    // Checkpoint-order name -> tensor view; same order for Adam mirrors.
    std::vector<NamedTensor> named_tensors();
    std::int64_t actual_param_count() const;
};

struct TokenBatch {
    std::vector<int> ids;  // batch*seq, row-major
    int batch = 0;
    int seq = 0;
    std::vector<std::uint8_t> valid;  // per position, empty = all valid
};

struct ForwardNodes {
    NodeId logits = -1;        // (batch*seq) x V
    NodeId final_hidden = -1;  // (batch*seq) x H
    std::vector<NodeId> ffn_activations;  // post-GELU, one per layer, (batch*seq) x F
};

// Builds the forward computation in g. Pass grads (a zeros_like mirror) to
// make the model trainable; nullptr freezes it. Adapters, when given, run
// after each layer's FFN sub-block with a residual connection.
ForwardNodes build_forward(Graph& g, EncoderModel& model, EncoderModel* grads, const TokenBatch& batch,
                           const AdapterStack* adapters = nullptr, AdapterStack* adapter_grads = nullptr);

// Convenience inference-only forward; returns logits (batch*seq) x V.
Tensor forward(EncoderModel& model, const TokenBatch& batch);

enum class InitStrategy { kFirstK, kLastK, kStride, kFirstLast, kRandom };

InitStrategy init_strategy_from_string(std::string_view name);  // throws ConfigError
std::string to_string(InitStrategy strategy);

// Teacher layer indices a strategy selects (random -> empty).
std::vector<int> strategy_layer_indices(InitStrategy strategy, int teacher_layers, int k);

// Student with k layers; embeddings/norms/head copied verbatim except for
// the random strategy, which draws everything fresh from seed.
EncoderModel init_student(const EncoderModel& teacher, InitStrategy strategy, int k, std::uint64_t seed = 0);

}  // namespace shrinkpipe
