// SPDX-License-Identifier: Apache-2.0
//
// Non-distillation compression transforms: gradient-importance FFN
// pruning, hidden-size truncation, the SVD projection alternative,
// vocabulary trimming, and compression reporting. Transforms never mutate
// their input model; they return a new one.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shrinkpipe/distill.hpp"
#include "shrinkpipe/model.hpp"
#include "shrinkpipe/tokenizer.hpp"

namespace shrinkpipe {

struct NeuronImportance {
    // per_layer[l][j] = accumulated |dL_MLM / d a_j| of post-GELU neuron j.
    std::vector<std::vector<double>> per_layer;
};

// Accumulates importance over up to `batches` masked batches of the given
// corpus (plan supplies batch size, sequence length, mask rate, seed).
// Weights are untouched. Throws ConfigError on batches < 1, DataError on
// an empty corpus.
NeuronImportance accumulate_importance(EncoderModel& model, const Corpus& corpus, int batches,
                                       const DistillPlan& plan);

// Neuron indices ordered by descending importance, ties toward the lower
// original index.
std::vector<int> rank_neurons(const std::vector<double>& importance);

// Keeps the target_f most important neurons per layer, reordered in
// descending importance; permutes W1 columns, b1, and W2 rows together.
EncoderModel prune_ffn(const EncoderModel& model, const NeuronImportance& importance, int target_f);

// First-k slice of every hidden-indexed axis; k must divide into the head
// count and not exceed the current hidden size.
EncoderModel truncate_hidden(const EncoderModel& model, int k);

// Projects every hidden-space axis through Q, the top-k right singular
// vectors of the token-embedding matrix; layer norms reset to scale 1 /
// bias 0. Throws NumericError if the eigensolver fails to converge.
EncoderModel svd_reduce(const EncoderModel& model, int k);

// Orthonormal H x k projection used by svd_reduce, exposed for testing.
Tensor embedding_projection(const EncoderModel& model, int k);

struct TrimmedModel {
    EncoderModel model;
    Tokenizer tokenizer;
};

// Gathers embedding rows and output-bias entries in kept-id order and
// remaps the tokenizer; kept_ids[i] must equal i for the five specials.
TrimmedModel trim_vocab_model(const EncoderModel& model, const Tokenizer& tokenizer,
                              const std::vector<int>& kept_ids);

struct StageRecord {
    std::string stage;
    ModelConfig config_after;
    std::int64_t params = 0;
    double reduction_pct = 0.0;    // vs stage 0, filled by build_report
    std::string checkpoint;        // may be empty
    double val_masked_acc = -1.0;  // negative = stage did not retrain
};

struct CompressionReport {
    std::vector<StageRecord> stages;

    std::string to_csv() const;
    std::string to_table() const;
};

// Validates the stage list (non-empty; params strictly decreasing from
// stage 1 on) and fills reduction percentages against stage 0.
CompressionReport build_report(std::vector<StageRecord> stages);

}  // namespace shrinkpipe
