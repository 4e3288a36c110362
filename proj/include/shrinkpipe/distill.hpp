// SPDX-License-Identifier: Apache-2.0
//
// MLM masking, the distillation losses, and the two training loops:
// knowledge distillation into a student and plain MLM fine-tuning. Runs
// are pure functions of (initial weights, corpus, plan).

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "shrinkpipe/corpus.hpp"
#include "shrinkpipe/graph.hpp"
#include "shrinkpipe/model.hpp"
#include "shrinkpipe/rng.hpp"

namespace shrinkpipe {

enum class LossKind { kMse, kKl };
LossKind loss_kind_from_string(std::string_view name);  // throws ConfigError
std::string to_string(LossKind kind);

struct DistillPlan {
    LossKind loss_kind = LossKind::kMse;
    float alpha = 0.5f;
    float temperature = 2.0f;  // KL only
    int epochs = 10;
    float learning_rate = 5e-4f;
    int batch_size = 16;
    InitStrategy init_strategy = InitStrategy::kLastK;
    std::uint64_t seed = 1;
    bool distill_enabled = true;
    // Desk-scale knobs with BERT-convention defaults.
    float mask_rate = 0.15f;
    int seq_len = 32;
    double warmup_frac = 0.05;

    void validate() const;  // throws ConfigError
};

struct MaskedBatch {
    std::vector<int> input_ids;     // after masking
    std::vector<int> original_ids;  // targets
    std::vector<std::uint8_t> mask;  // 1 = position contributes to the loss
    int batch = 0;
    int seq = 0;
};

// 80% MASK / 10% random non-special / 10% unchanged over positions selected
// at `rate`; special tokens are never selected. rate must lie in (0, 1).
MaskedBatch apply_masking(const std::vector<int>& ids, int batch, int seq, float rate, int vocab_size,
                          Rng& rng);

// Loss builders over graph nodes (logits are (batch*seq) x V).
NodeId mlm_loss(Graph& g, NodeId logits, const MaskedBatch& batch);
NodeId mse_distill_loss(Graph& g, NodeId student_logits, NodeId teacher_logits,
                        const std::vector<std::uint8_t>& mask);
NodeId kl_distill_loss(Graph& g, NodeId student_logits, NodeId teacher_logits, float temperature,
                       const std::vector<std::uint8_t>& mask);
NodeId combined_loss(Graph& g, NodeId mlm, NodeId distill, float alpha);

// Fraction of masked positions whose argmax logit equals the original id.
double masked_accuracy(const Tensor& logits, const MaskedBatch& batch);

struct TrainingTrace {
    std::vector<float> train_loss;      // one entry per epoch
    std::vector<float> val_masked_acc;  // one entry per epoch

    std::string to_csv() const;  // epoch,train_loss,val_masked_acc
};

// Concatenates documents in order and cuts the stream into seq_len rows,
// dropping the final partial row.
std::vector<int> pack_corpus(const Corpus& corpus, int seq_len);

// Distills teacher into student on the packed train corpus with Adam and
// linear warmup; per-epoch validation uses masking from a fixed internal
// seed so traces are comparable across plans. Teacher stays frozen.
TrainingTrace train_distill(EncoderModel& student, EncoderModel& teacher, const Corpus& train,
                            const Corpus& validation, const DistillPlan& plan);

// Same loop with distillation off: the model itself is trained on MLM.
TrainingTrace mlm_finetune_teacher(EncoderModel& model, const Corpus& train, const Corpus& validation,
                                   const DistillPlan& plan);

}  // namespace shrinkpipe
