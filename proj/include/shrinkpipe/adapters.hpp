// SPDX-License-Identifier: Apache-2.0
//
// Sequential bottleneck adapters (one per layer, after the FFN sub-block,
// residual, no internal norm), task heads, and downstream training on a
// frozen backbone.

#pragma once

#include <cstdint>
#include <vector>

#include "shrinkpipe/corpus.hpp"
#include "shrinkpipe/model.hpp"
#include "shrinkpipe/tensor.hpp"
#include "shrinkpipe/tokenizer.hpp"

namespace shrinkpipe {

struct BottleneckAdapter {
    Tensor down, down_bias;  // H x b, b
    Tensor up, up_bias;      // b x H, H
};

struct AdapterStack {
    int bottleneck = 0;
    std::vector<BottleneckAdapter> layers;
};

// num_layers * (2*H*floor(H/r) + floor(H/r) + H); throws ConfigError on r < 1.
std::int64_t adapter_param_count(const ModelConfig& config, int r);

// Down-projection N(0, 0.02), up-projection and biases zero, so the stack
// is an exact identity at step 0.
AdapterStack make_adapter_stack(const ModelConfig& config, int r, std::uint64_t seed);
AdapterStack adapter_zeros_like(const AdapterStack& stack);
std::int64_t adapter_actual_param_count(const AdapterStack& stack);

struct TaskHead {
    Tensor w;  // H x C
    Tensor b;  // C
};

enum class TaskKind { kClassification, kTagging };

struct TaskHyperparams {
    float learning_rate = 1e-4f;
    int batch_size = 16;
    int epochs = 5;
    int max_len = 32;
    std::uint64_t seed = 1;
};
TaskHyperparams default_task_hyperparams(TaskKind kind);

struct TaskResult {
    AdapterStack adapter;
    TaskHead head;
    float dev_metric = 0.0f;   // metric of the dev-best epoch
    float test_metric = 0.0f;  // test metric of that checkpoint
    std::vector<float> dev_history;
};

// Both trainers leave the backbone bit-identical; only adapter and head
// receive updates. Labels outside [0, num_classes) raise DataError.
TaskResult train_classification_adapter(EncoderModel& model, const Tokenizer& tokenizer,
                                        const TaskSplit<ClassificationExample>& data, int num_classes,
                                        int r, const TaskHyperparams& hp);
TaskResult train_tagging_adapter(EncoderModel& model, const Tokenizer& tokenizer,
                                 const TaskSplit<TaggingExample>& data,
                                 const std::vector<std::string>& tag_names, int r,
                                 const TaskHyperparams& hp);

}  // namespace shrinkpipe
