// SPDX-License-Identifier: Apache-2.0
//
// Bottleneck adapter construction and the frozen-backbone task trainers.
// The backbone participates in every forward pass as constants; only the
// adapter stack and the task head ever see an optimizer step.

#include "shrinkpipe/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "shrinkpipe/errors.hpp"
#include "shrinkpipe/metrics.hpp"
#include "shrinkpipe/rng.hpp"

namespace shrinkpipe {

namespace {

constexpr float kBeta1 = 0.9f;
constexpr float kBeta2 = 0.999f;
constexpr float kEps = 1e-8f;

// Adam over an explicit parameter/gradient list (adapter + head tensors).
class FlatAdam {
public:
    void add(Tensor* w, Tensor* g) {
        ws_.push_back(w);
        gs_.push_back(g);
        m_.push_back(Tensor::zeros(w->shape));
        v_.push_back(Tensor::zeros(w->shape));
    }

    void step(float lr) {
        ++t_;
        const float inv_bc1 = static_cast<float>(1.0 / (1.0 - std::pow(static_cast<double>(kBeta1), t_)));
        const float inv_bc2 = static_cast<float>(1.0 / (1.0 - std::pow(static_cast<double>(kBeta2), t_)));
        for (std::size_t i = 0; i < ws_.size(); ++i) {
            float* w = ws_[i]->ptr();
            const float* g = gs_[i]->ptr();
            float* m = m_[i].ptr();
            float* v = v_[i].ptr();
            const std::int64_t n = ws_[i]->numel();
            for (std::int64_t j = 0; j < n; ++j) {
                m[j] = kBeta1 * m[j] + (1.0f - kBeta1) * g[j];
                v[j] = kBeta2 * v[j] + (1.0f - kBeta2) * g[j] * g[j];
                w[j] -= lr * (m[j] * inv_bc1) / (std::sqrt(v[j] * inv_bc2) + kEps);
            }
        }
    }

    void zero_grads() {
        for (Tensor* g : gs_) g->zero();
    }

private:
    std::vector<Tensor*> ws_, gs_;
    std::vector<Tensor> m_, v_;
    int t_ = 0;
};

struct HeadGrads {
    Tensor w, b;
};

}  // namespace

std::int64_t adapter_param_count(const ModelConfig& config, int r) {
    config.validate();
    if (r < 1) throw ConfigError("adapter_param_count: reduction factor must be >= 1");
    const std::int64_t H = config.hidden_size;
    const std::int64_t b = H / r;
    return static_cast<std::int64_t>(config.num_layers) * (2 * H * b + b + H);
}

AdapterStack make_adapter_stack(const ModelConfig& config, int r, std::uint64_t seed) {
    config.validate();
    if (r < 1) throw ConfigError("make_adapter_stack: reduction factor must be >= 1");
    const int H = config.hidden_size;
    const int b = H / r;
    if (b < 1)
        throw ConfigError("make_adapter_stack: reduction factor " + std::to_string(r) +
                          " collapses the bottleneck of hidden size " + std::to_string(H));
    AdapterStack stack;
    stack.bottleneck = b;
    for (int l = 0; l < config.num_layers; ++l) {
        BottleneckAdapter a;
        Rng rng(derive_seed(seed, "adapter.down", static_cast<std::uint64_t>(l)));
        a.down = gaussian_tensor({H, b}, 0.02f, rng);
        a.down_bias = Tensor::zeros({b});
        a.up = Tensor::zeros({b, H});  // residual-safe start
        a.up_bias = Tensor::zeros({H});
        stack.layers.push_back(std::move(a));
    }
    return stack;
}

AdapterStack adapter_zeros_like(const AdapterStack& stack) {
    AdapterStack out;
    out.bottleneck = stack.bottleneck;
    for (const BottleneckAdapter& a : stack.layers) {
        BottleneckAdapter z;
        z.down = Tensor::zeros(a.down.shape);
        z.down_bias = Tensor::zeros(a.down_bias.shape);
        z.up = Tensor::zeros(a.up.shape);
        z.up_bias = Tensor::zeros(a.up_bias.shape);
        out.layers.push_back(std::move(z));
    }
    return out;
}

std::int64_t adapter_actual_param_count(const AdapterStack& stack) {
    std::int64_t total = 0;
    for (const BottleneckAdapter& a : stack.layers)
        total += a.down.numel() + a.down_bias.numel() + a.up.numel() + a.up_bias.numel();
    return total;
}

TaskHyperparams default_task_hyperparams(TaskKind kind) {
    TaskHyperparams hp;
    if (kind == TaskKind::kClassification) {
        hp.learning_rate = 1e-4f;
        hp.batch_size = 16;
    } else {
        hp.learning_rate = 3e-4f;
        hp.batch_size = 64;
    }
    return hp;
}

namespace {

// Classification rows: [CLS] + text tokens, truncated and padded to max_len.
TokenBatch encode_classification_batch(const Tokenizer& tok, const std::vector<ClassificationExample>& ex,
                                       std::size_t first, std::size_t count, int max_len) {
    TokenBatch batch;
    batch.batch = static_cast<int>(count);
    batch.seq = max_len;
    batch.ids.assign(count * static_cast<std::size_t>(max_len), kPadId);
    batch.valid.assign(count * static_cast<std::size_t>(max_len), 0);
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<int> ids = tok.encode(ex[first + i].text);
        if (static_cast<int>(ids.size()) > max_len - 1) ids.resize(static_cast<std::size_t>(max_len - 1));
        const std::size_t base = i * static_cast<std::size_t>(max_len);
        batch.ids[base] = kClsId;
        batch.valid[base] = 1;
        for (std::size_t j = 0; j < ids.size(); ++j) {
            batch.ids[base + 1 + j] = ids[j];
            batch.valid[base + 1 + j] = 1;
        }
    }
    return batch;
}

// Tagging rows: word tokens, truncated and padded; labels mirror the mask.
TokenBatch encode_tagging_batch(const Tokenizer& tok, const std::vector<TaggingExample>& ex,
                                std::size_t first, std::size_t count, int max_len,
                                std::vector<int>* labels, std::vector<std::uint8_t>* label_mask) {
    TokenBatch batch;
    batch.batch = static_cast<int>(count);
    batch.seq = max_len;
    batch.ids.assign(count * static_cast<std::size_t>(max_len), kPadId);
    batch.valid.assign(count * static_cast<std::size_t>(max_len), 0);
    labels->assign(batch.ids.size(), 0);
    label_mask->assign(batch.ids.size(), 0);
    for (std::size_t i = 0; i < count; ++i) {
        const TaggingExample& e = ex[first + i];
        const std::size_t n = std::min(e.tokens.size(), static_cast<std::size_t>(max_len));
        const std::size_t base = i * static_cast<std::size_t>(max_len);
        for (std::size_t j = 0; j < n; ++j) {
            batch.ids[base + j] = tok.id_of(e.tokens[j]);
            batch.valid[base + j] = 1;
            (*labels)[base + j] = e.tags[j];
            (*label_mask)[base + j] = 1;
        }
    }
    return batch;
}

std::vector<int> cls_row_indices(int batch, int seq) {
    std::vector<int> rows(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) rows[static_cast<std::size_t>(b)] = b * seq;
    return rows;
}

// Shared trainer: the task closure supplies batch building, loss wiring,
// and dev/test evaluation.
struct AdapterBindings {
    AdapterStack* adapter;
    AdapterStack* adapter_grads;
    TaskHead* head;
    HeadGrads* head_grads;
};

NodeId head_logits(Graph& g, NodeId features, const AdapterBindings& b, bool trainable) {
    const NodeId w = g.param(&b.head->w, trainable ? &b.head_grads->w : nullptr);
    const NodeId bias = g.param(&b.head->b, trainable ? &b.head_grads->b : nullptr);
    return g.add_bias(g.matmul(features, w), bias);
}

}  // namespace

TaskResult train_classification_adapter(EncoderModel& model, const Tokenizer& tokenizer,
                                        const TaskSplit<ClassificationExample>& data, int num_classes,
                                        int r, const TaskHyperparams& hp) {
    if (num_classes < 2) throw ConfigError("train_classification_adapter: need at least two classes");
    if (hp.epochs < 0 || hp.batch_size < 1 || hp.max_len < 2)
        throw ConfigError("train_classification_adapter: bad hyperparameters");
    if (data.train.empty() || data.dev.empty() || data.test.empty())
        throw DataError("train_classification_adapter: empty split");
    for (const auto* split : {&data.train, &data.dev, &data.test})
        for (const ClassificationExample& e : *split)
            if (e.label < 0 || e.label >= num_classes)
                throw DataError("train_classification_adapter: label " + std::to_string(e.label) +
                                " outside [0, " + std::to_string(num_classes) + ")");

    const int H = model.config.hidden_size;
    TaskResult result;
    result.adapter = make_adapter_stack(model.config, r, derive_seed(hp.seed, "adapter"));
    Rng head_rng(derive_seed(hp.seed, "head"));
    result.head.w = gaussian_tensor({H, num_classes}, 0.02f, head_rng);
    result.head.b = Tensor::zeros({num_classes});

    AdapterStack adapter_grads = adapter_zeros_like(result.adapter);
    HeadGrads head_grads{Tensor::zeros(result.head.w.shape), Tensor::zeros(result.head.b.shape)};
    AdapterBindings bind{&result.adapter, &adapter_grads, &result.head, &head_grads};

    FlatAdam adam;
    for (std::size_t l = 0; l < result.adapter.layers.size(); ++l) {
        adam.add(&result.adapter.layers[l].down, &adapter_grads.layers[l].down);
        adam.add(&result.adapter.layers[l].down_bias, &adapter_grads.layers[l].down_bias);
        adam.add(&result.adapter.layers[l].up, &adapter_grads.layers[l].up);
        adam.add(&result.adapter.layers[l].up_bias, &adapter_grads.layers[l].up_bias);
    }
    adam.add(&result.head.w, &head_grads.w);
    adam.add(&result.head.b, &head_grads.b);

    const auto predict = [&](const std::vector<ClassificationExample>& examples) {
        std::vector<int> pred;
        for (std::size_t first = 0; first < examples.size(); first += static_cast<std::size_t>(hp.batch_size)) {
            const std::size_t count =
                std::min(static_cast<std::size_t>(hp.batch_size), examples.size() - first);
            TokenBatch batch = encode_classification_batch(tokenizer, examples, first, count, hp.max_len);
            Graph g;
            const ForwardNodes nodes = build_forward(g, model, nullptr, batch, &result.adapter, nullptr);
            const NodeId cls = g.gather_rows(nodes.final_hidden, cls_row_indices(batch.batch, batch.seq));
            const Tensor& logits = g.value(head_logits(g, cls, bind, false));
            for (int i = 0; i < logits.rows(); ++i) {
                const float* row = logits.ptr() + static_cast<std::int64_t>(i) * logits.cols();
                int best = 0;
                for (int c = 1; c < logits.cols(); ++c)
                    if (row[c] > row[best]) best = c;
                pred.push_back(best);
            }
        }
        return pred;
    };
    const auto evaluate = [&](const std::vector<ClassificationExample>& examples) {
        std::vector<int> gold;
        for (const ClassificationExample& e : examples) gold.push_back(e.label);
        return macro_f1(gold, predict(examples));
    };

    AdapterStack best_adapter = result.adapter;
    TaskHead best_head{result.head.w, result.head.b};
    double best_dev = evaluate(data.dev);

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<ClassificationExample> shuffled = data.train;
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(hp.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        for (std::size_t i = 0; i < order.size(); ++i) shuffled[i] = data.train[order[i]];
        for (std::size_t first = 0; first + static_cast<std::size_t>(hp.batch_size) <= shuffled.size();
             first += static_cast<std::size_t>(hp.batch_size)) {
            TokenBatch batch = encode_classification_batch(tokenizer, shuffled, first,
                                                           static_cast<std::size_t>(hp.batch_size), hp.max_len);
            std::vector<int> labels;
            for (std::size_t i = 0; i < static_cast<std::size_t>(hp.batch_size); ++i)
                labels.push_back(shuffled[first + i].label);
            adam.zero_grads();
            Graph g;
            const ForwardNodes nodes = build_forward(g, model, nullptr, batch, &result.adapter, &adapter_grads);
            const NodeId cls = g.gather_rows(nodes.final_hidden, cls_row_indices(batch.batch, batch.seq));
            const NodeId logits = head_logits(g, cls, bind, true);
            const NodeId loss = g.cross_entropy_masked(logits, labels,
                                                       std::vector<std::uint8_t>(labels.size(), 1));
            if (!std::isfinite(g.scalar_value(loss)))
                throw NumericError("train_classification_adapter: non-finite loss at epoch " +
                                   std::to_string(epoch));
            g.backward(loss);
            adam.step(hp.learning_rate);
        }
        const double dev = evaluate(data.dev);
        result.dev_history.push_back(static_cast<float>(dev));
        if (dev > best_dev) {
            best_dev = dev;
            best_adapter = result.adapter;
            best_head.w = result.head.w;
            best_head.b = result.head.b;
        }
    }

    result.adapter = std::move(best_adapter);
    result.head = std::move(best_head);
    result.dev_metric = static_cast<float>(best_dev);
    result.test_metric = static_cast<float>(evaluate(data.test));
    return result;
}

TaskResult train_tagging_adapter(EncoderModel& model, const Tokenizer& tokenizer,
                                 const TaskSplit<TaggingExample>& data,
                                 const std::vector<std::string>& tag_names, int r,
                                 const TaskHyperparams& hp) {
    const int num_tags = static_cast<int>(tag_names.size());
    if (num_tags < 1) throw ConfigError("train_tagging_adapter: empty tag set");
    if (hp.epochs < 0 || hp.batch_size < 1 || hp.max_len < 1)
        throw ConfigError("train_tagging_adapter: bad hyperparameters");
    if (data.train.empty() || data.dev.empty() || data.test.empty())
        throw DataError("train_tagging_adapter: empty split");
    for (const auto* split : {&data.train, &data.dev, &data.test})
        for (const TaggingExample& e : *split) {
            if (e.tokens.size() != e.tags.size())
                throw DataError("train_tagging_adapter: tokens/tags length mismatch");
            for (int t : e.tags)
                if (t < 0 || t >= num_tags)
                    throw DataError("train_tagging_adapter: tag " + std::to_string(t) + " outside [0, " +
                                    std::to_string(num_tags) + ")");
        }

    const int H = model.config.hidden_size;
    TaskResult result;
    result.adapter = make_adapter_stack(model.config, r, derive_seed(hp.seed, "adapter"));
    Rng head_rng(derive_seed(hp.seed, "head"));
    result.head.w = gaussian_tensor({H, num_tags}, 0.02f, head_rng);
    result.head.b = Tensor::zeros({num_tags});

    AdapterStack adapter_grads = adapter_zeros_like(result.adapter);
    HeadGrads head_grads{Tensor::zeros(result.head.w.shape), Tensor::zeros(result.head.b.shape)};
    AdapterBindings bind{&result.adapter, &adapter_grads, &result.head, &head_grads};

    FlatAdam adam;
    for (std::size_t l = 0; l < result.adapter.layers.size(); ++l) {
        adam.add(&result.adapter.layers[l].down, &adapter_grads.layers[l].down);
        adam.add(&result.adapter.layers[l].down_bias, &adapter_grads.layers[l].down_bias);
        adam.add(&result.adapter.layers[l].up, &adapter_grads.layers[l].up);
        adam.add(&result.adapter.layers[l].up_bias, &adapter_grads.layers[l].up_bias);
    }
    adam.add(&result.head.w, &head_grads.w);
    adam.add(&result.head.b, &head_grads.b);

    const auto evaluate = [&](const std::vector<TaggingExample>& examples) {
        std::vector<std::vector<std::string>> gold, pred;
        for (std::size_t first = 0; first < examples.size(); first += static_cast<std::size_t>(hp.batch_size)) {
            const std::size_t count =
                std::min(static_cast<std::size_t>(hp.batch_size), examples.size() - first);
            std::vector<int> labels;
            std::vector<std::uint8_t> label_mask;
            TokenBatch batch =
                encode_tagging_batch(tokenizer, examples, first, count, hp.max_len, &labels, &label_mask);
            Graph g;
            const ForwardNodes nodes = build_forward(g, model, nullptr, batch, &result.adapter, nullptr);
            const Tensor& logits = g.value(head_logits(g, nodes.final_hidden, bind, false));
            for (std::size_t i = 0; i < count; ++i) {
                const TaggingExample& e = examples[first + i];
                const std::size_t n = std::min(e.tokens.size(), static_cast<std::size_t>(hp.max_len));
                std::vector<std::string> g_tags, p_tags;
                for (std::size_t j = 0; j < n; ++j) {
                    g_tags.push_back(tag_names[static_cast<std::size_t>(e.tags[j])]);
                    const std::int64_t row = static_cast<std::int64_t>(i * static_cast<std::size_t>(hp.max_len) + j);
                    const float* lrow = logits.ptr() + row * logits.cols();
                    int best = 0;
                    for (int c = 1; c < logits.cols(); ++c)
                        if (lrow[c] > lrow[best]) best = c;
                    p_tags.push_back(tag_names[static_cast<std::size_t>(best)]);
                }
                gold.push_back(std::move(g_tags));
                pred.push_back(std::move(p_tags));
            }
        }
        return span_f1(gold, pred);
    };

    AdapterStack best_adapter = result.adapter;
    TaskHead best_head{result.head.w, result.head.b};
    double best_dev = evaluate(data.dev);

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<TaggingExample> shuffled = data.train;
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(hp.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        for (std::size_t i = 0; i < order.size(); ++i) shuffled[i] = data.train[order[i]];
        for (std::size_t first = 0; first + static_cast<std::size_t>(hp.batch_size) <= shuffled.size();
             first += static_cast<std::size_t>(hp.batch_size)) {
            std::vector<int> labels;
            std::vector<std::uint8_t> label_mask;
            TokenBatch batch = encode_tagging_batch(tokenizer, shuffled, first,
                                                    static_cast<std::size_t>(hp.batch_size), hp.max_len,
                                                    &labels, &label_mask);
            bool any = false;
            for (std::uint8_t m : label_mask)
                if (m != 0) { any = true; break; }
            if (!any) continue;
            adam.zero_grads();
            Graph g;
            const ForwardNodes nodes = build_forward(g, model, nullptr, batch, &result.adapter, &adapter_grads);
            const NodeId logits = head_logits(g, nodes.final_hidden, bind, true);
            const NodeId loss = g.cross_entropy_masked(logits, labels, label_mask);
            if (!std::isfinite(g.scalar_value(loss)))
                throw NumericError("train_tagging_adapter: non-finite loss at epoch " +
                                   std::to_string(epoch));
            g.backward(loss);
            adam.step(hp.learning_rate);
        }
        const double dev = evaluate(data.dev);
        result.dev_history.push_back(static_cast<float>(dev));
        if (dev > best_dev) {
            best_dev = dev;
            best_adapter = result.adapter;
            best_head.w = result.head.w;
            best_head.b = result.head.b;
        }
    }

    result.adapter = std::move(best_adapter);
    result.head = std::move(best_head);
    result.dev_metric = static_cast<float>(best_dev);
    result.test_metric = static_cast<float>(evaluate(data.test));
    return result;
}

}  // namespace shrinkpipe
