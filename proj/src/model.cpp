// SPDX-License-Identifier: Apache-2.0
//
// Encoder construction, parameter counting, forward-graph assembly, and
// teacher-to-student layer transplanting.

#include "shrinkpipe/model.hpp"

#include <string>

#include "shrinkpipe/adapters.hpp"
#include "shrinkpipe/errors.hpp"
#include "shrinkpipe/rng.hpp"

namespace shrinkpipe {

void ModelConfig::validate() const {
    if (num_layers < 1 || hidden_size < 1 || num_heads < 1 || ffn_size < 1 || vocab_size < 1 ||
        max_positions < 1)
        throw ConfigError("ModelConfig: all dimensions must be >= 1");
    if (hidden_size % num_heads != 0)
        throw ConfigError("ModelConfig: hidden size " + std::to_string(hidden_size) +
                          " not divisible by " + std::to_string(num_heads) + " heads");
}

std::int64_t param_count(const ModelConfig& c) {
    c.validate();
    const std::int64_t H = c.hidden_size;
    const std::int64_t F = c.ffn_size;
    const std::int64_t V = c.vocab_size;
    const std::int64_t P = c.max_positions;
    const std::int64_t L = c.num_layers;
    const std::int64_t per_layer = 4 * (H * H + H) + 2 * H + H * F + F + F * H + H + 2 * H;
    std::int64_t total = V * H + P * H + 2 * H + L * per_layer + (H * H + H) + 2 * H + V;
    if (!c.tie_output_projection) total += V * H;
    return total;
}

EncoderModel EncoderModel::create(const ModelConfig& config) {
    config.validate();
    const int H = config.hidden_size;
    const int F = config.ffn_size;
    const int V = config.vocab_size;
    const int P = config.max_positions;
    EncoderModel m;
    m.config = config;
    m.tok_emb = Tensor::zeros({V, H});
    m.pos_emb = Tensor::zeros({P, H});
    m.emb_norm_scale = Tensor::zeros({H});
    m.emb_norm_bias = Tensor::zeros({H});
    m.layers.resize(static_cast<std::size_t>(config.num_layers));
    for (LayerWeights& l : m.layers) {
        l.wq = Tensor::zeros({H, H});
        l.bq = Tensor::zeros({H});
        l.wk = Tensor::zeros({H, H});
        l.bk = Tensor::zeros({H});
        l.wv = Tensor::zeros({H, H});
        l.bv = Tensor::zeros({H});
        l.wo = Tensor::zeros({H, H});
        l.bo = Tensor::zeros({H});
        l.attn_norm_scale = Tensor::zeros({H});
        l.attn_norm_bias = Tensor::zeros({H});
        l.w1 = Tensor::zeros({H, F});
        l.b1 = Tensor::zeros({F});
        l.w2 = Tensor::zeros({F, H});
        l.b2 = Tensor::zeros({H});
        l.ffn_norm_scale = Tensor::zeros({H});
        l.ffn_norm_bias = Tensor::zeros({H});
    }
    m.mlm_dense = Tensor::zeros({H, H});
    m.mlm_dense_bias = Tensor::zeros({H});
    m.mlm_norm_scale = Tensor::zeros({H});
    m.mlm_norm_bias = Tensor::zeros({H});
    m.mlm_out_bias = Tensor::zeros({V});
    if (!config.tie_output_projection) m.out_proj = Tensor::zeros({V, H});
    return m;
}

EncoderModel EncoderModel::random_init(const ModelConfig& config, std::uint64_t seed) {
    EncoderModel m = create(config);
    for (NamedTensor& nt : m.named_tensors()) {
        if (nt.tensor->rank() == 2) {
            Rng rng(derive_seed(seed, nt.name));
            *nt.tensor = gaussian_tensor(nt.tensor->shape, 0.02f, rng);
        } else if (nt.name.size() >= 10 && nt.name.compare(nt.name.size() - 10, 10, "norm.scale") == 0) {
            nt.tensor->fill(1.0f);
        }  // all other vectors stay zero
    }
    return m;
}

std::vector<NamedTensor> EncoderModel::named_tensors() {
    std::vector<NamedTensor> out;
    out.push_back({"tok_emb", &tok_emb});
    out.push_back({"pos_emb", &pos_emb});
    out.push_back({"emb_norm.scale", &emb_norm_scale});
    out.push_back({"emb_norm.bias", &emb_norm_bias});
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "layer." + std::to_string(i) + ".";
        LayerWeights& l = layers[i];
        out.push_back({p + "wq", &l.wq});
        out.push_back({p + "bq", &l.bq});
        out.push_back({p + "wk", &l.wk});
        out.push_back({p + "bk", &l.bk});
        out.push_back({p + "wv", &l.wv});
        out.push_back({p + "bv", &l.bv});
        out.push_back({p + "wo", &l.wo});
        out.push_back({p + "bo", &l.bo});
        out.push_back({p + "attn_norm.scale", &l.attn_norm_scale});
        out.push_back({p + "attn_norm.bias", &l.attn_norm_bias});
        out.push_back({p + "w1", &l.w1});
        out.push_back({p + "b1", &l.b1});
        out.push_back({p + "w2", &l.w2});
        out.push_back({p + "b2", &l.b2});
        out.push_back({p + "ffn_norm.scale", &l.ffn_norm_scale});
        out.push_back({p + "ffn_norm.bias", &l.ffn_norm_bias});
    }
    out.push_back({"mlm.dense", &mlm_dense});
    out.push_back({"mlm.dense_bias", &mlm_dense_bias});
    out.push_back({"mlm.norm.scale", &mlm_norm_scale});
    out.push_back({"mlm.norm.bias", &mlm_norm_bias});
    out.push_back({"mlm.out_bias", &mlm_out_bias});
    if (!config.tie_output_projection) out.push_back({"mlm.out_proj", &out_proj});
    return out;
}

std::int64_t EncoderModel::actual_param_count() const {
    std::int64_t total = 0;
    for (const NamedTensor& nt : const_cast<EncoderModel*>(this)->named_tensors()) total += nt.tensor->numel();
    return total;
}

namespace {

void check_batch(const EncoderModel& m, const TokenBatch& batch) {
    if (batch.batch < 1 || batch.seq < 1 ||
        static_cast<int>(batch.ids.size()) != batch.batch * batch.seq)
        throw ShapeError("forward: batch has " + std::to_string(batch.ids.size()) + " ids, expected " +
                         std::to_string(batch.batch) + "x" + std::to_string(batch.seq));
    if (batch.seq > m.config.max_positions)
        throw DataError("forward: sequence length " + std::to_string(batch.seq) + " exceeds max positions " +
                        std::to_string(m.config.max_positions));
    for (int id : batch.ids)
        if (id < 0 || id >= m.config.vocab_size)
            throw DataError("forward: token id " + std::to_string(id) + " outside vocab of " +
                            std::to_string(m.config.vocab_size));
    if (!batch.valid.empty() && static_cast<int>(batch.valid.size()) != batch.batch * batch.seq)
        throw ShapeError("forward: validity mask size " + std::to_string(batch.valid.size()) +
                         " != batch*seq");
}

// Bind a weight/grad pair; grads == nullptr freezes the tensor.
struct Binder {
    Graph& g;
    bool trainable;
    NodeId operator()(Tensor& value, Tensor& grad) const {
        return g.param(&value, trainable ? &grad : nullptr);
    }
};

}  // namespace

ForwardNodes build_forward(Graph& g, EncoderModel& model, EncoderModel* grads, const TokenBatch& batch,
                           const AdapterStack* adapters, AdapterStack* adapter_grads) {
    check_batch(model, batch);
    if (adapters != nullptr) {
        if (static_cast<int>(adapters->layers.size()) != model.config.num_layers)
            throw ShapeError("forward: adapter stack has " + std::to_string(adapters->layers.size()) +
                             " layers for a " + std::to_string(model.config.num_layers) + "-layer model");
        if (adapter_grads != nullptr && adapter_grads->layers.size() != adapters->layers.size())
            throw ShapeError("forward: adapter gradient stack size mismatch");
    }
    EncoderModel dummy;  // never touched when grads == nullptr
    EncoderModel& gm = grads != nullptr ? *grads : dummy;
    const Binder bind{g, grads != nullptr};

    const std::vector<std::uint8_t>* valid = batch.valid.empty() ? nullptr : &batch.valid;
    std::vector<int> pos_ids(batch.ids.size());
    for (int b = 0; b < batch.batch; ++b)
        for (int s = 0; s < batch.seq; ++s) pos_ids[static_cast<std::size_t>(b) * batch.seq + s] = s;

    const NodeId tok_emb = grads != nullptr ? g.param(&model.tok_emb, &gm.tok_emb)
                                            : g.param(&model.tok_emb, nullptr);
    NodeId x = g.add(g.gather_rows(tok_emb, batch.ids),
                     g.gather_rows(grads != nullptr ? g.param(&model.pos_emb, &gm.pos_emb)
                                                    : g.param(&model.pos_emb, nullptr),
                                   pos_ids));
    x = g.layer_norm(x, bind(model.emb_norm_scale, gm.emb_norm_scale),
                     bind(model.emb_norm_bias, gm.emb_norm_bias));

    ForwardNodes out;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        LayerWeights& l = model.layers[i];
        LayerWeights& lg = grads != nullptr ? gm.layers[i] : l;  // unused when frozen
        const NodeId q = g.add_bias(g.matmul(x, bind(l.wq, lg.wq)), bind(l.bq, lg.bq));
        const NodeId k = g.add_bias(g.matmul(x, bind(l.wk, lg.wk)), bind(l.bk, lg.bk));
        const NodeId v = g.add_bias(g.matmul(x, bind(l.wv, lg.wv)), bind(l.bv, lg.bv));
        const NodeId att = g.attention(q, k, v, batch.batch, batch.seq, model.config.num_heads, valid);
        const NodeId att_out = g.add_bias(g.matmul(att, bind(l.wo, lg.wo)), bind(l.bo, lg.bo));
        x = g.layer_norm(g.add(x, att_out), bind(l.attn_norm_scale, lg.attn_norm_scale),
                         bind(l.attn_norm_bias, lg.attn_norm_bias));
        const NodeId act = g.gelu(g.add_bias(g.matmul(x, bind(l.w1, lg.w1)), bind(l.b1, lg.b1)));
        out.ffn_activations.push_back(act);
        const NodeId ffn_out = g.add_bias(g.matmul(act, bind(l.w2, lg.w2)), bind(l.b2, lg.b2));
        x = g.layer_norm(g.add(x, ffn_out), bind(l.ffn_norm_scale, lg.ffn_norm_scale),
                         bind(l.ffn_norm_bias, lg.ffn_norm_bias));
        if (adapters != nullptr) {
            // Cast away const for node binding; frozen adapters get no grads.
            BottleneckAdapter& a = const_cast<BottleneckAdapter&>(adapters->layers[i]);
            BottleneckAdapter* ag =
                adapter_grads != nullptr ? &adapter_grads->layers[i] : nullptr;
            const Binder abind{g, adapter_grads != nullptr};
            BottleneckAdapter& agr = ag != nullptr ? *ag : a;
            const NodeId down =
                g.gelu(g.add_bias(g.matmul(x, abind(a.down, agr.down)), abind(a.down_bias, agr.down_bias)));
            const NodeId up = g.add_bias(g.matmul(down, abind(a.up, agr.up)), abind(a.up_bias, agr.up_bias));
            x = g.add(x, up);
        }
    }
    out.final_hidden = x;

    NodeId h = g.add_bias(g.matmul(x, bind(model.mlm_dense, gm.mlm_dense)),
                          bind(model.mlm_dense_bias, gm.mlm_dense_bias));
    h = g.layer_norm(g.gelu(h), bind(model.mlm_norm_scale, gm.mlm_norm_scale),
                     bind(model.mlm_norm_bias, gm.mlm_norm_bias));
    NodeId logits;
    if (model.config.tie_output_projection) {
        logits = g.matmul_nt(h, tok_emb);
    } else {
        logits = g.matmul_nt(h, bind(model.out_proj, gm.out_proj));
    }
    out.logits = g.add_bias(logits, bind(model.mlm_out_bias, gm.mlm_out_bias));
    return out;
}

Tensor forward(EncoderModel& model, const TokenBatch& batch) {
    Graph g;
    const ForwardNodes nodes = build_forward(g, model, nullptr, batch);
    return g.value(nodes.logits);
}

InitStrategy init_strategy_from_string(std::string_view name) {
    if (name == "first-k") return InitStrategy::kFirstK;
    if (name == "last-k") return InitStrategy::kLastK;
    if (name == "stride") return InitStrategy::kStride;
    if (name == "first+last") return InitStrategy::kFirstLast;
    if (name == "random") return InitStrategy::kRandom;
    throw ConfigError("unknown init strategy '" + std::string(name) +
                      "' (expected first-k, last-k, stride, first+last, random)");
}

std::string to_string(InitStrategy strategy) {
    switch (strategy) {
        case InitStrategy::kFirstK: return "first-k";
        case InitStrategy::kLastK: return "last-k";
        case InitStrategy::kStride: return "stride";
        case InitStrategy::kFirstLast: return "first+last";
        case InitStrategy::kRandom: return "random";
    }
    throw ConfigError("unknown init strategy value");
}

std::vector<int> strategy_layer_indices(InitStrategy strategy, int teacher_layers, int k) {
    if (k < 1 || k > teacher_layers)
        throw ConfigError("init_student: k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(teacher_layers) + "]");
    std::vector<int> idx;
    switch (strategy) {
        case InitStrategy::kFirstK:
            for (int i = 0; i < k; ++i) idx.push_back(i);
            break;
        case InitStrategy::kLastK:
            for (int i = teacher_layers - k; i < teacher_layers; ++i) idx.push_back(i);
            break;
        case InitStrategy::kStride: {
            if (teacher_layers % k != 0)
                throw ConfigError("init_student: stride needs teacher layers (" +
                                  std::to_string(teacher_layers) + ") to be a multiple of k (" +
                                  std::to_string(k) + ")");
            const int step = teacher_layers / k;
            for (int i = 0; i < k; ++i) idx.push_back(i * step);
            break;
        }
        case InitStrategy::kFirstLast: {
            const int front = (k + 1) / 2;
            const int back = k / 2;
            for (int i = 0; i < front; ++i) idx.push_back(i);
            for (int i = teacher_layers - back; i < teacher_layers; ++i) idx.push_back(i);
            break;
        }
        case InitStrategy::kRandom:
            break;
    }
    return idx;
}

EncoderModel init_student(const EncoderModel& teacher, InitStrategy strategy, int k, std::uint64_t seed) {
    ModelConfig cfg = teacher.config;
    const std::vector<int> idx = strategy_layer_indices(strategy, teacher.config.num_layers, k);
    cfg.num_layers = k;
    if (strategy == InitStrategy::kRandom) return EncoderModel::random_init(cfg, seed);
    EncoderModel student = EncoderModel::create(cfg);
    student.tok_emb = teacher.tok_emb;
    student.pos_emb = teacher.pos_emb;
    student.emb_norm_scale = teacher.emb_norm_scale;
    student.emb_norm_bias = teacher.emb_norm_bias;
    for (int i = 0; i < k; ++i) student.layers[static_cast<std::size_t>(i)] =
        teacher.layers[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    student.mlm_dense = teacher.mlm_dense;
    student.mlm_dense_bias = teacher.mlm_dense_bias;
    student.mlm_norm_scale = teacher.mlm_norm_scale;
    student.mlm_norm_bias = teacher.mlm_norm_bias;
    student.mlm_out_bias = teacher.mlm_out_bias;
    if (!cfg.tie_output_projection) student.out_proj = teacher.out_proj;
    return student;
}

}  // namespace shrinkpipe
