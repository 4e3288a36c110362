// SPDX-License-Identifier: Apache-2.0
//
// Masking, loss builders, and the training loops. Every random choice is
// drawn from a seed derived from (plan.seed, purpose, epoch), so a run is
// reproducible byte-for-byte; validation masking uses its own fixed seed,
// making validation curves comparable across plans and epochs.

#include "shrinkpipe/distill.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>

#include "shrinkpipe/errors.hpp"
#include "shrinkpipe/threads.hpp"

namespace shrinkpipe {

namespace {

constexpr float kAdamBeta1 = 0.9f;
constexpr float kAdamBeta2 = 0.999f;
constexpr float kAdamEps = 1e-8f;
// Fixed seed for validation masking, independent of plan.seed.
constexpr std::uint64_t kValidationMaskSeed = 0x76616c6d61736bULL;

class Adam {
public:
    explicit Adam(const EncoderModel& model)
        : m_(EncoderModel::zeros_like(model)), v_(EncoderModel::zeros_like(model)) {}

    void update(EncoderModel& model, EncoderModel& grads, float lr) {
        ++step_;
        const double bc1 = 1.0 - std::pow(static_cast<double>(kAdamBeta1), static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(static_cast<double>(kAdamBeta2), static_cast<double>(step_));
        const float inv_bc1 = static_cast<float>(1.0 / bc1);
        const float inv_bc2 = static_cast<float>(1.0 / bc2);
        std::vector<NamedTensor> ws = model.named_tensors();
        std::vector<NamedTensor> gs = grads.named_tensors();
        std::vector<NamedTensor> ms = m_.named_tensors();
        std::vector<NamedTensor> vs = v_.named_tensors();
        for (std::size_t i = 0; i < ws.size(); ++i) {
            float* w = ws[i].tensor->ptr();
            const float* g = gs[i].tensor->ptr();
            float* m = ms[i].tensor->ptr();
            float* v = vs[i].tensor->ptr();
            const std::int64_t n = ws[i].tensor->numel();
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (n >= 16 * 1024)
            for (std::int64_t j = 0; j < n; ++j) {
                m[j] = kAdamBeta1 * m[j] + (1.0f - kAdamBeta1) * g[j];
                v[j] = kAdamBeta2 * v[j] + (1.0f - kAdamBeta2) * g[j] * g[j];
                const float mhat = m[j] * inv_bc1;
                const float vhat = v[j] * inv_bc2;
                w[j] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
            }
        }
    }

private:
    EncoderModel m_, v_;
    std::int64_t step_ = 0;
};

void zero_model(EncoderModel& model) {
    for (NamedTensor& nt : model.named_tensors()) nt.tensor->zero();
}

std::string format_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(v));
    return buf;
}

TokenBatch rows_to_batch(const std::vector<int>& rows, const std::vector<std::size_t>& order,
                         std::size_t first, std::size_t count, int seq_len) {
    TokenBatch b;
    b.batch = static_cast<int>(count);
    b.seq = seq_len;
    b.ids.reserve(count * static_cast<std::size_t>(seq_len));
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t row = order[first + i];
        const int* src = rows.data() + row * static_cast<std::size_t>(seq_len);
        b.ids.insert(b.ids.end(), src, src + seq_len);
    }
    return b;
}

double validation_accuracy(EncoderModel& model, const std::vector<int>& val_rows, const DistillPlan& plan) {
    const std::size_t n_rows = val_rows.size() / static_cast<std::size_t>(plan.seq_len);
    if (n_rows == 0) return 0.0;
    std::vector<std::size_t> order(n_rows);
    for (std::size_t i = 0; i < n_rows; ++i) order[i] = i;
    Rng mask_rng(derive_seed(kValidationMaskSeed, "val-mask"));
    std::int64_t correct = 0;
    std::int64_t total = 0;
    for (std::size_t first = 0; first < n_rows; first += static_cast<std::size_t>(plan.batch_size)) {
        const std::size_t count = std::min(static_cast<std::size_t>(plan.batch_size), n_rows - first);
        TokenBatch raw = rows_to_batch(val_rows, order, first, count, plan.seq_len);
        MaskedBatch masked = apply_masking(raw.ids, raw.batch, raw.seq, plan.mask_rate,
                                           model.config.vocab_size, mask_rng);
        std::int64_t batch_masked = 0;
        for (std::uint8_t m : masked.mask) batch_masked += m;
        if (batch_masked == 0) continue;
        TokenBatch input;
        input.ids = masked.input_ids;
        input.batch = masked.batch;
        input.seq = masked.seq;
        const Tensor logits = forward(model, input);
        const double acc = masked_accuracy(logits, masked);
        correct += static_cast<std::int64_t>(std::llround(acc * static_cast<double>(batch_masked)));
        total += batch_masked;
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// Shared epoch loop; teacher == nullptr means plain MLM training.
TrainingTrace train_loop(EncoderModel& student, EncoderModel* teacher, const Corpus& train,
                         const Corpus& validation, const DistillPlan& plan) {
    plan.validate();
    const bool distill = teacher != nullptr && plan.distill_enabled;
    if (teacher != nullptr && teacher->config.vocab_size != student.config.vocab_size)
        throw ConfigError("train_distill: student vocab " + std::to_string(student.config.vocab_size) +
                          " != teacher vocab " + std::to_string(teacher->config.vocab_size));

    const std::vector<int> train_rows = pack_corpus(train, plan.seq_len);
    const std::vector<int> val_rows = pack_corpus(validation, plan.seq_len);
    const std::size_t n_rows = train_rows.size() / static_cast<std::size_t>(plan.seq_len);
    const std::size_t steps_per_epoch = n_rows / static_cast<std::size_t>(plan.batch_size);
    if (steps_per_epoch == 0)
        throw DataError("train: corpus yields " + std::to_string(n_rows) + " rows of length " +
                        std::to_string(plan.seq_len) + ", fewer than one batch of " +
                        std::to_string(plan.batch_size));

    const std::int64_t total_steps = static_cast<std::int64_t>(steps_per_epoch) * plan.epochs;
    const std::int64_t warmup_steps =
        plan.warmup_frac > 0.0
            ? std::max<std::int64_t>(1, static_cast<std::int64_t>(plan.warmup_frac *
                                                                  static_cast<double>(total_steps)))
            : 0;

    EncoderModel grads = EncoderModel::zeros_like(student);
    Adam adam(student);
    TrainingTrace trace;
    std::int64_t global_step = 0;
    bool warned_skip = false;

    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        std::vector<std::size_t> order(n_rows);
        for (std::size_t i = 0; i < n_rows; ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(plan.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        Rng mask_rng(derive_seed(plan.seed, "mask", static_cast<std::uint64_t>(epoch)));

        double loss_sum = 0.0;
        std::int64_t loss_count = 0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            TokenBatch raw = rows_to_batch(train_rows, order, step * static_cast<std::size_t>(plan.batch_size),
                                           static_cast<std::size_t>(plan.batch_size), plan.seq_len);
            MaskedBatch masked = apply_masking(raw.ids, raw.batch, raw.seq, plan.mask_rate,
                                               student.config.vocab_size, mask_rng);
            bool any_masked = false;
            for (std::uint8_t m : masked.mask)
                if (m != 0) { any_masked = true; break; }
            if (!any_masked) {
                if (!warned_skip) {
                    std::cerr << "warning: batch with no maskable tokens skipped\n";
                    warned_skip = true;
                }
                continue;
            }

            zero_model(grads);
            Graph g;
            TokenBatch input;
            input.ids = masked.input_ids;
            input.batch = masked.batch;
            input.seq = masked.seq;
            NodeId loss;
            const ForwardNodes student_nodes = build_forward(g, student, &grads, input);
            const NodeId mlm = mlm_loss(g, student_nodes.logits, masked);
            if (distill) {
                const ForwardNodes teacher_nodes = build_forward(g, *teacher, nullptr, input);
                const NodeId kd =
                    plan.loss_kind == LossKind::kMse
                        ? mse_distill_loss(g, student_nodes.logits, teacher_nodes.logits, masked.mask)
                        : kl_distill_loss(g, student_nodes.logits, teacher_nodes.logits, plan.temperature,
                                          masked.mask);
                loss = combined_loss(g, mlm, kd, plan.alpha);
            } else {
                loss = mlm;
            }
            const float loss_value = g.scalar_value(loss);
            if (!std::isfinite(loss_value))
                throw NumericError("train: non-finite loss " + std::to_string(loss_value) + " at epoch " +
                                   std::to_string(epoch) + ", step " + std::to_string(step));
            g.backward(loss);

            ++global_step;
            const float lr_scale =
                warmup_steps > 0
                    ? static_cast<float>(std::min<double>(1.0, static_cast<double>(global_step) /
                                                                   static_cast<double>(warmup_steps)))
                    : 1.0f;
            adam.update(student, grads, plan.learning_rate * lr_scale);
            loss_sum += loss_value;
            ++loss_count;
        }
        if (loss_count == 0) throw DataError("train: every batch in epoch was skipped");
        trace.train_loss.push_back(static_cast<float>(loss_sum / static_cast<double>(loss_count)));
        trace.val_masked_acc.push_back(static_cast<float>(validation_accuracy(student, val_rows, plan)));
    }
    return trace;
}

}  // namespace

LossKind loss_kind_from_string(std::string_view name) {
    if (name == "mse" || name == "MSE") return LossKind::kMse;
    if (name == "kl" || name == "KL") return LossKind::kKl;
    throw ConfigError("unknown loss kind '" + std::string(name) + "' (expected mse or kl)");
}

std::string to_string(LossKind kind) { return kind == LossKind::kMse ? "mse" : "kl"; }

void DistillPlan::validate() const {
    if (alpha < 0.0f || alpha > 1.0f) throw ConfigError("plan: alpha must lie in [0, 1]");
    if (!(temperature > 0.0f)) throw ConfigError("plan: temperature must be positive");
    if (epochs < 1) throw ConfigError("plan: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("plan: batch size must be >= 1");
    if (seq_len < 1) throw ConfigError("plan: sequence length must be >= 1");
    if (!(mask_rate > 0.0f && mask_rate < 1.0f)) throw ConfigError("plan: mask rate must lie in (0, 1)");
    if (warmup_frac < 0.0 || warmup_frac > 1.0) throw ConfigError("plan: warmup fraction must lie in [0, 1]");
    if (!(learning_rate >= 0.0f)) throw ConfigError("plan: learning rate must be non-negative");
}

MaskedBatch apply_masking(const std::vector<int>& ids, int batch, int seq, float rate, int vocab_size,
                          Rng& rng) {
    if (!(rate > 0.0f && rate < 1.0f)) throw ConfigError("apply_masking: rate must lie in (0, 1)");
    if (static_cast<int>(ids.size()) != batch * seq)
        throw ShapeError("apply_masking: ids size " + std::to_string(ids.size()) + " != batch*seq");
    MaskedBatch out;
    out.original_ids = ids;
    out.input_ids = ids;
    out.mask.assign(ids.size(), 0);
    out.batch = batch;
    out.seq = seq;
    const int substitutable = vocab_size - kNumSpecials;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < kNumSpecials) continue;  // specials are never masked
        if (rng.uniform() >= rate) continue;
        out.mask[i] = 1;
        const double u = rng.uniform();
        if (u < 0.8) {
            out.input_ids[i] = kMaskId;
        } else if (u < 0.9) {
            out.input_ids[i] = substitutable > 0
                                   ? kNumSpecials + static_cast<int>(rng.below(
                                         static_cast<std::uint64_t>(substitutable)))
                                   : kMaskId;
        }  // else: keep the original token
    }
    return out;
}

NodeId mlm_loss(Graph& g, NodeId logits, const MaskedBatch& batch) {
    return g.cross_entropy_masked(logits, batch.original_ids, batch.mask);
}

NodeId mse_distill_loss(Graph& g, NodeId student_logits, NodeId teacher_logits,
                        const std::vector<std::uint8_t>& mask) {
    return g.mse_masked(student_logits, teacher_logits, mask);
}

NodeId kl_distill_loss(Graph& g, NodeId student_logits, NodeId teacher_logits, float temperature,
                       const std::vector<std::uint8_t>& mask) {
    return g.kl_masked(student_logits, teacher_logits, temperature, mask);
}

NodeId combined_loss(Graph& g, NodeId mlm, NodeId distill, float alpha) {
    if (alpha < 0.0f || alpha > 1.0f) throw ConfigError("combined_loss: alpha must lie in [0, 1]");
    return g.scalar_mix(mlm, distill, alpha, 1.0f - alpha);
}

double masked_accuracy(const Tensor& logits, const MaskedBatch& batch) {
    if (logits.rank() != 2 || logits.rows() != batch.batch * batch.seq)
        throw ShapeError("masked_accuracy: logits shape " + logits.shape_str() + " does not match batch");
    const int cols = logits.cols();
    std::int64_t correct = 0;
    std::int64_t total = 0;
    for (int r = 0; r < logits.rows(); ++r) {
        if (batch.mask[static_cast<std::size_t>(r)] == 0) continue;
        const float* row = logits.ptr() + static_cast<std::int64_t>(r) * cols;
        int best = 0;
        for (int c = 1; c < cols; ++c)
            if (row[c] > row[best]) best = c;
        if (best == batch.original_ids[static_cast<std::size_t>(r)]) ++correct;
        ++total;
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

std::string TrainingTrace::to_csv() const {
    std::string out = "epoch,train_loss,val_masked_acc\n";
    for (std::size_t i = 0; i < train_loss.size(); ++i) {
        out += std::to_string(i) + "," + format_float(train_loss[i]) + "," +
               format_float(val_masked_acc[i]) + "\n";
    }
    return out;
}

std::vector<int> pack_corpus(const Corpus& corpus, int seq_len) {
    if (seq_len < 1) throw ConfigError("pack_corpus: sequence length must be >= 1");
    std::vector<int> stream;
    stream.reserve(static_cast<std::size_t>(corpus.total_tokens()));
    for (const std::vector<int>& doc : corpus.docs) stream.insert(stream.end(), doc.begin(), doc.end());
    stream.resize(stream.size() - stream.size() % static_cast<std::size_t>(seq_len));
    return stream;
}

TrainingTrace train_distill(EncoderModel& student, EncoderModel& teacher, const Corpus& train,
                            const Corpus& validation, const DistillPlan& plan) {
    return train_loop(student, &teacher, train, validation, plan);
}

TrainingTrace mlm_finetune_teacher(EncoderModel& model, const Corpus& train, const Corpus& validation,
                                   const DistillPlan& plan) {
    return train_loop(model, nullptr, train, validation, plan);
}

}  // namespace shrinkpipe
