// SPDX-License-Identifier: Apache-2.0
//
// Compression transforms. The SVD variant diagonalizes E^T E with cyclic
// Jacobi rotations in double precision, which is exact enough at desk
// scale and keeps the dependency surface empty.

#include "shrinkpipe/compress.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "shrinkpipe/errors.hpp"
#include "shrinkpipe/kernels.hpp"

namespace shrinkpipe {

namespace {

Tensor slice_block(const Tensor& t, int rows, int cols) {
    Tensor out = Tensor::zeros({rows, cols});
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out.at(r, c) = t.data[static_cast<std::size_t>(r) * t.cols() + c];
    return out;
}

Tensor slice_vec(const Tensor& t, int n) {
    Tensor out = Tensor::zeros({n});
    for (int i = 0; i < n; ++i) out.data[static_cast<std::size_t>(i)] = t.data[static_cast<std::size_t>(i)];
    return out;
}

// Cyclic Jacobi diagonalization of a symmetric matrix; returns eigenpairs
// sorted by descending eigenvalue. Throws NumericError on non-convergence.
void jacobi_symmetric(std::vector<double> a, int n, std::vector<double>& eigenvalues,
                      std::vector<double>& eigenvectors /* column-major-by-row: vec[i*n+j] = V_ij */) {
    eigenvectors.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eigenvectors[static_cast<std::size_t>(i) * n + i] = 1.0;
    const auto off_norm = [&]() {
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) s += a[static_cast<std::size_t>(i) * n + j] *
                                                 a[static_cast<std::size_t>(i) * n + j];
        return std::sqrt(2.0 * s);
    };
    double scale = 0.0;
    for (double v : a) scale = std::max(scale, std::abs(v));
    const double tol = scale > 0.0 ? 1e-14 * scale * n : 0.0;

    constexpr int kMaxSweeps = 100;
    int sweep = 0;
    while (off_norm() > tol && tol > 0.0) {
        if (++sweep > kMaxSweeps) throw NumericError("svd_reduce: Jacobi eigensolver did not converge");
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<std::size_t>(p) * n + q];
                if (std::abs(apq) <= tol / (n * n)) continue;
                const double app = a[static_cast<std::size_t>(p) * n + p];
                const double aqq = a[static_cast<std::size_t>(q) * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = a[static_cast<std::size_t>(i) * n + p];
                    const double aiq = a[static_cast<std::size_t>(i) * n + q];
                    a[static_cast<std::size_t>(i) * n + p] = c * aip - s * aiq;
                    a[static_cast<std::size_t>(i) * n + q] = s * aip + c * aiq;
                }
                for (int j = 0; j < n; ++j) {
                    const double apj = a[static_cast<std::size_t>(p) * n + j];
                    const double aqj = a[static_cast<std::size_t>(q) * n + j];
                    a[static_cast<std::size_t>(p) * n + j] = c * apj - s * aqj;
                    a[static_cast<std::size_t>(q) * n + j] = s * apj + c * aqj;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = eigenvectors[static_cast<std::size_t>(i) * n + p];
                    const double viq = eigenvectors[static_cast<std::size_t>(i) * n + q];
                    eigenvectors[static_cast<std::size_t>(i) * n + p] = c * vip - s * viq;
                    eigenvectors[static_cast<std::size_t>(i) * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    eigenvalues.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) eigenvalues[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i) * n + i];
    // Sort eigenpairs by descending eigenvalue, reordering vector columns.
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
        if (eigenvalues[static_cast<std::size_t>(x)] != eigenvalues[static_cast<std::size_t>(y)])
            return eigenvalues[static_cast<std::size_t>(x)] > eigenvalues[static_cast<std::size_t>(y)];
        return x < y;
    });
    std::vector<double> sorted_vals(static_cast<std::size_t>(n));
    std::vector<double> sorted_vecs(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j) {
        sorted_vals[static_cast<std::size_t>(j)] = eigenvalues[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
        for (int i = 0; i < n; ++i)
            sorted_vecs[static_cast<std::size_t>(i) * n + j] =
                eigenvectors[static_cast<std::size_t>(i) * n + order[static_cast<std::size_t>(j)]];
    }
    eigenvalues = std::move(sorted_vals);
    eigenvectors = std::move(sorted_vecs);
}

Tensor project_vec(const Tensor& q, const Tensor& b) {  // Q^T b, Q is H x k
    Tensor out = Tensor::zeros({q.cols()});
    kernels::ref::matmul_tn(q.ptr(), b.ptr(), out.ptr(), q.cols(), q.rows(), 1, false);
    return out;
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {  // A x B
    Tensor out = Tensor::zeros({a.rows(), b.cols()});
    kernels::matmul_nn(a.ptr(), b.ptr(), out.ptr(), a.rows(), a.cols(), b.cols(), false);
    return out;
}

Tensor matmul_tn_plain(const Tensor& a, const Tensor& b) {  // A^T x B, A is k_inner x m
    Tensor out = Tensor::zeros({a.cols(), b.cols()});
    kernels::matmul_tn(a.ptr(), b.ptr(), out.ptr(), a.cols(), a.rows(), b.cols(), false);
    return out;
}

std::string format2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string format4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

NeuronImportance accumulate_importance(EncoderModel& model, const Corpus& corpus, int batches,
                                       const DistillPlan& plan) {
    if (batches < 1) throw ConfigError("accumulate_importance: need at least one batch");
    const std::vector<int> rows = pack_corpus(corpus, plan.seq_len);
    const std::size_t n_rows = rows.size() / static_cast<std::size_t>(plan.seq_len);
    if (n_rows == 0) throw DataError("accumulate_importance: corpus has no full rows");
    std::vector<std::size_t> order(n_rows);
    std::iota(order.begin(), order.end(), std::size_t{0});

    NeuronImportance imp;
    imp.per_layer.assign(static_cast<std::size_t>(model.config.num_layers),
                         std::vector<double>(static_cast<std::size_t>(model.config.ffn_size), 0.0));
    EncoderModel scratch = EncoderModel::zeros_like(model);

    std::size_t done = 0;
    for (std::size_t first = 0; first + static_cast<std::size_t>(plan.batch_size) <= n_rows &&
                                done < static_cast<std::size_t>(batches);
         first += static_cast<std::size_t>(plan.batch_size), ++done) {
        Rng mask_rng(derive_seed(plan.seed, "importance", static_cast<std::uint64_t>(done)));
        TokenBatch raw;
        raw.batch = plan.batch_size;
        raw.seq = plan.seq_len;
        raw.ids.assign(rows.begin() + static_cast<std::ptrdiff_t>(first * static_cast<std::size_t>(plan.seq_len)),
                       rows.begin() + static_cast<std::ptrdiff_t>((first + static_cast<std::size_t>(plan.batch_size)) *
                                                                  static_cast<std::size_t>(plan.seq_len)));
        MaskedBatch masked =
            apply_masking(raw.ids, raw.batch, raw.seq, plan.mask_rate, model.config.vocab_size, mask_rng);
        bool any = false;
        for (std::uint8_t m : masked.mask)
            if (m != 0) { any = true; break; }
        if (!any) continue;

        Graph g;
        TokenBatch input;
        input.ids = masked.input_ids;
        input.batch = masked.batch;
        input.seq = masked.seq;
        const ForwardNodes nodes = build_forward(g, model, &scratch, input);
        g.backward(mlm_loss(g, nodes.logits, masked));
        for (int l = 0; l < model.config.num_layers; ++l) {
            const Tensor* gact = g.grad(nodes.ffn_activations[static_cast<std::size_t>(l)]);
            if (gact == nullptr) continue;
            std::vector<double>& layer = imp.per_layer[static_cast<std::size_t>(l)];
            for (int r = 0; r < gact->rows(); ++r) {
                const float* row = gact->ptr() + static_cast<std::int64_t>(r) * gact->cols();
                for (int j = 0; j < gact->cols(); ++j)
                    layer[static_cast<std::size_t>(j)] += std::abs(static_cast<double>(row[j]));
            }
        }
    }
    if (done == 0) throw DataError("accumulate_importance: corpus smaller than one batch");
    return imp;
}

std::vector<int> rank_neurons(const std::vector<double>& importance) {
    std::vector<int> order(importance.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double ia = importance[static_cast<std::size_t>(a)];
        const double ib = importance[static_cast<std::size_t>(b)];
        if (ia != ib) return ia > ib;
        return a < b;
    });
    return order;
}

EncoderModel prune_ffn(const EncoderModel& model, const NeuronImportance& importance, int target_f) {
    const int F = model.config.ffn_size;
    const int H = model.config.hidden_size;
    if (target_f < 1 || target_f > F)
        throw ConfigError("prune_ffn: target " + std::to_string(target_f) + " outside [1, " +
                          std::to_string(F) + "]");
    if (static_cast<int>(importance.per_layer.size()) != model.config.num_layers)
        throw ShapeError("prune_ffn: importance covers " + std::to_string(importance.per_layer.size()) +
                         " layers, model has " + std::to_string(model.config.num_layers));
    for (const std::vector<double>& layer : importance.per_layer)
        if (static_cast<int>(layer.size()) != F)
            throw ShapeError("prune_ffn: importance length " + std::to_string(layer.size()) +
                             " != ffn size " + std::to_string(F));

    ModelConfig cfg = model.config;
    cfg.ffn_size = target_f;
    EncoderModel out = EncoderModel::create(cfg);
    out.tok_emb = model.tok_emb;
    out.pos_emb = model.pos_emb;
    out.emb_norm_scale = model.emb_norm_scale;
    out.emb_norm_bias = model.emb_norm_bias;
    for (int l = 0; l < cfg.num_layers; ++l) {
        const LayerWeights& src = model.layers[static_cast<std::size_t>(l)];
        LayerWeights& dst = out.layers[static_cast<std::size_t>(l)];
        dst = src;  // copies attention + norms; FFN tensors replaced below
        const std::vector<int> order = rank_neurons(importance.per_layer[static_cast<std::size_t>(l)]);
        dst.w1 = Tensor::zeros({H, target_f});
        dst.b1 = Tensor::zeros({target_f});
        dst.w2 = Tensor::zeros({target_f, H});
        for (int j = 0; j < target_f; ++j) {
            const int keep = order[static_cast<std::size_t>(j)];
            for (int r = 0; r < H; ++r) dst.w1.at(r, j) = src.w1.data[static_cast<std::size_t>(r) * F + keep];
            dst.b1.data[static_cast<std::size_t>(j)] = src.b1.data[static_cast<std::size_t>(keep)];
            for (int c = 0; c < H; ++c) dst.w2.at(j, c) = src.w2.data[static_cast<std::size_t>(keep) * H + c];
        }
    }
    out.mlm_dense = model.mlm_dense;
    out.mlm_dense_bias = model.mlm_dense_bias;
    out.mlm_norm_scale = model.mlm_norm_scale;
    out.mlm_norm_bias = model.mlm_norm_bias;
    out.mlm_out_bias = model.mlm_out_bias;
    if (!cfg.tie_output_projection) out.out_proj = model.out_proj;
    return out;
}

namespace {

void check_hidden_target(const ModelConfig& config, int k, const char* op) {
    if (k < 1 || k > config.hidden_size)
        throw ConfigError(std::string(op) + ": k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(config.hidden_size) + "]");
    if (k % config.num_heads != 0)
        throw ConfigError(std::string(op) + ": k=" + std::to_string(k) + " not divisible by " +
                          std::to_string(config.num_heads) + " heads");
}

}  // namespace

EncoderModel truncate_hidden(const EncoderModel& model, int k) {
    check_hidden_target(model.config, k, "truncate_hidden");
    const int F = model.config.ffn_size;
    ModelConfig cfg = model.config;
    cfg.hidden_size = k;
    EncoderModel out = EncoderModel::create(cfg);
    out.tok_emb = slice_block(model.tok_emb, model.config.vocab_size, k);
    out.pos_emb = slice_block(model.pos_emb, model.config.max_positions, k);
    out.emb_norm_scale = slice_vec(model.emb_norm_scale, k);
    out.emb_norm_bias = slice_vec(model.emb_norm_bias, k);
    for (int l = 0; l < cfg.num_layers; ++l) {
        const LayerWeights& src = model.layers[static_cast<std::size_t>(l)];
        LayerWeights& dst = out.layers[static_cast<std::size_t>(l)];
        dst.wq = slice_block(src.wq, k, k);
        dst.bq = slice_vec(src.bq, k);
        dst.wk = slice_block(src.wk, k, k);
        dst.bk = slice_vec(src.bk, k);
        dst.wv = slice_block(src.wv, k, k);
        dst.bv = slice_vec(src.bv, k);
        dst.wo = slice_block(src.wo, k, k);
        dst.bo = slice_vec(src.bo, k);
        dst.attn_norm_scale = slice_vec(src.attn_norm_scale, k);
        dst.attn_norm_bias = slice_vec(src.attn_norm_bias, k);
        dst.w1 = slice_block(src.w1, k, F);
        dst.b1 = src.b1;
        dst.w2 = slice_block(src.w2, F, k);
        dst.b2 = slice_vec(src.b2, k);
        dst.ffn_norm_scale = slice_vec(src.ffn_norm_scale, k);
        dst.ffn_norm_bias = slice_vec(src.ffn_norm_bias, k);
    }
    out.mlm_dense = slice_block(model.mlm_dense, k, k);
    out.mlm_dense_bias = slice_vec(model.mlm_dense_bias, k);
    out.mlm_norm_scale = slice_vec(model.mlm_norm_scale, k);
    out.mlm_norm_bias = slice_vec(model.mlm_norm_bias, k);
    out.mlm_out_bias = model.mlm_out_bias;
    if (!cfg.tie_output_projection)
        out.out_proj = slice_block(model.out_proj, model.config.vocab_size, k);
    return out;
}

Tensor embedding_projection(const EncoderModel& model, int k) {
    const int H = model.config.hidden_size;
    if (k < 1 || k > H)
        throw ConfigError("embedding_projection: k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(H) + "]");
    const int V = model.config.vocab_size;
    // Gram matrix E^T E in double.
    std::vector<double> gram(static_cast<std::size_t>(H) * H, 0.0);
    for (int r = 0; r < V; ++r) {
        const float* row = model.tok_emb.ptr() + static_cast<std::int64_t>(r) * H;
        for (int i = 0; i < H; ++i)
            for (int j = i; j < H; ++j)
                gram[static_cast<std::size_t>(i) * H + j] += static_cast<double>(row[i]) * row[j];
    }
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < i; ++j)
            gram[static_cast<std::size_t>(i) * H + j] = gram[static_cast<std::size_t>(j) * H + i];

    std::vector<double> eigenvalues;
    std::vector<double> eigenvectors;
    jacobi_symmetric(std::move(gram), H, eigenvalues, eigenvectors);

    Tensor q = Tensor::zeros({H, k});
    for (int j = 0; j < k; ++j) {
        // Sign convention: the largest-magnitude component is positive.
        int arg = 0;
        for (int i = 1; i < H; ++i)
            if (std::abs(eigenvectors[static_cast<std::size_t>(i) * H + j]) >
                std::abs(eigenvectors[static_cast<std::size_t>(arg) * H + j]))
                arg = i;
        const double flip = eigenvectors[static_cast<std::size_t>(arg) * H + j] < 0.0 ? -1.0 : 1.0;
        for (int i = 0; i < H; ++i)
            q.at(i, j) = static_cast<float>(flip * eigenvectors[static_cast<std::size_t>(i) * H + j]);
    }
    return q;
}

EncoderModel svd_reduce(const EncoderModel& model, int k) {
    check_hidden_target(model.config, k, "svd_reduce");
    const Tensor q = embedding_projection(model, k);
    ModelConfig cfg = model.config;
    cfg.hidden_size = k;
    EncoderModel out = EncoderModel::create(cfg);
    out.tok_emb = matmul_plain(model.tok_emb, q);
    out.pos_emb = matmul_plain(model.pos_emb, q);
    out.emb_norm_scale.fill(1.0f);
    out.emb_norm_bias.zero();
    for (int l = 0; l < cfg.num_layers; ++l) {
        const LayerWeights& src = model.layers[static_cast<std::size_t>(l)];
        LayerWeights& dst = out.layers[static_cast<std::size_t>(l)];
        dst.wq = matmul_tn_plain(q, matmul_plain(src.wq, q));
        dst.bq = project_vec(q, src.bq);
        dst.wk = matmul_tn_plain(q, matmul_plain(src.wk, q));
        dst.bk = project_vec(q, src.bk);
        dst.wv = matmul_tn_plain(q, matmul_plain(src.wv, q));
        dst.bv = project_vec(q, src.bv);
        dst.wo = matmul_tn_plain(q, matmul_plain(src.wo, q));
        dst.bo = project_vec(q, src.bo);
        dst.attn_norm_scale.fill(1.0f);
        dst.attn_norm_bias.zero();
        dst.w1 = matmul_tn_plain(q, src.w1);
        dst.b1 = src.b1;
        dst.w2 = matmul_plain(src.w2, q);
        dst.b2 = project_vec(q, src.b2);
        dst.ffn_norm_scale.fill(1.0f);
        dst.ffn_norm_bias.zero();
    }
    out.mlm_dense = matmul_tn_plain(q, matmul_plain(model.mlm_dense, q));
    out.mlm_dense_bias = project_vec(q, model.mlm_dense_bias);
    out.mlm_norm_scale.fill(1.0f);
    out.mlm_norm_bias.zero();
    out.mlm_out_bias = model.mlm_out_bias;
    if (!cfg.tie_output_projection) out.out_proj = matmul_plain(model.out_proj, q);
    return out;
}

TrimmedModel trim_vocab_model(const EncoderModel& model, const Tokenizer& tokenizer,
                              const std::vector<int>& kept_ids) {
    const int V = model.config.vocab_size;
    if (tokenizer.vocab_size() != V)
        throw ConfigError("trim_vocab_model: tokenizer vocab " + std::to_string(tokenizer.vocab_size()) +
                          " != model vocab " + std::to_string(V));
    if (static_cast<int>(kept_ids.size()) < kNumSpecials)
        throw DataError("trim_vocab_model: kept ids must include the five specials");
    for (int i = 0; i < kNumSpecials; ++i)
        if (kept_ids[static_cast<std::size_t>(i)] != i)
            throw DataError("trim_vocab_model: kept id " + std::to_string(i) + " must stay special id " +
                            std::to_string(i));
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(V), 0);
    for (int id : kept_ids) {
        if (id < 0 || id >= V)
            throw DataError("trim_vocab_model: kept id " + std::to_string(id) + " outside vocab of " +
                            std::to_string(V));
        if (seen[static_cast<std::size_t>(id)]++ != 0)
            throw DataError("trim_vocab_model: duplicate kept id " + std::to_string(id));
    }

    const int n = static_cast<int>(kept_ids.size());
    const int H = model.config.hidden_size;
    ModelConfig cfg = model.config;
    cfg.vocab_size = n;
    EncoderModel out = EncoderModel::create(cfg);
    for (int i = 0; i < n; ++i) {
        const int src = kept_ids[static_cast<std::size_t>(i)];
        for (int c = 0; c < H; ++c)
            out.tok_emb.at(i, c) = model.tok_emb.data[static_cast<std::size_t>(src) * H + c];
        out.mlm_out_bias.data[static_cast<std::size_t>(i)] = model.mlm_out_bias.data[static_cast<std::size_t>(src)];
        if (!cfg.tie_output_projection)
            for (int c = 0; c < H; ++c)
                out.out_proj.at(i, c) = model.out_proj.data[static_cast<std::size_t>(src) * H + c];
    }
    out.pos_emb = model.pos_emb;
    out.emb_norm_scale = model.emb_norm_scale;
    out.emb_norm_bias = model.emb_norm_bias;
    out.layers = model.layers;
    out.mlm_dense = model.mlm_dense;
    out.mlm_dense_bias = model.mlm_dense_bias;
    out.mlm_norm_scale = model.mlm_norm_scale;
    out.mlm_norm_bias = model.mlm_norm_bias;

    std::vector<std::string> tokens;
    std::vector<std::int64_t> freqs;
    tokens.reserve(kept_ids.size());
    freqs.reserve(kept_ids.size());
    for (int id : kept_ids) {
        tokens.push_back(tokenizer.token_of(id));
        freqs.push_back(tokenizer.frequency(id));
    }
    return TrimmedModel{std::move(out), Tokenizer::from_rows(std::move(tokens), std::move(freqs))};
}

CompressionReport build_report(std::vector<StageRecord> stages) {
    if (stages.empty()) throw DataError("build_report: no stages");
    const double base = static_cast<double>(stages.front().params);
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (stages[i].params < 1) throw DataError("build_report: stage '" + stages[i].stage +
                                                  "' has no parameters");
        if (i >= 1 && stages[i].params >= stages[i - 1].params)
            throw DataError("build_report: stage '" + stages[i].stage +
                            "' does not reduce the parameter count");
        stages[i].reduction_pct = 100.0 * (1.0 - static_cast<double>(stages[i].params) / base);
    }
    CompressionReport report;
    report.stages = std::move(stages);
    return report;
}

std::string CompressionReport::to_csv() const {
    std::string out = "stage,params,reduction_pct,val_masked_acc,checkpoint\n";
    for (const StageRecord& s : stages) {
        out += s.stage + "," + std::to_string(s.params) + "," + format2(s.reduction_pct) + ",";
        out += s.val_masked_acc >= 0.0 ? format4(s.val_masked_acc) : std::string("");
        out += "," + s.checkpoint + "\n";
    }
    return out;
}

std::string CompressionReport::to_table() const {
    std::size_t name_w = 5;
    for (const StageRecord& s : stages) name_w = std::max(name_w, s.stage.size());
    std::string out;
    out += "stage";
    out.append(name_w - 5 + 2, ' ');
    out += "params        reduction   val_acc\n";
    for (const StageRecord& s : stages) {
        out += s.stage;
        out.append(name_w - s.stage.size() + 2, ' ');
        std::string p = std::to_string(s.params);
        out += p;
        out.append(p.size() < 12 ? 12 - p.size() + 2 : 2, ' ');
        std::string r = format2(s.reduction_pct) + "%";
        out += r;
        out.append(r.size() < 9 ? 9 - r.size() + 3 : 3, ' ');
        out += s.val_masked_acc >= 0.0 ? format4(s.val_masked_acc) : std::string("-");
        out += "\n";
    }
    return out;
}

}  // namespace shrinkpipe
