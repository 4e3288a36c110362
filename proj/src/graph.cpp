// SPDX-License-Identifier: Apache-2.0
//
// Graph forward construction and the reverse sweep. Matrix work is
// delegated to the kernels; the masked losses touch only masked rows and
// run serially with double accumulation in a fixed order, so results do
// not depend on thread count.

#include "shrinkpipe/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "shrinkpipe/errors.hpp"
#include "shrinkpipe/kernels.hpp"

namespace shrinkpipe {

namespace {

std::string dims(const Tensor& t) { return t.shape_str(); }

// Stable log-softmax of one row at temperature tau; writes log-probs.
void log_softmax_row(const float* x, double* out, int cols, double tau) {
    double maxv = x[0] / tau;
    for (int c = 1; c < cols; ++c) maxv = std::max(maxv, static_cast<double>(x[c]) / tau);
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
        out[c] = static_cast<double>(x[c]) / tau - maxv;
        sum += std::exp(out[c]);
    }
    const double logz = std::log(sum);
    for (int c = 0; c < cols; ++c) out[c] -= logz;
}

}  // namespace

const Graph::Node& Graph::at(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
        throw std::logic_error("Graph: node id out of range");
    return nodes_[static_cast<std::size_t>(id)];
}

Graph::Node& Graph::at(NodeId id) { return const_cast<Node&>(static_cast<const Graph*>(this)->at(id)); }

NodeId Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
}

const Tensor& Graph::value(NodeId id) const {
    const Node& n = at(id);
    return n.ext_value != nullptr ? *n.ext_value : n.value;
}

float Graph::scalar_value(NodeId id) const {
    const Tensor& t = value(id);
    if (t.numel() != 1) throw ShapeError("scalar_value: node has shape " + dims(t));
    return t.data[0];
}

const Tensor* Graph::grad(NodeId id) const {
    const Node& n = at(id);
    if (n.op == Op::kParam) return n.ext_grad;
    return n.grad.numel() > 0 ? &n.grad : nullptr;
}

Tensor* Graph::grad_buffer(NodeId id) {
    Node& n = at(id);
    if (!n.needs_grad) return nullptr;
    if (n.op == Op::kParam) return n.ext_grad;
    return &n.grad;
}

void Graph::check_rank2(NodeId id, const char* op) const {
    const Tensor& t = value(id);
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got shape " + dims(t));
}

NodeId Graph::param(Tensor* value, Tensor* grad) {
    if (value == nullptr) throw std::logic_error("Graph::param: null value");
    if (grad != nullptr && !grad->same_shape(*value))
        throw ShapeError("param: gradient shape " + dims(*grad) + " does not match value " + dims(*value));
    Node n;
    n.op = Op::kParam;
    n.ext_value = value;
    n.ext_grad = grad;
    n.needs_grad = grad != nullptr;
    return push(std::move(n));
}

NodeId Graph::constant(const Tensor* value) {
    if (value == nullptr) throw std::logic_error("Graph::constant: null value");
    Node n;
    n.op = Op::kConstant;
    n.ext_value = const_cast<Tensor*>(value);
    return push(std::move(n));
}

NodeId Graph::input(Tensor value) {
    Node n;
    n.op = Op::kInput;
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    check_rank2(a, "matmul");
    check_rank2(b, "matmul");
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.cols() != bv.rows())
        throw ShapeError("matmul: inner dimensions disagree, " + dims(av) + " x " + dims(bv));
    Node n;
    n.op = Op::kMatmul;
    n.in0 = a;
    n.in1 = b;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.value = Tensor::zeros({av.rows(), bv.cols()});
    kernels::matmul_nn(av.ptr(), bv.ptr(), n.value.ptr(), av.rows(), av.cols(), bv.cols(), false);
    return push(std::move(n));
}

NodeId Graph::matmul_nt(NodeId a, NodeId b) {
    check_rank2(a, "matmul_nt");
    check_rank2(b, "matmul_nt");
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.cols() != bv.cols())
        throw ShapeError("matmul_nt: inner dimensions disagree, " + dims(av) + " x " + dims(bv) + "^T");
    Node n;
    n.op = Op::kMatmulNT;
    n.in0 = a;
    n.in1 = b;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.value = Tensor::zeros({av.rows(), bv.rows()});
    kernels::matmul_nt(av.ptr(), bv.ptr(), n.value.ptr(), av.rows(), av.cols(), bv.rows(), false);
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) throw ShapeError("add: shape mismatch, " + dims(av) + " vs " + dims(bv));
    Node n;
    n.op = Op::kAdd;
    n.in0 = a;
    n.in1 = b;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.value = Tensor::zeros(av.shape);
    kernels::add(av.ptr(), bv.ptr(), n.value.ptr(), av.numel());
    return push(std::move(n));
}

NodeId Graph::add_bias(NodeId x, NodeId bias) {
    check_rank2(x, "add_bias");
    const Tensor& xv = value(x);
    const Tensor& bv = value(bias);
    if (bv.rank() != 1 || bv.dim(0) != xv.cols())
        throw ShapeError("add_bias: bias shape " + dims(bv) + " does not match matrix " + dims(xv));
    Node n;
    n.op = Op::kAddBias;
    n.in0 = x;
    n.in1 = bias;
    n.needs_grad = at(x).needs_grad || at(bias).needs_grad;
    n.value = Tensor::zeros(xv.shape);
    kernels::add_rows_bias(xv.ptr(), bv.ptr(), n.value.ptr(), xv.rows(), xv.cols());
    return push(std::move(n));
}

NodeId Graph::gelu(NodeId x) {
    const Tensor& xv = value(x);
    Node n;
    n.op = Op::kGelu;
    n.in0 = x;
    n.needs_grad = at(x).needs_grad;
    n.value = Tensor::zeros(xv.shape);
    kernels::gelu_forward(xv.ptr(), n.value.ptr(), xv.numel());
    return push(std::move(n));
}

NodeId Graph::softmax_rows(NodeId x) {
    check_rank2(x, "softmax_rows");
    const Tensor& xv = value(x);
    Node n;
    n.op = Op::kSoftmaxRows;
    n.in0 = x;
    n.needs_grad = at(x).needs_grad;
    n.value = Tensor::zeros(xv.shape);
    kernels::softmax_rows(xv.ptr(), n.value.ptr(), xv.rows(), xv.cols());
    return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId x, NodeId scale, NodeId bias) {
    check_rank2(x, "layer_norm");
    const Tensor& xv = value(x);
    const Tensor& sv = value(scale);
    const Tensor& bv = value(bias);
    if (sv.rank() != 1 || sv.dim(0) != xv.cols() || bv.rank() != 1 || bv.dim(0) != xv.cols())
        throw ShapeError("layer_norm: scale " + dims(sv) + " / bias " + dims(bv) + " do not match matrix " +
                         dims(xv));
    Node n;
    n.op = Op::kLayerNorm;
    n.in0 = x;
    n.in1 = scale;
    n.in2 = bias;
    n.needs_grad = at(x).needs_grad || at(scale).needs_grad || at(bias).needs_grad;
    const int rows = xv.rows();
    n.stats.resize(static_cast<std::size_t>(rows) * 2);
    kernels::layer_norm_stats(xv.ptr(), rows, xv.cols(), kLayerNormEps, n.stats.data(), n.stats.data() + rows);
    n.value = Tensor::zeros(xv.shape);
    kernels::layer_norm_forward(xv.ptr(), sv.ptr(), bv.ptr(), n.stats.data(), n.stats.data() + rows,
                                n.value.ptr(), rows, xv.cols());
    return push(std::move(n));
}

NodeId Graph::gather_rows(NodeId table, std::vector<int> ids) {
    check_rank2(table, "gather_rows");
    const Tensor& tv = value(table);
    for (int id : ids)
        if (id < 0 || id >= tv.rows())
            throw DataError("gather_rows: index " + std::to_string(id) + " outside table with " +
                            std::to_string(tv.rows()) + " rows");
    Node n;
    n.op = Op::kGatherRows;
    n.in0 = table;
    n.needs_grad = at(table).needs_grad;
    n.value = Tensor::zeros({static_cast<int>(ids.size()), tv.cols()});
    kernels::gather_rows(tv.ptr(), ids.data(), n.value.ptr(), static_cast<int>(ids.size()), tv.cols());
    n.ids = std::move(ids);
    return push(std::move(n));
}

NodeId Graph::attention(NodeId q, NodeId k, NodeId v, int batch, int seq, int heads,
                        const std::vector<std::uint8_t>* valid) {
    check_rank2(q, "attention");
    const Tensor& qv = value(q);
    const Tensor& kv = value(k);
    const Tensor& vv = value(v);
    if (!qv.same_shape(kv) || !qv.same_shape(vv))
        throw ShapeError("attention: q/k/v shapes disagree, " + dims(qv) + " / " + dims(kv) + " / " + dims(vv));
    if (qv.rows() != batch * seq)
        throw ShapeError("attention: rows " + std::to_string(qv.rows()) + " != batch*seq " +
                         std::to_string(batch * seq));
    if (heads < 1 || qv.cols() % heads != 0)
        throw ShapeError("attention: width " + std::to_string(qv.cols()) + " not divisible into " +
                         std::to_string(heads) + " heads");
    if (valid != nullptr && static_cast<int>(valid->size()) != batch * seq)
        throw ShapeError("attention: validity mask has " + std::to_string(valid->size()) +
                         " entries, expected " + std::to_string(batch * seq));
    Node n;
    n.op = Op::kAttention;
    n.in0 = q;
    n.in1 = k;
    n.in2 = v;
    n.needs_grad = at(q).needs_grad || at(k).needs_grad || at(v).needs_grad;
    n.batch = batch;
    n.seq = seq;
    n.heads = heads;
    if (valid != nullptr) n.mask = *valid;
    n.value = Tensor::zeros(qv.shape);
    n.probs = Tensor::zeros({batch * heads, seq * seq});
    kernels::attention_forward(qv.ptr(), kv.ptr(), vv.ptr(), n.mask.empty() ? nullptr : n.mask.data(),
                               n.value.ptr(), n.probs.ptr(), batch, seq, heads, qv.cols() / heads);
    return push(std::move(n));
}

NodeId Graph::cross_entropy_masked(NodeId logits, std::vector<int> targets, std::vector<std::uint8_t> mask) {
    check_rank2(logits, "cross_entropy_masked");
    const Tensor& lv = value(logits);
    const int rows = lv.rows();
    const int cols = lv.cols();
    if (static_cast<int>(targets.size()) != rows || static_cast<int>(mask.size()) != rows)
        throw ShapeError("cross_entropy_masked: logits have " + std::to_string(rows) + " rows, targets " +
                         std::to_string(targets.size()) + ", mask " + std::to_string(mask.size()));
    int count = 0;
    double total = 0.0;
    std::vector<double> logp(static_cast<std::size_t>(cols));
    for (int r = 0; r < rows; ++r) {
        if (mask[static_cast<std::size_t>(r)] == 0) continue;
        const int t = targets[static_cast<std::size_t>(r)];
        if (t < 0 || t >= cols)
            throw DataError("cross_entropy_masked: target " + std::to_string(t) + " outside vocab of " +
                            std::to_string(cols) + " at row " + std::to_string(r));
        log_softmax_row(lv.ptr() + static_cast<std::int64_t>(r) * cols, logp.data(), cols, 1.0);
        total -= logp[static_cast<std::size_t>(t)];
        ++count;
    }
    if (count == 0) throw DataError("cross_entropy_masked: no masked positions");
    Node n;
    n.op = Op::kCrossEntropyMasked;
    n.in0 = logits;
    n.needs_grad = at(logits).needs_grad;
    n.ids = std::move(targets);
    n.mask = std::move(mask);
    n.mask_count = count;
    n.value = Tensor::scalar(static_cast<float>(total / count));
    return push(std::move(n));
}

NodeId Graph::mse_masked(NodeId student, NodeId teacher, std::vector<std::uint8_t> mask) {
    check_rank2(student, "mse_masked");
    const Tensor& sv = value(student);
    const Tensor& tv = value(teacher);
    if (!sv.same_shape(tv))
        throw ShapeError("mse_masked: student " + dims(sv) + " vs teacher " + dims(tv));
    if (static_cast<int>(mask.size()) != sv.rows())
        throw ShapeError("mse_masked: mask has " + std::to_string(mask.size()) + " entries for " +
                         std::to_string(sv.rows()) + " rows");
    const int cols = sv.cols();
    int count = 0;
    double total = 0.0;
    for (int r = 0; r < sv.rows(); ++r) {
        if (mask[static_cast<std::size_t>(r)] == 0) continue;
        const float* s = sv.ptr() + static_cast<std::int64_t>(r) * cols;
        const float* t = tv.ptr() + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
            const double d = static_cast<double>(s[c]) - static_cast<double>(t[c]);
            total += d * d;
        }
        ++count;
    }
    if (count == 0) throw DataError("mse_masked: no masked positions");
    Node n;
    n.op = Op::kMseMasked;
    n.in0 = student;
    n.in1 = teacher;
    n.needs_grad = at(student).needs_grad || at(teacher).needs_grad;
    n.mask = std::move(mask);
    n.mask_count = count;
    n.value = Tensor::scalar(static_cast<float>(total / (static_cast<double>(count) * cols)));
    return push(std::move(n));
}

NodeId Graph::kl_masked(NodeId student, NodeId teacher, float temperature, std::vector<std::uint8_t> mask) {
    check_rank2(student, "kl_masked");
    const Tensor& sv = value(student);
    const Tensor& tv = value(teacher);
    if (!sv.same_shape(tv)) throw ShapeError("kl_masked: student " + dims(sv) + " vs teacher " + dims(tv));
    if (static_cast<int>(mask.size()) != sv.rows())
        throw ShapeError("kl_masked: mask has " + std::to_string(mask.size()) + " entries for " +
                         std::to_string(sv.rows()) + " rows");
    if (!(temperature > 0.0f)) throw ConfigError("kl_masked: temperature must be positive");
    const int cols = sv.cols();
    const double tau = temperature;
    int count = 0;
    double total = 0.0;
    std::vector<double> ls(static_cast<std::size_t>(cols));
    std::vector<double> lt(static_cast<std::size_t>(cols));
    for (int r = 0; r < sv.rows(); ++r) {
        if (mask[static_cast<std::size_t>(r)] == 0) continue;
        log_softmax_row(sv.ptr() + static_cast<std::int64_t>(r) * cols, ls.data(), cols, tau);
        log_softmax_row(tv.ptr() + static_cast<std::int64_t>(r) * cols, lt.data(), cols, tau);
        double kl = 0.0;
        for (int c = 0; c < cols; ++c) kl += std::exp(lt[static_cast<std::size_t>(c)]) *
                                              (lt[static_cast<std::size_t>(c)] - ls[static_cast<std::size_t>(c)]);
        total += kl;
        ++count;
    }
    if (count == 0) throw DataError("kl_masked: no masked positions");
    Node n;
    n.op = Op::kKlMasked;
    n.in0 = student;
    n.in1 = teacher;
    n.needs_grad = at(student).needs_grad || at(teacher).needs_grad;
    n.mask = std::move(mask);
    n.mask_count = count;
    n.wa = temperature;
    n.value = Tensor::scalar(static_cast<float>(tau * tau * total / count));
    return push(std::move(n));
}

NodeId Graph::scalar_mix(NodeId a, NodeId b, float wa, float wb) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.numel() != 1 || bv.numel() != 1)
        throw ShapeError("scalar_mix: expects scalars, got " + dims(av) + " and " + dims(bv));
    Node n;
    n.op = Op::kScalarMix;
    n.in0 = a;
    n.in1 = b;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.wa = wa;
    n.wb = wb;
    n.value = Tensor::scalar(wa * av.data[0] + wb * bv.data[0]);
    return push(std::move(n));
}

void Graph::backward(NodeId loss) {
    if (ran_backward_) throw std::logic_error("Graph::backward: called twice on one graph");
    ran_backward_ = true;
    Node& top = at(loss);
    if (top.op == Op::kParam || top.op == Op::kConstant || top.op == Op::kInput)
        throw std::logic_error("Graph::backward: loss must be an op node");
    if (value(loss).numel() != 1)
        throw ShapeError("backward: loss must be scalar, got shape " + dims(value(loss)));
    if (!top.needs_grad) return;
    for (Node& n : nodes_) {
        if (!n.needs_grad || n.op == Op::kParam) continue;
        n.grad = Tensor::zeros(n.value.shape);
    }
    top.grad.data[0] = 1.0f;
    for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
        const Node& n = at(id);
        if (!n.needs_grad) continue;
        if (n.op == Op::kParam || n.op == Op::kConstant || n.op == Op::kInput) continue;
        backward_node(id);
    }
}

void Graph::backward_node(NodeId id) {
    Node& n = at(id);
    const Tensor& g = n.grad;
    switch (n.op) {
        case Op::kMatmul: {
            const Tensor& av = value(n.in0);
            const Tensor& bv = value(n.in1);
            if (Tensor* da = grad_buffer(n.in0))
                kernels::matmul_nt(g.ptr(), bv.ptr(), da->ptr(), av.rows(), bv.cols(), av.cols(), true);
            if (Tensor* db = grad_buffer(n.in1))
                kernels::matmul_tn(av.ptr(), g.ptr(), db->ptr(), av.cols(), av.rows(), bv.cols(), true);
            break;
        }
        case Op::kMatmulNT: {
            const Tensor& av = value(n.in0);
            const Tensor& bv = value(n.in1);
            if (Tensor* da = grad_buffer(n.in0))
                kernels::matmul_nn(g.ptr(), bv.ptr(), da->ptr(), av.rows(), bv.rows(), av.cols(), true);
            if (Tensor* db = grad_buffer(n.in1))
                kernels::matmul_tn(g.ptr(), av.ptr(), db->ptr(), bv.rows(), av.rows(), av.cols(), true);
            break;
        }
        case Op::kAdd: {
            if (Tensor* da = grad_buffer(n.in0)) kernels::axpy(1.0f, g.ptr(), da->ptr(), g.numel());
            if (Tensor* db = grad_buffer(n.in1)) kernels::axpy(1.0f, g.ptr(), db->ptr(), g.numel());
            break;
        }
        case Op::kAddBias: {
            if (Tensor* dx = grad_buffer(n.in0)) kernels::axpy(1.0f, g.ptr(), dx->ptr(), g.numel());
            if (Tensor* db = grad_buffer(n.in1)) kernels::colsum(g.ptr(), db->ptr(), g.rows(), g.cols(), true);
            break;
        }
        case Op::kGelu: {
            if (Tensor* dx = grad_buffer(n.in0))
                kernels::gelu_backward(value(n.in0).ptr(), g.ptr(), dx->ptr(), g.numel());
            break;
        }
        case Op::kSoftmaxRows: {
            if (Tensor* dx = grad_buffer(n.in0))
                kernels::softmax_rows_backward(n.value.ptr(), g.ptr(), dx->ptr(), g.rows(), g.cols());
            break;
        }
        case Op::kLayerNorm: {
            const Tensor& xv = value(n.in0);
            const int rows = xv.rows();
            const int cols = xv.cols();
            const float* mean = n.stats.data();
            const float* inv_std = n.stats.data() + rows;
            if (Tensor* dx = grad_buffer(n.in0))
                kernels::layer_norm_backward_input(xv.ptr(), value(n.in1).ptr(), mean, inv_std, g.ptr(),
                                                   dx->ptr(), rows, cols);
            Tensor* dscale = grad_buffer(n.in1);
            Tensor* dbias = grad_buffer(n.in2);
            if (dscale != nullptr || dbias != nullptr) {
                Tensor ds = Tensor::zeros({cols});
                Tensor db = Tensor::zeros({cols});
                kernels::layer_norm_backward_params(xv.ptr(), mean, inv_std, g.ptr(), ds.ptr(), db.ptr(),
                                                    rows, cols);
                if (dscale != nullptr) kernels::axpy(1.0f, ds.ptr(), dscale->ptr(), cols);
                if (dbias != nullptr) kernels::axpy(1.0f, db.ptr(), dbias->ptr(), cols);
            }
            break;
        }
        case Op::kGatherRows: {
            if (Tensor* dt = grad_buffer(n.in0))
                kernels::scatter_add_rows(g.ptr(), n.ids.data(), dt->ptr(), static_cast<int>(n.ids.size()),
                                          g.cols());
            break;
        }
        case Op::kAttention: {
            const Tensor& qv = value(n.in0);
            const int width = qv.cols();
            Tensor* dq = grad_buffer(n.in0);
            Tensor* dk = grad_buffer(n.in1);
            Tensor* dv = grad_buffer(n.in2);
            // The kernel writes all three; route unneeded ones to scratch.
            Tensor scratch;
            if (dq == nullptr || dk == nullptr || dv == nullptr) scratch = Tensor::zeros(qv.shape);
            kernels::attention_backward(qv.ptr(), value(n.in1).ptr(), value(n.in2).ptr(), n.probs.ptr(),
                                        g.ptr(), dq != nullptr ? dq->ptr() : scratch.ptr(),
                                        dk != nullptr ? dk->ptr() : scratch.ptr(),
                                        dv != nullptr ? dv->ptr() : scratch.ptr(), n.batch, n.seq, n.heads,
                                        width / n.heads);
            break;
        }
        case Op::kCrossEntropyMasked: {
            Tensor* dl = grad_buffer(n.in0);
            if (dl == nullptr) break;
            const Tensor& lv = value(n.in0);
            const int cols = lv.cols();
            const float gscale = g.data[0] / static_cast<float>(n.mask_count);
            std::vector<double> logp(static_cast<std::size_t>(cols));
            for (int r = 0; r < lv.rows(); ++r) {
                if (n.mask[static_cast<std::size_t>(r)] == 0) continue;
                log_softmax_row(lv.ptr() + static_cast<std::int64_t>(r) * cols, logp.data(), cols, 1.0);
                float* drow = dl->ptr() + static_cast<std::int64_t>(r) * cols;
                for (int c = 0; c < cols; ++c)
                    drow[c] += gscale * static_cast<float>(std::exp(logp[static_cast<std::size_t>(c)]));
                drow[n.ids[static_cast<std::size_t>(r)]] -= gscale;
            }
            break;
        }
        case Op::kMseMasked: {
            Tensor* ds = grad_buffer(n.in0);
            Tensor* dt = grad_buffer(n.in1);
            if (ds == nullptr && dt == nullptr) break;
            const Tensor& sv = value(n.in0);
            const Tensor& tv = value(n.in1);
            const int cols = sv.cols();
            const float gscale = 2.0f * g.data[0] / (static_cast<float>(n.mask_count) * cols);
            for (int r = 0; r < sv.rows(); ++r) {
                if (n.mask[static_cast<std::size_t>(r)] == 0) continue;
                const std::int64_t off = static_cast<std::int64_t>(r) * cols;
                for (int c = 0; c < cols; ++c) {
                    const float d = gscale * (sv.data[off + c] - tv.data[off + c]);
                    if (ds != nullptr) ds->data[off + c] += d;
                    if (dt != nullptr) dt->data[off + c] -= d;
                }
            }
            break;
        }
        case Op::kKlMasked: {
            Tensor* ds = grad_buffer(n.in0);
            Tensor* dt = grad_buffer(n.in1);
            if (ds == nullptr && dt == nullptr) break;
            const Tensor& sv = value(n.in0);
            const Tensor& tv = value(n.in1);
            const int cols = sv.cols();
            const double tau = n.wa;
            const float gscale = g.data[0] * n.wa / static_cast<float>(n.mask_count);
            std::vector<double> ls(static_cast<std::size_t>(cols));
            std::vector<double> lt(static_cast<std::size_t>(cols));
            for (int r = 0; r < sv.rows(); ++r) {
                if (n.mask[static_cast<std::size_t>(r)] == 0) continue;
                const std::int64_t off = static_cast<std::int64_t>(r) * cols;
                log_softmax_row(sv.ptr() + off, ls.data(), cols, tau);
                log_softmax_row(tv.ptr() + off, lt.data(), cols, tau);
                double kl = 0.0;
                for (int c = 0; c < cols; ++c)
                    kl += std::exp(lt[static_cast<std::size_t>(c)]) *
                          (lt[static_cast<std::size_t>(c)] - ls[static_cast<std::size_t>(c)]);
                for (int c = 0; c < cols; ++c) {
                    const double pt = std::exp(lt[static_cast<std::size_t>(c)]);
                    const double ps = std::exp(ls[static_cast<std::size_t>(c)]);
                    if (ds != nullptr) ds->data[off + c] += gscale * static_cast<float>(ps - pt);
                    if (dt != nullptr)
                        dt->data[off + c] += gscale * static_cast<float>(pt * (lt[static_cast<std::size_t>(c)] -
                                                                               ls[static_cast<std::size_t>(c)] - kl));
                }
            }
            break;
        }
        case Op::kScalarMix: {
            if (Tensor* da = grad_buffer(n.in0)) da->data[0] += n.wa * g.data[0];
            if (Tensor* db = grad_buffer(n.in1)) db->data[0] += n.wb * g.data[0];
            break;
        }
        case Op::kParam:
        case Op::kConstant:
        case Op::kInput:
            break;
    }
}

}  // namespace shrinkpipe
