// SPDX-License-Identifier: Apache-2.0
//
// Kernel implementations. Each public kernel delegates its per-row (or
// per-column, per-element, per-(batch,head)) body to a shared worker; the
// OpenMP entry points distribute workers over threads, the ref:: ones run
// them in a plain loop. Because a worker owns all writes to its slice and
// performs reductions in a fixed serial order, the two variants agree
// bit-for-bit.

#include "shrinkpipe/kernels.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#include "shrinkpipe/threads.hpp"

namespace shrinkpipe::kernels {

namespace {

constexpr float kGeluCoef = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluCubic = 0.044715f;
constexpr float kMaskedScore = -1e30f;

// Work-size floor below which spawning a thread team costs more than it saves.
constexpr std::int64_t kParallelGrain = 16 * 1024;

inline void matmul_nn_row(const float* a, const float* b, float* c, int i, int k, int n, bool acc) {
    float* crow = c + static_cast<std::int64_t>(i) * n;
    if (!acc) {
        for (int j = 0; j < n; ++j) crow[j] = 0.0f;
    }
    const float* arow = a + static_cast<std::int64_t>(i) * k;
    for (int l = 0; l < k; ++l) {
        const float av = arow[l];
        const float* brow = b + static_cast<std::int64_t>(l) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

inline void matmul_nt_row(const float* a, const float* b, float* c, int i, int k, int n, bool acc) {
    const float* arow = a + static_cast<std::int64_t>(i) * k;
    float* crow = c + static_cast<std::int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
        const float* brow = b + static_cast<std::int64_t>(j) * k;
        float sum = 0.0f;
        for (int l = 0; l < k; ++l) sum += arow[l] * brow[l];
        crow[j] = acc ? crow[j] + sum : sum;
    }
}

inline void matmul_tn_row(const float* a, const float* b, float* c, int i, int k, int m, int n, bool acc) {
    float* crow = c + static_cast<std::int64_t>(i) * n;
    if (!acc) {
        for (int j = 0; j < n; ++j) crow[j] = 0.0f;
    }
    for (int l = 0; l < k; ++l) {
        const float av = a[static_cast<std::int64_t>(l) * m + i];
        const float* brow = b + static_cast<std::int64_t>(l) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

inline float gelu_value(float x) {
    const float u = kGeluCoef * (x + kGeluCubic * x * x * x);
    return 0.5f * x * (1.0f + std::tanh(u));
}

inline float gelu_derivative(float x) {
    const float u = kGeluCoef * (x + kGeluCubic * x * x * x);
    const float t = std::tanh(u);
    const float du = kGeluCoef * (1.0f + 3.0f * kGeluCubic * x * x);
    return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
}

inline void softmax_row(const float* x, float* y, int cols) {
    float maxv = x[0];
    for (int c = 1; c < cols; ++c) maxv = x[c] > maxv ? x[c] : maxv;
    float sum = 0.0f;
    for (int c = 0; c < cols; ++c) {
        y[c] = std::exp(x[c] - maxv);
        sum += y[c];
    }
    const float inv = 1.0f / sum;
    for (int c = 0; c < cols; ++c) y[c] *= inv;
}

inline void softmax_backward_row(const float* y, const float* dy, float* dx, int cols) {
    float dot = 0.0f;
    for (int c = 0; c < cols; ++c) dot += dy[c] * y[c];
    for (int c = 0; c < cols; ++c) dx[c] += y[c] * (dy[c] - dot);
}

inline void layer_norm_stats_row(const float* x, int cols, float eps, float* mean, float* inv_std) {
    float sum = 0.0f;
    for (int c = 0; c < cols; ++c) sum += x[c];
    const float mu = sum / static_cast<float>(cols);
    float sq = 0.0f;
    for (int c = 0; c < cols; ++c) {
        const float d = x[c] - mu;
        sq += d * d;
    }
    const float var = sq / static_cast<float>(cols);
    *mean = mu;
    *inv_std = 1.0f / std::sqrt(var + eps);
}

inline void layer_norm_backward_input_row(const float* x, const float* scale, float mean, float inv_std,
                                          const float* dy, float* dx, int cols) {
    float sum_g = 0.0f;
    float sum_gx = 0.0f;
    for (int c = 0; c < cols; ++c) {
        const float g = dy[c] * scale[c];
        const float xh = (x[c] - mean) * inv_std;
        sum_g += g;
        sum_gx += g * xh;
    }
    const float invc = 1.0f / static_cast<float>(cols);
    for (int c = 0; c < cols; ++c) {
        const float g = dy[c] * scale[c];
        const float xh = (x[c] - mean) * inv_std;
        dx[c] += inv_std * (g - sum_g * invc - xh * sum_gx * invc);
    }
}

// Attention workers operate on one (batch, head) pair; q/k/v/out rows are
// seq vectors of width heads*head_dim with this head at column offset h*d.
struct HeadSlice {
    const float* q;
    const float* k;
    const float* v;
    int stride;  // heads * head_dim
    int d;
};

inline void attention_forward_head(const HeadSlice& s, const std::uint8_t* valid, float* out, float* probs,
                                   int seq, float inv_sqrt_d) {
    for (int i = 0; i < seq; ++i) {
        float* prow = probs + static_cast<std::int64_t>(i) * seq;
        const float* qi = s.q + static_cast<std::int64_t>(i) * s.stride;
        for (int j = 0; j < seq; ++j) {
            if (valid != nullptr && valid[j] == 0) {
                prow[j] = kMaskedScore;
                continue;
            }
            const float* kj = s.k + static_cast<std::int64_t>(j) * s.stride;
            float dot = 0.0f;
            for (int c = 0; c < s.d; ++c) dot += qi[c] * kj[c];
            prow[j] = dot * inv_sqrt_d;
        }
        softmax_row(prow, prow, seq);
        float* orow = out + static_cast<std::int64_t>(i) * s.stride;
        for (int c = 0; c < s.d; ++c) orow[c] = 0.0f;
        for (int j = 0; j < seq; ++j) {
            const float p = prow[j];
            const float* vj = s.v + static_cast<std::int64_t>(j) * s.stride;
            for (int c = 0; c < s.d; ++c) orow[c] += p * vj[c];
        }
    }
}

inline void attention_backward_head(const HeadSlice& s, const float* probs, const float* dout,
                                    float* dq, float* dk, float* dv, int seq, float inv_sqrt_d,
                                    float* dp_row) {
    for (int i = 0; i < seq; ++i) {
        const float* prow = probs + static_cast<std::int64_t>(i) * seq;
        const float* gout = dout + static_cast<std::int64_t>(i) * s.stride;
        // dV[j] += P[i][j] * dout[i]; dP[i][j] = dout[i] . v[j]
        for (int j = 0; j < seq; ++j) {
            const float p = prow[j];
            float* dvj = dv + static_cast<std::int64_t>(j) * s.stride;
            const float* vj = s.v + static_cast<std::int64_t>(j) * s.stride;
            float dot = 0.0f;
            for (int c = 0; c < s.d; ++c) {
                dvj[c] += p * gout[c];
                dot += gout[c] * vj[c];
            }
            dp_row[j] = dot;
        }
        // softmax backward within the row, then the 1/sqrt(d) score scale
        float mix = 0.0f;
        for (int j = 0; j < seq; ++j) mix += dp_row[j] * prow[j];
        const float* qi = s.q + static_cast<std::int64_t>(i) * s.stride;
        float* dqi = dq + static_cast<std::int64_t>(i) * s.stride;
        for (int j = 0; j < seq; ++j) {
            const float ds = prow[j] * (dp_row[j] - mix) * inv_sqrt_d;
            const float* kj = s.k + static_cast<std::int64_t>(j) * s.stride;
            float* dkj = dk + static_cast<std::int64_t>(j) * s.stride;
            for (int c = 0; c < s.d; ++c) {
                dqi[c] += ds * kj[c];
                dkj[c] += ds * qi[c];
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// OpenMP entry points
// ---------------------------------------------------------------------------

void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
    const std::int64_t work = static_cast<std::int64_t>(m) * k * n;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n, acc);
}

void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
    const std::int64_t work = static_cast<std::int64_t>(m) * k * n;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, k, n, acc);
}

void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
    const std::int64_t work = static_cast<std::int64_t>(m) * k * n;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int i = 0; i < m; ++i) matmul_tn_row(a, b, c, i, k, m, n, acc);
}

void add(const float* a, const float* b, float* y, std::int64_t n) {
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (n >= kParallelGrain)
    for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void axpy(float alpha, const float* x, float* y, std::int64_t n) {
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (n >= kParallelGrain)
    for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add_rows_bias(const float* x, const float* bias, float* y, int rows, int cols) {
    const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int r = 0; r < rows; ++r) {
        const float* xr = x + static_cast<std::int64_t>(r) * cols;
        float* yr = y + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) yr[c] = xr[c] + bias[c];
    }
}

void colsum(const float* x, float* out, int rows, int cols, bool acc) {
    const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int c = 0; c < cols; ++c) {
        float sum = 0.0f;
        for (int r = 0; r < rows; ++r) sum += x[static_cast<std::int64_t>(r) * cols + c];
        out[c] = acc ? out[c] + sum : sum;
    }
}

void gelu_forward(const float* x, float* y, std::int64_t n) {
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (n >= kParallelGrain)
    for (std::int64_t i = 0; i < n; ++i) y[i] = gelu_value(x[i]);
}

void gelu_backward(const float* x, const float* dy, float* dx, std::int64_t n) {
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (n >= kParallelGrain)
    for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i] * gelu_derivative(x[i]);
}

void softmax_rows(const float* x, float* y, int rows, int cols) {
    const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int r = 0; r < rows; ++r)
        softmax_row(x + static_cast<std::int64_t>(r) * cols, y + static_cast<std::int64_t>(r) * cols, cols);
}

void softmax_rows_backward(const float* y, const float* dy, float* dx, int rows, int cols) {
    const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int r = 0; r < rows; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * cols;
        softmax_backward_row(y + off, dy + off, dx + off, cols);
    }
}

void layer_norm_stats(const float* x, int rows, int cols, float eps, float* mean, float* inv_std) {
    const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int r = 0; r < rows; ++r)
        layer_norm_stats_row(x + static_cast<std::int64_t>(r) * cols, cols, eps, mean + r, inv_std + r);
}

void layer_norm_forward(const float* x, const float* scale, const float* bias, const float* mean,
                        const float* inv_std, float* y, int rows, int cols) {
    const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int r = 0; r < rows; ++r) {
        const float* xr = x + static_cast<std::int64_t>(r) * cols;
        float* yr = y + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) yr[c] = (xr[c] - mean[r]) * inv_std[r] * scale[c] + bias[c];
    }
}

void layer_norm_backward_input(const float* x, const float* scale, const float* mean, const float* inv_std,
                               const float* dy, float* dx, int rows, int cols) {
    const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int r = 0; r < rows; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * cols;
        layer_norm_backward_input_row(x + off, scale, mean[r], inv_std[r], dy + off, dx + off, cols);
    }
}

void layer_norm_backward_params(const float* x, const float* mean, const float* inv_std, const float* dy,
                                float* dscale, float* dbias, int rows, int cols) {
    const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int c = 0; c < cols; ++c) {
        float sum_scale = 0.0f;
        float sum_bias = 0.0f;
        for (int r = 0; r < rows; ++r) {
            const std::int64_t off = static_cast<std::int64_t>(r) * cols + c;
            sum_scale += dy[off] * (x[off] - mean[r]) * inv_std[r];
            sum_bias += dy[off];
        }
        dscale[c] += sum_scale;
        dbias[c] += sum_bias;
    }
}

void gather_rows(const float* table, const int* ids, float* out, int rows, int cols) {
    const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int r = 0; r < rows; ++r) {
        const float* src = table + static_cast<std::int64_t>(ids[r]) * cols;
        float* dst = out + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) dst[c] = src[c];
    }
}

void scatter_add_rows(const float* dout, const int* ids, float* dtable, int rows, int cols) {
    // Parallel over columns: duplicate ids collide on rows, never on columns,
    // and each column accumulates its rows in the same order as serial.
    const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r)
            dtable[static_cast<std::int64_t>(ids[r]) * cols + c] += dout[static_cast<std::int64_t>(r) * cols + c];
    }
}

void attention_forward(const float* q, const float* k, const float* v, const std::uint8_t* valid,
                       float* out, float* probs, int batch, int seq, int heads, int head_dim) {
    const int stride = heads * head_dim;
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(head_dim));
    const int pairs = batch * heads;
    const std::int64_t work = static_cast<std::int64_t>(pairs) * seq * seq * head_dim;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int p = 0; p < pairs; ++p) {
        const int b = p / heads;
        const int h = p % heads;
        const std::int64_t base = static_cast<std::int64_t>(b) * seq * stride + h * head_dim;
        const HeadSlice slice{q + base, k + base, v + base, stride, head_dim};
        attention_forward_head(slice, valid == nullptr ? nullptr : valid + static_cast<std::int64_t>(b) * seq,
                               out + base, probs + static_cast<std::int64_t>(p) * seq * seq, seq, inv_sqrt_d);
    }
}

void attention_backward(const float* q, const float* k, const float* v, const float* probs,
                        const float* dout, float* dq, float* dk, float* dv,
                        int batch, int seq, int heads, int head_dim) {
    const int stride = heads * head_dim;
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(head_dim));
    const int pairs = batch * heads;
    const std::int64_t work = static_cast<std::int64_t>(pairs) * seq * seq * head_dim;
#pragma omp parallel for schedule(static) num_threads(threads::count()) if (work >= kParallelGrain)
    for (int p = 0; p < pairs; ++p) {
        const int b = p / heads;
        const int h = p % heads;
        const std::int64_t base = static_cast<std::int64_t>(b) * seq * stride + h * head_dim;
        const HeadSlice slice{q + base, k + base, v + base, stride, head_dim};
        std::vector<float> dp_row(static_cast<std::size_t>(seq));
        attention_backward_head(slice, probs + static_cast<std::int64_t>(p) * seq * seq,
                                dout + base, dq + base, dk + base, dv + base, seq, inv_sqrt_d, dp_row.data());
    }
}

// ---------------------------------------------------------------------------
// Serial reference implementations
// ---------------------------------------------------------------------------

namespace ref {

void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n, acc);
}

void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, k, n, acc);
}

void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i) matmul_tn_row(a, b, c, i, k, m, n, acc);
}

void add(const float* a, const float* b, float* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void axpy(float alpha, const float* x, float* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add_rows_bias(const float* x, const float* bias, float* y, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const float* xr = x + static_cast<std::int64_t>(r) * cols;
        float* yr = y + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) yr[c] = xr[c] + bias[c];
    }
}

void colsum(const float* x, float* out, int rows, int cols, bool acc) {
    for (int c = 0; c < cols; ++c) {
        float sum = 0.0f;
        for (int r = 0; r < rows; ++r) sum += x[static_cast<std::int64_t>(r) * cols + c];
        out[c] = acc ? out[c] + sum : sum;
    }
}

void gelu_forward(const float* x, float* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = gelu_value(x[i]);
}

void gelu_backward(const float* x, const float* dy, float* dx, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i] * gelu_derivative(x[i]);
}

void softmax_rows(const float* x, float* y, int rows, int cols) {
    for (int r = 0; r < rows; ++r)
        softmax_row(x + static_cast<std::int64_t>(r) * cols, y + static_cast<std::int64_t>(r) * cols, cols);
}

void softmax_rows_backward(const float* y, const float* dy, float* dx, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * cols;
        softmax_backward_row(y + off, dy + off, dx + off, cols);
    }
}

void layer_norm_stats(const float* x, int rows, int cols, float eps, float* mean, float* inv_std) {
    for (int r = 0; r < rows; ++r)
        layer_norm_stats_row(x + static_cast<std::int64_t>(r) * cols, cols, eps, mean + r, inv_std + r);
}

void layer_norm_forward(const float* x, const float* scale, const float* bias, const float* mean,
                        const float* inv_std, float* y, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const float* xr = x + static_cast<std::int64_t>(r) * cols;
        float* yr = y + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) yr[c] = (xr[c] - mean[r]) * inv_std[r] * scale[c] + bias[c];
    }
}

void layer_norm_backward_input(const float* x, const float* scale, const float* mean, const float* inv_std,
                               const float* dy, float* dx, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * cols;
        layer_norm_backward_input_row(x + off, scale, mean[r], inv_std[r], dy + off, dx + off, cols);
    }
}

void layer_norm_backward_params(const float* x, const float* mean, const float* inv_std, const float* dy,
                                float* dscale, float* dbias, int rows, int cols) {
    for (int c = 0; c < cols; ++c) {
        float sum_scale = 0.0f;
        float sum_bias = 0.0f;
        for (int r = 0; r < rows; ++r) {
            const std::int64_t off = static_cast<std::int64_t>(r) * cols + c;
            sum_scale += dy[off] * (x[off] - mean[r]) * inv_std[r];
            sum_bias += dy[off];
        }
        dscale[c] += sum_scale;
        dbias[c] += sum_bias;
    }
}

void gather_rows(const float* table, const int* ids, float* out, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const float* src = table + static_cast<std::int64_t>(ids[r]) * cols;
        float* dst = out + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) dst[c] = src[c];
    }
}

void scatter_add_rows(const float* dout, const int* ids, float* dtable, int rows, int cols) {
    for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r)
            dtable[static_cast<std::int64_t>(ids[r]) * cols + c] += dout[static_cast<std::int64_t>(r) * cols + c];
    }
}

void attention_forward(const float* q, const float* k, const float* v, const std::uint8_t* valid,
                       float* out, float* probs, int batch, int seq, int heads, int head_dim) {
    const int stride = heads * head_dim;
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(head_dim));
    for (int p = 0; p < batch * heads; ++p) {
        const int b = p / heads;
        const int h = p % heads;
        const std::int64_t base = static_cast<std::int64_t>(b) * seq * stride + h * head_dim;
        const HeadSlice slice{q + base, k + base, v + base, stride, head_dim};
        attention_forward_head(slice, valid == nullptr ? nullptr : valid + static_cast<std::int64_t>(b) * seq,
                               out + base, probs + static_cast<std::int64_t>(p) * seq * seq, seq, inv_sqrt_d);
    }
}

void attention_backward(const float* q, const float* k, const float* v, const float* probs,
                        const float* dout, float* dq, float* dk, float* dv,
                        int batch, int seq, int heads, int head_dim) {
    const int stride = heads * head_dim;
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(head_dim));
    std::vector<float> dp_row(static_cast<std::size_t>(seq));
    for (int p = 0; p < batch * heads; ++p) {
        const int b = p / heads;
        const int h = p % heads;
        const std::int64_t base = static_cast<std::int64_t>(b) * seq * stride + h * head_dim;
        const HeadSlice slice{q + base, k + base, v + base, stride, head_dim};
        attention_backward_head(slice, probs + static_cast<std::int64_t>(p) * seq * seq,
                                dout + base, dq + base, dk + base, dv + base, seq, inv_sqrt_d, dp_row.data());
    }
}

}  // namespace ref

}  // namespace shrinkpipe::kernels
