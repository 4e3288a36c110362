// SPDX-License-Identifier: Apache-2.0
//
// Dense compute kernels behind the autodiff graph. Every kernel exists twice:
// the default entry points parallelize with OpenMP over disjoint output
// slices, and kernels::ref holds the serial reference implementations used
// by the tests and the benchmark. Per-element arithmetic order is shared
// between the two, so parallel output is bit-identical to serial for any
// thread count.

#pragma once

#include <cstdint>

namespace shrinkpipe::kernels {

// C(m x n) = A(m x k) * B(k x n); accumulates into C when acc.
void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
// C(m x n) = A(m x k) * B(n x k)^T
void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
// C(m x n) = A(k x m)^T * B(k x n)
void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc);

void add(const float* a, const float* b, float* y, std::int64_t n);
void axpy(float alpha, const float* x, float* y, std::int64_t n);  // y += alpha * x

// y = x + bias, bias broadcast over rows.
void add_rows_bias(const float* x, const float* bias, float* y, int rows, int cols);
// out[c] (+)= sum over rows of x[r, c]
void colsum(const float* x, float* out, int rows, int cols, bool acc);

void gelu_forward(const float* x, float* y, std::int64_t n);
void gelu_backward(const float* x, const float* dy, float* dx, std::int64_t n);  // dx += dy * gelu'(x)

void softmax_rows(const float* x, float* y, int rows, int cols);
// dx += y * (dy - sum(dy * y)) per row, y = softmax output
void softmax_rows_backward(const float* y, const float* dy, float* dx, int rows, int cols);

void layer_norm_stats(const float* x, int rows, int cols, float eps, float* mean, float* inv_std);
void layer_norm_forward(const float* x, const float* scale, const float* bias, const float* mean,
                        const float* inv_std, float* y, int rows, int cols);
void layer_norm_backward_input(const float* x, const float* scale, const float* mean, const float* inv_std,
                               const float* dy, float* dx, int rows, int cols);
void layer_norm_backward_params(const float* x, const float* mean, const float* inv_std, const float* dy,
                                float* dscale, float* dbias, int rows, int cols);

// out[r, :] = table[ids[r], :]
void gather_rows(const float* table, const int* ids, float* out, int rows, int cols);
// dtable[ids[r], :] += dout[r, :]; parallel over columns, rows added in order
void scatter_add_rows(const float* dout, const int* ids, float* dtable, int rows, int cols);

// Multi-head self-attention on interleaved heads: q, k, v and out are
// (batch*seq, heads*head_dim); head h lives in columns [h*d, (h+1)*d).
// valid marks usable key positions (null = all valid); probs receives the
// post-softmax attention matrix, batch*heads*seq*seq, for the backward pass.
void attention_forward(const float* q, const float* k, const float* v, const std::uint8_t* valid,
                       float* out, float* probs, int batch, int seq, int heads, int head_dim);
void attention_backward(const float* q, const float* k, const float* v, const float* probs,
                        const float* dout, float* dq, float* dk, float* dv,
                        int batch, int seq, int heads, int head_dim);

namespace ref {

void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
void add(const float* a, const float* b, float* y, std::int64_t n);
void axpy(float alpha, const float* x, float* y, std::int64_t n);
void add_rows_bias(const float* x, const float* bias, float* y, int rows, int cols);
void colsum(const float* x, float* out, int rows, int cols, bool acc);
void gelu_forward(const float* x, float* y, std::int64_t n);
void gelu_backward(const float* x, const float* dy, float* dx, std::int64_t n);
void softmax_rows(const float* x, float* y, int rows, int cols);
void softmax_rows_backward(const float* y, const float* dy, float* dx, int rows, int cols);
void layer_norm_stats(const float* x, int rows, int cols, float eps, float* mean, float* inv_std);
void layer_norm_forward(const float* x, const float* scale, const float* bias, const float* mean,
                        const float* inv_std, float* y, int rows, int cols);
void layer_norm_backward_input(const float* x, const float* scale, const float* mean, const float* inv_std,
                               const float* dy, float* dx, int rows, int cols);
void layer_norm_backward_params(const float* x, const float* mean, const float* inv_std, const float* dy,
                                float* dscale, float* dbias, int rows, int cols);
void gather_rows(const float* table, const int* ids, float* out, int rows, int cols);
void scatter_add_rows(const float* dout, const int* ids, float* dtable, int rows, int cols);
void attention_forward(const float* q, const float* k, const float* v, const std::uint8_t* valid,
                       float* out, float* probs, int batch, int seq, int heads, int head_dim);
void attention_backward(const float* q, const float* k, const float* v, const float* probs,
                        const float* dout, float* dq, float* dk, float* dv,
                        int batch, int seq, int heads, int head_dim);

}  // namespace ref

}  // namespace shrinkpipe::kernels
