// SPDX-License-Identifier: Apache-2.0
//
// Serial-vs-OpenMP kernel benchmark. Each case runs the reference kernel
// and the parallel kernel on identical inputs, reports wall time, parallel
// GFLOP/s, speedup, and whether the outputs are bit-identical.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "shrinkpipe/kernels.hpp"
#include "shrinkpipe/rng.hpp"
#include "shrinkpipe/tensor.hpp"
#include "shrinkpipe/threads.hpp"

namespace {

using shrinkpipe::Rng;
namespace kernels = shrinkpipe::kernels;

std::vector<float> random_vec(std::int64_t n, Rng& rng) {
    std::vector<float> v(static_cast<std::size_t>(n));
    for (float& x : v) x = static_cast<float>(rng.gaussian()) * 0.5f;
    return v;
}

double best_seconds(const std::function<void()>& fn, int repeats) {
    double best = 1e30;
    for (int i = 0; i < repeats; ++i) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        const auto stop = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(stop - start).count());
    }
    return best;
}

struct Case {
    std::string name;
    double flops = 0.0;
    std::function<void()> serial;
    std::function<void()> parallel;
    std::function<bool()> identical;
};

void report(const Case& c, int repeats) {
    const double ts = best_seconds(c.serial, repeats);
    const double tp = best_seconds(c.parallel, repeats);
    const bool same = c.identical();
    std::printf("%-22s %10.3f ms %10.3f ms %8.2fx %10.2f GFLOP/s   %s\n", c.name.c_str(), ts * 1e3,
                tp * 1e3, ts / tp, c.flops / tp / 1e9, same ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
    Rng rng(42);
    const int repeats = 5;
    std::printf("threads: %d\n", shrinkpipe::threads::count());
    std::printf("%-22s %13s %13s %9s %18s\n", "kernel", "serial", "parallel", "speedup", "throughput");

    {
        const int m = 384, k = 384, n = 384;
        const auto a = random_vec(static_cast<std::int64_t>(m) * k, rng);
        const auto b = random_vec(static_cast<std::int64_t>(k) * n, rng);
        auto cs = std::vector<float>(static_cast<std::size_t>(m) * n);
        auto cp = cs;
        Case c{"matmul_nn 384^3",
               2.0 * m * k * n,
               [&] { kernels::ref::matmul_nn(a.data(), b.data(), cs.data(), m, k, n, false); },
               [&] { kernels::matmul_nn(a.data(), b.data(), cp.data(), m, k, n, false); },
               [&] { return std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(float)) == 0; }};
        report(c, repeats);
    }

    {
        const std::int64_t n = 1 << 22;
        const auto x = random_vec(n, rng);
        auto ys = std::vector<float>(static_cast<std::size_t>(n));
        auto yp = ys;
        Case c{"gelu_forward 4M",
               10.0 * static_cast<double>(n),
               [&] { kernels::ref::gelu_forward(x.data(), ys.data(), n); },
               [&] { kernels::gelu_forward(x.data(), yp.data(), n); },
               [&] { return std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(float)) == 0; }};
        report(c, repeats);
    }

    {
        const int rows = 4096, cols = 512;
        const auto x = random_vec(static_cast<std::int64_t>(rows) * cols, rng);
        auto ys = std::vector<float>(x.size());
        auto yp = ys;
        Case c{"softmax_rows 4096x512",
               5.0 * rows * static_cast<double>(cols),
               [&] { kernels::ref::softmax_rows(x.data(), ys.data(), rows, cols); },
               [&] { kernels::softmax_rows(x.data(), yp.data(), rows, cols); },
               [&] { return std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(float)) == 0; }};
        report(c, repeats);
    }

    {
        const int rows = 4096, cols = 512;
        const auto x = random_vec(static_cast<std::int64_t>(rows) * cols, rng);
        const auto scale = random_vec(cols, rng);
        const auto bias = random_vec(cols, rng);
        std::vector<float> mean_s(rows), inv_s(rows), mean_p(rows), inv_p(rows);
        auto ys = std::vector<float>(x.size());
        auto yp = ys;
        Case c{"layer_norm 4096x512",
               8.0 * rows * static_cast<double>(cols),
               [&] {
                   kernels::ref::layer_norm_stats(x.data(), rows, cols, 1e-5f, mean_s.data(), inv_s.data());
                   kernels::ref::layer_norm_forward(x.data(), scale.data(), bias.data(), mean_s.data(),
                                                    inv_s.data(), ys.data(), rows, cols);
               },
               [&] {
                   kernels::layer_norm_stats(x.data(), rows, cols, 1e-5f, mean_p.data(), inv_p.data());
                   kernels::layer_norm_forward(x.data(), scale.data(), bias.data(), mean_p.data(),
                                               inv_p.data(), yp.data(), rows, cols);
               },
               [&] { return std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(float)) == 0; }};
        report(c, repeats);
    }

    {
        const int batch = 8, seq = 128, heads = 8, d = 32;
        const std::int64_t width = static_cast<std::int64_t>(heads) * d;
        const auto q = random_vec(batch * seq * width, rng);
        const auto k = random_vec(batch * seq * width, rng);
        const auto v = random_vec(batch * seq * width, rng);
        auto outs = std::vector<float>(q.size());
        auto outp = outs;
        std::vector<float> probs_s(static_cast<std::size_t>(batch) * heads * seq * seq);
        auto probs_p = probs_s;
        const double flops = 4.0 * batch * heads * static_cast<double>(seq) * seq * d;
        Case c{"attention 8x128x8x32",
               flops,
               [&] {
                   kernels::ref::attention_forward(q.data(), k.data(), v.data(), nullptr, outs.data(),
                                                   probs_s.data(), batch, seq, heads, d);
               },
               [&] {
                   kernels::attention_forward(q.data(), k.data(), v.data(), nullptr, outp.data(),
                                              probs_p.data(), batch, seq, heads, d);
               },
               [&] { return std::memcmp(outs.data(), outp.data(), outs.size() * sizeof(float)) == 0; }};
        report(c, repeats);
    }

    return 0;
}
