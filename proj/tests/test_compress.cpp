// SPDX-License-Identifier: Apache-2.0
//
// Compression transforms: gradient-importance FFN pruning (checked against
// a finite-difference saliency oracle), hidden truncation, the SVD
// projection, vocabulary trimming, and report building.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "reference.hpp"
#include "shrinkpipe/compress.hpp"
#include "shrinkpipe/distill.hpp"
#include "shrinkpipe/errors.hpp"
#include "test_util.hpp"

using namespace shrinkpipe;

namespace {

DistillPlan small_plan() {
    DistillPlan plan;
    plan.seq_len = 4;
    plan.batch_size = 2;
    plan.mask_rate = 0.4f;
    plan.seed = 9;
    return plan;
}

Corpus id_corpus(std::vector<std::vector<int>> docs) {
    Corpus c;
    c.docs = std::move(docs);
    return c;
}

}  // namespace

TEST_CASE("rank_neurons orders by importance with stable ties") {
    CHECK(rank_neurons({3.0, 1.0, 4.0, 2.0}) == std::vector<int>{2, 0, 3, 1});
    CHECK(rank_neurons({1.0, 1.0, 0.0}) == std::vector<int>{0, 1, 2});
    CHECK(rank_neurons({}).empty());
}

TEST_CASE("accumulate_importance shapes, zeros, and input validation") {
    EncoderModel model = EncoderModel::random_init(testutil::tiny_config(), 17);
    const Corpus corpus = id_corpus({{5, 6, 7, 8, 9, 10, 11, 5, 6, 7, 8, 9}});
    const DistillPlan plan = small_plan();

    SUBCASE("per-layer vectors sized to the ffn") {
        const NeuronImportance imp = accumulate_importance(model, corpus, 1, plan);
        REQUIRE(imp.per_layer.size() == 2);
        for (const auto& layer : imp.per_layer) {
            REQUIRE(layer.size() == 16);
            for (double v : layer) {
                CHECK(std::isfinite(v));
                CHECK(v >= 0.0);
            }
        }
    }

    SUBCASE("zero second ffn matrix gives exactly zero importance") {
        for (LayerWeights& layer : model.layers) layer.w2.zero();
        const NeuronImportance imp = accumulate_importance(model, corpus, 4, plan);
        for (const auto& layer : imp.per_layer)
            for (double v : layer) CHECK(v == 0.0);
    }

    SUBCASE("errors") {
        CHECK_THROWS_AS(accumulate_importance(model, corpus, 0, plan), ConfigError);
        CHECK_THROWS_AS(accumulate_importance(model, id_corpus({{5, 6}}), 1, plan), DataError);
        // One full row is short of a two-row batch.
        CHECK_THROWS_AS(accumulate_importance(model, id_corpus({{5, 6, 7, 8}}), 1, plan), DataError);
    }
}

TEST_CASE("importance matches a finite-difference saliency oracle") {
    // One layer, eight neurons: small enough to difference every activation.
    EncoderModel model = EncoderModel::random_init(testutil::tiny_config(1, 8, 2, 8), 31);
    const Corpus corpus = id_corpus({{5, 6, 7, 8, 9, 10, 11, 5}});
    const DistillPlan plan = small_plan();

    const NeuronImportance imp = accumulate_importance(model, corpus, 1, plan);
    REQUIRE(imp.per_layer.size() == 1);
    REQUIRE(imp.per_layer[0].size() == 8);

    // Replicate the masking stream of the first (only) batch.
    const std::vector<int> rows = pack_corpus(corpus, plan.seq_len);
    REQUIRE(rows.size() == 8);
    Rng mask_rng(derive_seed(plan.seed, "importance", 0));
    const MaskedBatch masked =
        apply_masking(rows, plan.batch_size, plan.seq_len, plan.mask_rate, model.config.vocab_size, mask_rng);
    int n_masked = 0;
    for (std::uint8_t m : masked.mask) n_masked += m;
    REQUIRE(n_masked > 0);

    // FD saliency: importance_j = sum over positions |dL/da_{pos,j}|.
    const double eps = 1e-3;
    std::vector<double> fd(8, 0.0);
    for (int j = 0; j < 8; ++j) {
        for (int pos = 0; pos < 8; ++pos) {
            testref::ActPerturb up{0, pos, j, eps};
            testref::ActPerturb down{0, pos, j, -eps};
            const double lp = testref::mlm_loss_value(model, masked, {}, &up);
            const double lm = testref::mlm_loss_value(model, masked, {}, &down);
            fd[static_cast<std::size_t>(j)] += std::abs((lp - lm) / (2.0 * eps));
        }
    }

    const double max_fd = *std::max_element(fd.begin(), fd.end());
    REQUIRE(max_fd > 0.0);
    for (int j = 0; j < 8; ++j) {
        const double diff = std::abs(imp.per_layer[0][static_cast<std::size_t>(j)] -
                                     fd[static_cast<std::size_t>(j)]);
        CHECK(diff <= 1e-3 * (max_fd + std::abs(fd[static_cast<std::size_t>(j)])));
    }

    // The selected top-half set must agree with the oracle's.
    const std::vector<int> lib_rank = rank_neurons(imp.per_layer[0]);
    const std::vector<int> fd_rank = rank_neurons(fd);
    const std::set<int> lib_top(lib_rank.begin(), lib_rank.begin() + 4);
    const std::set<int> fd_top(fd_rank.begin(), fd_rank.begin() + 4);
    CHECK(lib_top == fd_top);
}

TEST_CASE("prune_ffn keeps the ranked neurons and preserves behaviour at full width") {
    EncoderModel model = EncoderModel::random_init(testutil::tiny_config(), 23);
    const int F = model.config.ffn_size;

    NeuronImportance imp;
    imp.per_layer.resize(2);
    Rng rng(3);
    for (auto& layer : imp.per_layer) {
        layer.resize(static_cast<std::size_t>(F));
        for (double& v : layer) v = rng.uniform();
    }

    SUBCASE("full-width prune is a permutation: logits match within 1e-5") {
        EncoderModel pruned = prune_ffn(model, imp, F);
        CHECK(pruned.config.ffn_size == F);
        for (int trial = 0; trial < 20; ++trial) {
            const TokenBatch batch = testutil::random_batch(model.config, 2, 6, 100 + trial);
            const Tensor a = forward(model, batch);
            const Tensor b = forward(pruned, batch);
            REQUIRE(a.shape == b.shape);
            for (std::size_t i = 0; i < a.numel(); ++i)
                CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-5f);
        }
    }

    SUBCASE("pruned tensors are the gathered originals") {
        const int target = 5;
        EncoderModel pruned = prune_ffn(model, imp, target);
        CHECK(pruned.config.ffn_size == target);
        CHECK(pruned.actual_param_count() == param_count(pruned.config));
        for (int l = 0; l < 2; ++l) {
            const std::vector<int> order = rank_neurons(imp.per_layer[static_cast<std::size_t>(l)]);
            const LayerWeights& src = model.layers[static_cast<std::size_t>(l)];
            const LayerWeights& dst = pruned.layers[static_cast<std::size_t>(l)];
            REQUIRE(dst.w1.shape == std::vector<int>{8, target});
            REQUIRE(dst.b1.shape == std::vector<int>{target});
            REQUIRE(dst.w2.shape == std::vector<int>{target, 8});
            for (int j = 0; j < target; ++j) {
                const int keep = order[static_cast<std::size_t>(j)];
                CHECK(dst.b1.data[static_cast<std::size_t>(j)] ==
                      src.b1.data[static_cast<std::size_t>(keep)]);
                for (int r = 0; r < 8; ++r)
                    CHECK(dst.w1.at(r, j) == src.w1.data[static_cast<std::size_t>(r) * F + keep]);
                for (int c = 0; c < 8; ++c)
                    CHECK(dst.w2.at(j, c) == src.w2.data[static_cast<std::size_t>(keep) * 8 + c]);
            }
            // Attention weights ride along unchanged.
            CHECK(testutil::bit_equal(dst.wq, src.wq));
            CHECK(testutil::bit_equal(dst.attn_norm_scale, src.attn_norm_scale));
        }
        CHECK(testutil::bit_equal(pruned.tok_emb, model.tok_emb));
    }

    SUBCASE("errors") {
        CHECK_THROWS_AS(prune_ffn(model, imp, 0), ConfigError);
        CHECK_THROWS_AS(prune_ffn(model, imp, F + 1), ConfigError);
        NeuronImportance short_layers = imp;
        short_layers.per_layer.pop_back();
        CHECK_THROWS_AS(prune_ffn(model, short_layers, 4), ShapeError);
        NeuronImportance short_neurons = imp;
        short_neurons.per_layer[0].pop_back();
        CHECK_THROWS_AS(prune_ffn(model, short_neurons, 4), ShapeError);
    }
}

TEST_CASE("truncate_hidden slices every hidden axis") {
    EncoderModel model = EncoderModel::random_init(testutil::tiny_config(), 29);

    SUBCASE("k equal to the hidden size is the identity") {
        EncoderModel same = truncate_hidden(model, 8);
        CHECK(testutil::models_bit_equal(same, model));
    }

    SUBCASE("k=4 produces the first-k slices") {
        EncoderModel small = truncate_hidden(model, 4);
        CHECK(small.config.hidden_size == 4);
        CHECK(small.config.num_heads == 2);
        CHECK(small.actual_param_count() == param_count(small.config));
        REQUIRE(small.tok_emb.shape == std::vector<int>{12, 4});
        REQUIRE(small.pos_emb.shape == std::vector<int>{8, 4});
        REQUIRE(small.layers[0].wq.shape == std::vector<int>{4, 4});
        REQUIRE(small.layers[0].w1.shape == std::vector<int>{4, 16});
        REQUIRE(small.layers[0].w2.shape == std::vector<int>{16, 4});
        REQUIRE(small.mlm_dense.shape == std::vector<int>{4, 4});
        for (int r = 0; r < 12; ++r)
            for (int c = 0; c < 4; ++c)
                CHECK(small.tok_emb.at(r, c) == model.tok_emb.at(r, c));
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c)
                CHECK(small.layers[1].wq.at(r, c) == model.layers[1].wq.at(r, c));
        for (int f = 0; f < 16; ++f)
            for (int c = 0; c < 4; ++c)
                CHECK(small.layers[0].w2.at(f, c) == model.layers[0].w2.at(f, c));
        CHECK(small.layers[0].b1.data == model.layers[0].b1.data);
    }

    SUBCASE("errors") {
        CHECK_THROWS_AS(truncate_hidden(model, 0), ConfigError);
        CHECK_THROWS_AS(truncate_hidden(model, 12), ConfigError);
        CHECK_THROWS_AS(truncate_hidden(model, 5), ConfigError);  // not divisible by heads
    }
}

TEST_CASE("embedding projection is orthonormal and optimal for the embeddings") {
    // A taller vocabulary makes the spectrum non-trivial.
    EncoderModel model = EncoderModel::random_init(testutil::tiny_config(2, 8, 2, 16, 40), 41);
    const int H = 8, V = 40, k = 4;

    const Tensor q = embedding_projection(model, k);
    REQUIRE(q.shape == std::vector<int>{H, k});

    SUBCASE("columns are orthonormal") {
        for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) {
                double dot = 0.0;
                for (int i = 0; i < H; ++i)
                    dot += static_cast<double>(q.at(i, a)) * q.at(i, b);
                CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) <= 1e-4);
            }
    }

    SUBCASE("projector beats axis-aligned and random rank-k projectors") {
        auto reconstruction_error = [&](const std::vector<double>& p) {
            // error of E - E P P^T with P given column-major H x k
            double err = 0.0;
            for (int r = 0; r < V; ++r) {
                std::vector<double> coeff(static_cast<std::size_t>(k), 0.0);
                for (int j = 0; j < k; ++j)
                    for (int i = 0; i < H; ++i)
                        coeff[static_cast<std::size_t>(j)] +=
                            static_cast<double>(model.tok_emb.at(r, i)) * p[static_cast<std::size_t>(i) * k + j];
                for (int i = 0; i < H; ++i) {
                    double rec = 0.0;
                    for (int j = 0; j < k; ++j)
                        rec += coeff[static_cast<std::size_t>(j)] * p[static_cast<std::size_t>(i) * k + j];
                    const double d = static_cast<double>(model.tok_emb.at(r, i)) - rec;
                    err += d * d;
                }
            }
            return err;
        };

        std::vector<double> pq(static_cast<std::size_t>(H) * k);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < k; ++j) pq[static_cast<std::size_t>(i) * k + j] = q.at(i, j);

        std::vector<double> axis(static_cast<std::size_t>(H) * k, 0.0);
        for (int j = 0; j < k; ++j) axis[static_cast<std::size_t>(j) * k + j] = 1.0;

        // Random orthonormal basis via Gram-Schmidt.
        Rng rng(7);
        std::vector<double> rand_p(static_cast<std::size_t>(H) * k);
        for (int j = 0; j < k; ++j) {
            std::vector<double> col(static_cast<std::size_t>(H));
            for (int i = 0; i < H; ++i) col[static_cast<std::size_t>(i)] = rng.gaussian();
            for (int prev = 0; prev < j; ++prev) {
                double dot = 0.0;
                for (int i = 0; i < H; ++i)
                    dot += col[static_cast<std::size_t>(i)] * rand_p[static_cast<std::size_t>(i) * k + prev];
                for (int i = 0; i < H; ++i)
                    col[static_cast<std::size_t>(i)] -= dot * rand_p[static_cast<std::size_t>(i) * k + prev];
            }
            double norm = 0.0;
            for (double v : col) norm += v * v;
            norm = std::sqrt(norm);
            REQUIRE(norm > 1e-8);
            for (int i = 0; i < H; ++i) rand_p[static_cast<std::size_t>(i) * k + j] = col[static_cast<std::size_t>(i)] / norm;
        }

        const double err_q = reconstruction_error(pq);
        const double err_axis = reconstruction_error(axis);
        const double err_rand = reconstruction_error(rand_p);
        CHECK(err_q <= err_axis + 1e-9);
        CHECK(err_q <= err_rand + 1e-9);
    }

    SUBCASE("errors") {
        CHECK_THROWS_AS(embedding_projection(model, 0), ConfigError);
        CHECK_THROWS_AS(embedding_projection(model, 9), ConfigError);
    }
}

TEST_CASE("svd_reduce projects weights and resets the norms") {
    EncoderModel model = EncoderModel::random_init(testutil::tiny_config(), 43);
    // Scale up so absolute comparisons are meaningful.
    for (float& v : model.tok_emb.data) v *= 40.0f;
    for (float& v : model.layers[0].wq.data) v *= 40.0f;

    SUBCASE("k equal to the hidden size absorbs a pure rotation") {
        const int H = 8, V = 12;
        const Tensor q = embedding_projection(model, H);
        EncoderModel rot = svd_reduce(model, H);

        // E_rot * wq_rot should equal (E * wq) * Q because Q Q^T = I.
        for (int r = 0; r < V; ++r) {
            for (int c = 0; c < H; ++c) {
                double lhs = 0.0;
                for (int m = 0; m < H; ++m)
                    lhs += static_cast<double>(rot.tok_emb.at(r, m)) * rot.layers[0].wq.at(m, c);
                double rhs = 0.0;
                for (int m = 0; m < H; ++m) {
                    double ew = 0.0;
                    for (int i = 0; i < H; ++i)
                        ew += static_cast<double>(model.tok_emb.at(r, i)) * model.layers[0].wq.at(i, m);
                    rhs += ew * q.at(m, c);
                }
                CHECK(std::abs(lhs - rhs) <= 1e-3 * std::max(1.0, std::abs(rhs)));
            }
        }
    }

    SUBCASE("k=4 shapes and norm resets") {
        EncoderModel small = svd_reduce(model, 4);
        CHECK(small.config.hidden_size == 4);
        CHECK(small.actual_param_count() == param_count(small.config));
        REQUIRE(small.tok_emb.shape == std::vector<int>{12, 4});
        REQUIRE(small.layers[1].w1.shape == std::vector<int>{4, 16});
        for (float v : small.emb_norm_scale.data) CHECK(v == 1.0f);
        for (float v : small.emb_norm_bias.data) CHECK(v == 0.0f);
        for (float v : small.layers[0].ffn_norm_scale.data) CHECK(v == 1.0f);
        for (float v : small.mlm_norm_bias.data) CHECK(v == 0.0f);
        // b1 is hidden-independent and rides along unchanged.
        CHECK(small.layers[0].b1.data == model.layers[0].b1.data);
    }

    SUBCASE("errors") {
        CHECK_THROWS_AS(svd_reduce(model, 0), ConfigError);
        CHECK_THROWS_AS(svd_reduce(model, 5), ConfigError);
        CHECK_THROWS_AS(svd_reduce(model, 12), ConfigError);
    }
}

TEST_CASE("trim_vocab_model gathers rows and remaps the tokenizer") {
    Tokenizer tok = Tokenizer::build({"w0 w1 w2 w3 w4 w5 w6"}, 12);
    EncoderModel model = EncoderModel::random_init(testutil::tiny_config(), 47);

    SUBCASE("keeping every id is the identity") {
        std::vector<int> all(12);
        for (int i = 0; i < 12; ++i) all[static_cast<std::size_t>(i)] = i;
        TrimmedModel trimmed = trim_vocab_model(model, tok, all);
        CHECK(testutil::models_bit_equal(trimmed.model, model));
        CHECK(trimmed.tokenizer.to_json_string() == tok.to_json_string());
    }

    SUBCASE("subset keeps logits of surviving tokens") {
        const std::vector<int> kept = {0, 1, 2, 3, 4, 6, 8, 10};
        TrimmedModel trimmed = trim_vocab_model(model, tok, kept);
        CHECK(trimmed.model.config.vocab_size == 8);
        CHECK(trimmed.tokenizer.vocab_size() == 8);
        CHECK(trimmed.tokenizer.token_of(5) == tok.token_of(6));
        CHECK(trimmed.tokenizer.frequency(7) == tok.frequency(10));

        // Same text through both vocabularies: logits agree on kept columns.
        TokenBatch orig;
        orig.batch = 2;
        orig.seq = 4;
        orig.ids = {6, 8, 10, 6, 10, 10, 8, 6};
        TokenBatch remapped = orig;
        remapped.ids = {5, 6, 7, 5, 7, 7, 6, 5};
        const Tensor a = forward(model, orig);
        const Tensor b = forward(trimmed.model, remapped);
        REQUIRE(b.shape == std::vector<int>{8, 8});
        for (int r = 0; r < 8; ++r)
            for (int i = 0; i < 8; ++i)
                CHECK(std::abs(b.at(r, i) - a.at(r, kept[static_cast<std::size_t>(i)])) <= 1e-6f);
    }

    SUBCASE("errors") {
        Tokenizer small = Tokenizer::build({"w0 w1 w2 w3 w4 w5"}, 11);
        CHECK_THROWS_AS(trim_vocab_model(model, small, {0, 1, 2, 3, 4, 5}), ConfigError);
        CHECK_THROWS_AS(trim_vocab_model(model, tok, {0, 1, 2, 3}), DataError);
        CHECK_THROWS_AS(trim_vocab_model(model, tok, {0, 1, 2, 4, 3, 5}), DataError);
        CHECK_THROWS_AS(trim_vocab_model(model, tok, {0, 1, 2, 3, 4, 12}), DataError);
        CHECK_THROWS_AS(trim_vocab_model(model, tok, {0, 1, 2, 3, 4, 5, 5}), DataError);
    }
}

TEST_CASE("build_report computes reductions and rejects bad chains") {
    auto record = [](const char* name, std::int64_t params) {
        StageRecord r;
        r.stage = name;
        r.params = params;
        return r;
    };

    SUBCASE("reductions are relative to stage zero") {
        const CompressionReport report =
            build_report({record("base", 100), record("kd", 80), record("prune", 60)});
        REQUIRE(report.stages.size() == 3);
        CHECK(report.stages[0].reduction_pct == doctest::Approx(0.0));
        CHECK(report.stages[1].reduction_pct == doctest::Approx(20.0));
        CHECK(report.stages[2].reduction_pct == doctest::Approx(40.0));

        const std::string csv = report.to_csv();
        CHECK(csv.rfind("stage,params,reduction_pct,val_masked_acc,checkpoint\n", 0) == 0);
        CHECK(csv.find("prune,60,40.00") != std::string::npos);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
        CHECK(report.to_table().find("base") != std::string::npos);
    }

    SUBCASE("errors") {
        CHECK_THROWS_AS(build_report({}), DataError);
        CHECK_THROWS_AS(build_report({record("a", 100), record("b", 100)}), DataError);
        CHECK_THROWS_AS(build_report({record("a", 100), record("b", 120)}), DataError);
        CHECK_THROWS_AS(build_report({record("a", 0)}), DataError);
    }
}
