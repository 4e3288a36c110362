// SPDX-License-Identifier: Apache-2.0
//
// Parameter arithmetic, initialization, layer-transplant strategies, and
// the forward wrapper.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <vector>

#include "doctest.h"
#include "reference.hpp"
#include "shrinkpipe/adapters.hpp"
#include "shrinkpipe/errors.hpp"
#include "shrinkpipe/graph.hpp"
#include "shrinkpipe/model.hpp"
#include "test_util.hpp"

using namespace shrinkpipe;

TEST_CASE("config validation") {
    CHECK_THROWS_AS(testutil::tiny_config(0).validate(), ConfigError);
    CHECK_THROWS_AS(testutil::tiny_config(2, 6, 4).validate(), ConfigError);  // 6 % 4 != 0
    CHECK_THROWS_AS(testutil::tiny_config(2, 8, 2, 0).validate(), ConfigError);
    CHECK_NOTHROW(testutil::tiny_config().validate());
}

TEST_CASE("parameter count formula on a hand-computed toy") {
    // L=2, H=8, heads=2, F=16, V=12, P=8, tied:
    //   embeddings 12*8 + 8*8 + 2*8                      = 176
    //   per layer  4*(64+8) + 16 + (8*16+16) + (16*8+8) + 16 = 600
    //   head       (64+8) + 16 + 12                      = 100
    CHECK(param_count(testutil::tiny_config()) == 176 + 2 * 600 + 100);
    // Untying adds a V x H output projection.
    CHECK(param_count(testutil::tiny_config(2, 8, 2, 16, 12, 8, false)) == 176 + 2 * 600 + 100 + 96);
}

TEST_CASE("parameter count matches the allocated tensors") {
    const ModelConfig configs[] = {
        testutil::tiny_config(),
        testutil::tiny_config(3, 12, 3, 24, 40, 16),
        testutil::tiny_config(1, 4, 1, 6, 9, 5, false),
    };
    for (const ModelConfig& cfg : configs) {
        EncoderModel m = EncoderModel::create(cfg);
        CHECK(m.actual_param_count() == param_count(cfg));
    }
}

TEST_CASE("published model shapes reproduce their totals") {
    // XLM-R base: L=12, H=768, 12 heads, F=3072, V=250002, P=514, tied.
    CHECK(param_count(testutil::tiny_config(12, 768, 12, 3072, 250002, 514)) == 278294418);
    // mBERT: V=119547, P=512.
    CHECK(param_count(testutil::tiny_config(12, 768, 12, 3072, 119547, 512)) == 177972987);
}

TEST_CASE("random init is deterministic, finite, and norm-aware") {
    const ModelConfig cfg = testutil::tiny_config();
    EncoderModel a = EncoderModel::random_init(cfg, 9);
    EncoderModel b = EncoderModel::random_init(cfg, 9);
    EncoderModel c = EncoderModel::random_init(cfg, 10);
    CHECK(testutil::models_bit_equal(a, b));
    CHECK_FALSE(testutil::models_bit_equal(a, c));
    for (const NamedTensor& nt : a.named_tensors()) CHECK(nt.tensor->all_finite());
    for (float v : a.emb_norm_scale.data) CHECK(v == 1.0f);
    for (float v : a.emb_norm_bias.data) CHECK(v == 0.0f);
    for (float v : a.layers[0].attn_norm_scale.data) CHECK(v == 1.0f);
    CHECK(a.tok_emb.data[0] != 0.0f);
}

TEST_CASE("forward produces per-position vocabulary logits") {
    const ModelConfig cfg = testutil::tiny_config();
    EncoderModel m = EncoderModel::random_init(cfg, 4);
    TokenBatch batch = testutil::random_batch(cfg, 3, 5, 77);
    const Tensor logits = forward(m, batch);
    CHECK(logits.rows() == 15);
    CHECK(logits.cols() == cfg.vocab_size);
    CHECK(logits.all_finite());

    // The independent double-precision model agrees on every logit.
    const std::vector<double> ref = testref::forward_logits(m, batch);
    for (int r = 0; r < logits.rows(); ++r)
        for (int c = 0; c < logits.cols(); ++c)
            CHECK(logits.at(r, c) ==
                  doctest::Approx(ref[static_cast<std::size_t>(r) * cfg.vocab_size + c]).epsilon(2e-4));
}

TEST_CASE("forward validates its batch") {
    const ModelConfig cfg = testutil::tiny_config();
    EncoderModel m = EncoderModel::random_init(cfg, 4);
    TokenBatch bad = testutil::random_batch(cfg, 1, 4, 5);
    bad.ids[0] = cfg.vocab_size;  // out of vocabulary
    CHECK_THROWS_AS(forward(m, bad), DataError);

    TokenBatch long_seq = testutil::random_batch(cfg, 1, cfg.max_positions + 1, 5);
    CHECK_THROWS_AS(forward(m, long_seq), DataError);

    TokenBatch wrong_mask = testutil::random_batch(cfg, 2, 4, 5);
    wrong_mask.valid.assign(3, 1);
    CHECK_THROWS_AS(forward(m, wrong_mask), ShapeError);
}

TEST_CASE("strategy layer selections") {
    CHECK(strategy_layer_indices(InitStrategy::kFirstK, 12, 6) == std::vector<int>{0, 1, 2, 3, 4, 5});
    CHECK(strategy_layer_indices(InitStrategy::kLastK, 12, 6) == std::vector<int>{6, 7, 8, 9, 10, 11});
    CHECK(strategy_layer_indices(InitStrategy::kStride, 12, 6) == std::vector<int>{0, 2, 4, 6, 8, 10});
    CHECK(strategy_layer_indices(InitStrategy::kFirstLast, 12, 6) == std::vector<int>{0, 1, 2, 9, 10, 11});
    CHECK(strategy_layer_indices(InitStrategy::kFirstLast, 12, 5) == std::vector<int>{0, 1, 2, 10, 11});
    CHECK(strategy_layer_indices(InitStrategy::kRandom, 12, 6).empty());
    CHECK_THROWS_AS(strategy_layer_indices(InitStrategy::kStride, 12, 5), ConfigError);
    CHECK_THROWS_AS(strategy_layer_indices(InitStrategy::kFirstK, 12, 13), ConfigError);
    CHECK_THROWS_AS(strategy_layer_indices(InitStrategy::kFirstK, 12, 0), ConfigError);

    CHECK(init_strategy_from_string("last-k") == InitStrategy::kLastK);
    CHECK(init_strategy_from_string("first+last") == InitStrategy::kFirstLast);
    CHECK_THROWS_AS(init_strategy_from_string("middle"), ConfigError);
    for (const InitStrategy s : {InitStrategy::kFirstK, InitStrategy::kLastK, InitStrategy::kStride,
                                 InitStrategy::kFirstLast, InitStrategy::kRandom})
        CHECK(init_strategy_from_string(to_string(s)) == s);
}

TEST_CASE("student initialization transplants teacher weights") {
    const ModelConfig cfg = testutil::tiny_config(4, 8, 2, 16, 20, 8);
    EncoderModel teacher = EncoderModel::random_init(cfg, 3);

    EncoderModel last2 = init_student(teacher, InitStrategy::kLastK, 2);
    CHECK(last2.config.num_layers == 2);
    CHECK(testutil::bit_equal(last2.tok_emb, teacher.tok_emb));
    CHECK(testutil::bit_equal(last2.layers[0].wq, teacher.layers[2].wq));
    CHECK(testutil::bit_equal(last2.layers[1].w2, teacher.layers[3].w2));
    CHECK(testutil::bit_equal(last2.mlm_dense, teacher.mlm_dense));

    EncoderModel stride2 = init_student(teacher, InitStrategy::kStride, 2);
    CHECK(testutil::bit_equal(stride2.layers[0].wq, teacher.layers[0].wq));
    CHECK(testutil::bit_equal(stride2.layers[1].wq, teacher.layers[2].wq));

    EncoderModel rand2 = init_student(teacher, InitStrategy::kRandom, 2, 77);
    CHECK(rand2.config.num_layers == 2);
    CHECK_FALSE(testutil::bit_equal(rand2.tok_emb, teacher.tok_emb));
    EncoderModel rand2b = init_student(teacher, InitStrategy::kRandom, 2, 77);
    CHECK(testutil::models_bit_equal(rand2, rand2b));
}

TEST_CASE("zero-up adapters leave the forward pass bit-identical") {
    const ModelConfig cfg = testutil::tiny_config();
    EncoderModel m = EncoderModel::random_init(cfg, 6);
    const AdapterStack stack = make_adapter_stack(cfg, 2, 123);
    TokenBatch batch = testutil::random_batch(cfg, 2, 6, 8);

    Graph plain;
    const ForwardNodes base = build_forward(plain, m, nullptr, batch);
    Graph adapted;
    const ForwardNodes with = build_forward(adapted, m, nullptr, batch, &stack, nullptr);
    CHECK(testutil::bit_equal(plain.value(base.logits), adapted.value(with.logits)));

    // A perturbed up-projection must change the output (the hook is live).
    AdapterStack touched = stack;
    touched.layers[0].up.at(0, 0) = 0.5f;
    Graph g3;
    const ForwardNodes moved = build_forward(g3, m, nullptr, batch, &touched, nullptr);
    CHECK_FALSE(testutil::bit_equal(plain.value(base.logits), g3.value(moved.logits)));

    AdapterStack wrong = stack;
    wrong.layers.pop_back();
    Graph g4;
    CHECK_THROWS_AS(build_forward(g4, m, nullptr, batch, &wrong, nullptr), ShapeError);
}

TEST_CASE("ffn activations are exposed per layer") {
    const ModelConfig cfg = testutil::tiny_config();
    EncoderModel m = EncoderModel::random_init(cfg, 5);
    TokenBatch batch = testutil::random_batch(cfg, 2, 4, 6);
    Graph g;
    const ForwardNodes nodes = build_forward(g, m, nullptr, batch);
    REQUIRE(nodes.ffn_activations.size() == 2);
    for (const NodeId id : nodes.ffn_activations) {
        CHECK(g.value(id).rows() == 8);
        CHECK(g.value(id).cols() == cfg.ffn_size);
    }
    CHECK(g.value(nodes.final_hidden).cols() == cfg.hidden_size);
}
