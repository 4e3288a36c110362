// SPDX-License-Identifier: Apache-2.0
//
// Bottleneck adapters (parameter accounting + frozen-backbone training)
// and the evaluation metrics with their BIO-repair semantics.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "shrinkpipe/adapters.hpp"
#include "shrinkpipe/corpus.hpp"
#include "shrinkpipe/errors.hpp"
#include "shrinkpipe/metrics.hpp"
#include "test_util.hpp"

using namespace shrinkpipe;

namespace {

ModelConfig sized_config(int layers, int hidden) {
    return testutil::tiny_config(layers, hidden, 12, 4 * hidden, 1000, 64);
}

}  // namespace

TEST_CASE("adapter parameter counts match the published table") {
    CHECK(adapter_param_count(sized_config(12, 768), 16) == 894528);
    CHECK(adapter_param_count(sized_config(6, 768), 16) == 447264);
    CHECK(adapter_param_count(sized_config(6, 564), 16) == 240474);
    CHECK(adapter_param_count(sized_config(6, 456), 16) == 156120);
    CHECK(adapter_param_count(sized_config(6, 312), 16) == 73122);
    CHECK_THROWS_AS(adapter_param_count(sized_config(6, 312), 0), ConfigError);
}

TEST_CASE("adapter stacks start as an exact identity and count their params") {
    const ModelConfig cfg = testutil::tiny_config();
    AdapterStack stack = make_adapter_stack(cfg, 2, 7);
    REQUIRE(stack.layers.size() == 2);
    CHECK(stack.bottleneck == 4);
    REQUIRE(stack.layers[0].down.shape == std::vector<int>{8, 4});
    REQUIRE(stack.layers[0].up.shape == std::vector<int>{4, 8});

    bool down_nonzero = false;
    for (const BottleneckAdapter& layer : stack.layers) {
        for (float v : layer.down.data) down_nonzero = down_nonzero || v != 0.0f;
        for (float v : layer.up.data) CHECK(v == 0.0f);
        for (float v : layer.down_bias.data) CHECK(v == 0.0f);
        for (float v : layer.up_bias.data) CHECK(v == 0.0f);
    }
    CHECK(down_nonzero);

    CHECK(adapter_actual_param_count(stack) == adapter_param_count(cfg, 2));
    AdapterStack mirror = adapter_zeros_like(stack);
    CHECK(adapter_actual_param_count(mirror) == adapter_actual_param_count(stack));
    for (float v : mirror.layers[0].down.data) CHECK(v == 0.0f);

    // Deterministic in the seed.
    AdapterStack again = make_adapter_stack(cfg, 2, 7);
    CHECK(testutil::bit_equal(again.layers[1].down, stack.layers[1].down));

    CHECK_THROWS_AS(make_adapter_stack(cfg, 0, 7), ConfigError);
    CHECK_THROWS_AS(make_adapter_stack(cfg, 9, 7), ConfigError);  // bottleneck would be 0
}

TEST_CASE("classification adapter training leaves the backbone frozen") {
    Tokenizer tok = Tokenizer::build({"w0 w1 w2 w3 w4 w5 w6"}, 12);
    const ModelConfig cfg = testutil::tiny_config(2, 8, 2, 16, 12, 16);
    EncoderModel model = EncoderModel::random_init(cfg, 51);
    EncoderModel pristine = model;

    std::vector<ClassificationExample> examples;
    Rng rng(13);
    for (int i = 0; i < 40; ++i) {
        const int label = i % 2;
        std::string text;
        for (int w = 0; w < 6; ++w) {
            if (!text.empty()) text += ' ';
            text += label == 0 ? "w" + std::to_string(rng.below(3))
                               : "w" + std::to_string(3 + rng.below(4));
        }
        examples.push_back({text, label});
    }
    const TaskSplit<ClassificationExample> split = split_examples(examples, 0.2, 0.2, 5);

    TaskHyperparams hp;
    hp.epochs = 2;
    hp.batch_size = 4;
    hp.max_len = 8;
    hp.learning_rate = 1e-3f;
    hp.seed = 3;

    SUBCASE("smoke, determinism, and frozen backbone") {
        const TaskResult a = train_classification_adapter(model, tok, split, 2, 2, hp);
        CHECK(testutil::models_bit_equal(model, pristine));
        REQUIRE(a.dev_history.size() == 2);
        for (float v : a.dev_history) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        CHECK(a.dev_metric >= 0.0f);
        CHECK(a.dev_metric <= 1.0f);
        CHECK(a.test_metric >= 0.0f);
        CHECK(a.test_metric <= 1.0f);
        REQUIRE(a.head.w.shape == std::vector<int>{8, 2});

        const TaskResult b = train_classification_adapter(model, tok, split, 2, 2, hp);
        CHECK(a.dev_history == b.dev_history);
        CHECK(a.dev_metric == b.dev_metric);
        CHECK(a.test_metric == b.test_metric);
        CHECK(testutil::bit_equal(a.head.w, b.head.w));
        CHECK(testutil::bit_equal(a.adapter.layers[0].up, b.adapter.layers[0].up));
    }

    SUBCASE("zero epochs returns the identity-adapter baseline") {
        TaskHyperparams zero = hp;
        zero.epochs = 0;
        const TaskResult r = train_classification_adapter(model, tok, split, 2, 2, zero);
        CHECK(r.dev_history.empty());
        CHECK(testutil::models_bit_equal(model, pristine));
        for (const BottleneckAdapter& layer : r.adapter.layers)
            for (float v : layer.up.data) CHECK(v == 0.0f);
    }

    SUBCASE("label outside the class range is rejected") {
        TaskSplit<ClassificationExample> bad = split;
        bad.train[0].label = 2;
        CHECK_THROWS_AS(train_classification_adapter(model, tok, bad, 2, 2, hp), DataError);
    }

    SUBCASE("config errors") {
        CHECK_THROWS_AS(train_classification_adapter(model, tok, split, 1, 2, hp), ConfigError);
        TaskHyperparams bad = hp;
        bad.batch_size = 0;
        CHECK_THROWS_AS(train_classification_adapter(model, tok, split, 2, 2, bad), ConfigError);
    }
}

TEST_CASE("tagging adapter training runs on synthetic BIO data") {
    SyntheticSpec spec;
    spec.doc_count = 24;
    spec.doc_length = 10;
    spec.seed = 11;
    const SyntheticData data = generate_synthetic_corpus(spec);
    Tokenizer tok = Tokenizer::build(data.mlm_text, 400);

    ModelConfig cfg = testutil::tiny_config(2, 8, 2, 16, tok.vocab_size(), 16);
    EncoderModel model = EncoderModel::random_init(cfg, 53);
    EncoderModel pristine = model;

    const TaskSplit<TaggingExample> split = split_examples(data.tagging_data, 0.2, 0.2, 5);
    TaskHyperparams hp;
    hp.epochs = 1;
    hp.batch_size = 4;
    hp.max_len = 12;
    hp.learning_rate = 1e-3f;
    hp.seed = 4;

    const TaskResult a = train_tagging_adapter(model, tok, split, data.tag_names, 2, hp);
    CHECK(testutil::models_bit_equal(model, pristine));
    REQUIRE(a.dev_history.size() == 1);
    CHECK(a.dev_metric >= 0.0f);
    CHECK(a.dev_metric <= 1.0f);
    CHECK(a.test_metric >= 0.0f);
    CHECK(a.test_metric <= 1.0f);
    REQUIRE(a.head.w.shape == std::vector<int>{8, 5});

    const TaskResult b = train_tagging_adapter(model, tok, split, data.tag_names, 2, hp);
    CHECK(a.dev_history == b.dev_history);
    CHECK(a.test_metric == b.test_metric);

    SUBCASE("tag id outside the tag set is rejected") {
        TaskSplit<TaggingExample> bad = split;
        bad.train[0].tags[0] = 99;
        CHECK_THROWS_AS(train_tagging_adapter(model, tok, bad, data.tag_names, 2, hp), DataError);
    }
}

TEST_CASE("macro_f1 oracles") {
    CHECK(macro_f1({0, 1, 2, 1}, {0, 1, 2, 1}) == doctest::Approx(1.0));
    CHECK(macro_f1({0, 0, 1, 1}, {0, 1, 1, 0}) == doctest::Approx(0.5));
    // Class 0: P=1/2, R=1 -> F1=2/3. Class 1: F1=0. Mean 1/3.
    CHECK(macro_f1({0, 1}, {0, 0}) == doctest::Approx(1.0 / 3.0));
    // Absent classes are excluded: only ids 2 and 5 participate.
    CHECK(macro_f1({2, 2, 5}, {2, 5, 5}) == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(macro_f1({}, {}), DataError);
    CHECK_THROWS_AS(macro_f1({0, 1}, {0}), DataError);
}

TEST_CASE("extract_spans handles well-formed and repaired BIO") {
    using V = std::vector<Span>;
    CHECK(extract_spans({"O", "B-PER", "I-PER", "O"}) == V{{"PER", 1, 2}});
    CHECK(extract_spans({"B-PER", "I-PER", "I-PER"}) == V{{"PER", 0, 2}});
    CHECK(extract_spans({"O", "O"}) == V{});
    CHECK(extract_spans({"B-PER", "B-PER"}) == V{{"PER", 0, 0}, {"PER", 1, 1}});

    // Repair: an I- tag that cannot continue a span opens one.
    CHECK(extract_spans({"O", "I-PER", "I-PER", "O"}) == V{{"PER", 1, 2}});
    CHECK(extract_spans({"I-PER"}) == V{{"PER", 0, 0}});
    CHECK(extract_spans({"B-PER", "I-LOC"}) == V{{"PER", 0, 0}, {"LOC", 1, 1}});
    CHECK(extract_spans({"B-LOC", "I-LOC", "I-PER"}) == V{{"LOC", 0, 1}, {"PER", 2, 2}});
    CHECK(extract_spans({"I-LOC", "B-LOC", "I-LOC"}) == V{{"LOC", 0, 0}, {"LOC", 1, 2}});

    CHECK_THROWS_AS(extract_spans({"X-PER"}), DataError);
    CHECK_THROWS_AS(extract_spans({"B-"}), DataError);
    CHECK_THROWS_AS(extract_spans({"IPER"}), DataError);
    try {
        extract_spans({"O", "bad"});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("position 1") != std::string::npos);
    }
}

TEST_CASE("span_f1 oracles") {
    CHECK(span_f1({{"B-PER", "I-PER", "O"}}, {{"B-PER", "I-PER", "O"}}) == doctest::Approx(1.0));
    // Boundary error: pred span (PER,0,0) vs gold (PER,0,1) -> no overlap credit.
    CHECK(span_f1({{"B-PER", "I-PER", "O"}}, {{"B-PER", "O", "O"}}) == doctest::Approx(0.0));
    // One of two gold spans found: P=1, R=1/2 -> F=2/3.
    CHECK(span_f1({{"B-PER", "O", "B-LOC"}}, {{"B-PER", "O", "O"}}) == doctest::Approx(2.0 / 3.0));
    // No spans on either side counts as a perfect match.
    CHECK(span_f1({{"O", "O"}}, {{"O", "O"}}) == doctest::Approx(1.0));
    // Repair makes these two sequences equivalent.
    CHECK(span_f1({{"O", "B-PER", "I-PER"}}, {{"O", "I-PER", "I-PER"}}) == doctest::Approx(1.0));

    CHECK_THROWS_AS(span_f1({}, {}), DataError);
    CHECK_THROWS_AS(span_f1({{"O"}}, {{"O"}, {"O"}}), DataError);
    CHECK_THROWS_AS(span_f1({{"O", "O"}}, {{"O"}}), DataError);
}
