// SPDX-License-Identifier: Apache-2.0
//
// Corpus ingestion and the synthetic data generator. Topic words are
// Zipf-distributed and disjoint across topics; entity "names" are 1-3
// token sequences whose surface forms spell out their own BIO tag, which
// keeps gold tags recoverable from text and the generator trivially
// consistent across the MLM, classification, and tagging views.

#include "shrinkpipe/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>

#include "shrinkpipe/errors.hpp"
#include "shrinkpipe/rng.hpp"

namespace shrinkpipe {

namespace {

constexpr int kNamesPerType = 5;
constexpr double kNameRate = 0.15;

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// Draw an index with weight 1/(i+1) using a precomputed cumulative table.
int zipf_draw(const std::vector<double>& cumulative, Rng& rng) {
    const double u = rng.uniform() * cumulative.back();
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    const std::size_t idx = static_cast<std::size_t>(it - cumulative.begin());
    return static_cast<int>(std::min(idx, cumulative.size() - 1));
}

}  // namespace

std::int64_t Corpus::total_tokens() const {
    std::int64_t total = 0;
    for (const std::vector<int>& doc : docs) total += static_cast<std::int64_t>(doc.size());
    return total;
}

std::vector<std::string> read_document_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::string> docs;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        docs.push_back(line);
    }
    return docs;
}

Corpus encode_corpus(const Tokenizer& tokenizer, const std::vector<std::string>& documents) {
    Corpus c;
    for (const std::string& doc : documents) {
        std::vector<int> ids = tokenizer.encode(doc);
        if (!ids.empty()) c.docs.push_back(std::move(ids));
    }
    return c;
}

CorpusSplit split_corpus(const Corpus& corpus, double held_out_frac, std::uint64_t seed) {
    if (held_out_frac < 0.0 || held_out_frac >= 1.0)
        throw ConfigError("split_corpus: held-out fraction must be in [0, 1)");
    const std::size_t n = corpus.docs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "corpus-split"));
    rng.shuffle(order);
    std::size_t n_val = static_cast<std::size_t>(held_out_frac * static_cast<double>(n));
    if (held_out_frac > 0.0 && n >= 2 && n_val == 0) n_val = 1;
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    CorpusSplit split;
    for (std::size_t i : train_idx) split.train.docs.push_back(corpus.docs[i]);
    for (std::size_t i : val_idx) split.validation.docs.push_back(corpus.docs[i]);
    return split;
}

void SyntheticSpec::validate() const {
    if (num_topics < 1) throw ConfigError("synthetic corpus: need at least one topic");
    if (vocab_per_topic < 1) throw ConfigError("synthetic corpus: empty topic vocabulary");
    if (doc_count < 1 || doc_length < 1) throw ConfigError("synthetic corpus: empty documents");
    for (const std::string& tag : tag_lexicon)
        if (tag.empty()) throw ConfigError("synthetic corpus: empty tag name in lexicon");
}

SyntheticData generate_synthetic_corpus(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticData data;
    data.num_topics = spec.num_topics;

    data.tag_names.push_back("O");
    for (const std::string& tag : spec.tag_lexicon) {
        data.tag_names.push_back("B-" + tag);
        data.tag_names.push_back("I-" + tag);
    }

    // Entity names per type: name j of type T is "<t>b<j>" followed by
    // (j % 3) copies of "<t>i<j>", where <t> = lowercase(T).
    struct Name {
        std::vector<std::string> tokens;
        std::vector<int> tags;
    };
    std::vector<std::vector<Name>> names(spec.tag_lexicon.size());
    for (std::size_t t = 0; t < spec.tag_lexicon.size(); ++t) {
        const std::string low = lower(spec.tag_lexicon[t]);
        const int b_tag = 1 + 2 * static_cast<int>(t);
        for (int j = 0; j < kNamesPerType; ++j) {
            Name n;
            n.tokens.push_back(low + "b" + std::to_string(j));
            n.tags.push_back(b_tag);
            for (int rep = 0; rep < j % 3; ++rep) {
                n.tokens.push_back(low + "i" + std::to_string(j));
                n.tags.push_back(b_tag + 1);
            }
            names[t].push_back(std::move(n));
        }
    }

    std::vector<double> cumulative(static_cast<std::size_t>(spec.vocab_per_topic));
    double acc = 0.0;
    for (int i = 0; i < spec.vocab_per_topic; ++i) {
        acc += 1.0 / (i + 1);
        cumulative[static_cast<std::size_t>(i)] = acc;
    }

    for (int d = 0; d < spec.doc_count; ++d) {
        Rng rng(derive_seed(spec.seed, "doc", static_cast<std::uint64_t>(d)));
        const int topic = d % spec.num_topics;
        TaggingExample tagging;
        while (static_cast<int>(tagging.tokens.size()) < spec.doc_length) {
            const int remaining = spec.doc_length - static_cast<int>(tagging.tokens.size());
            if (!names.empty() && rng.uniform() < kNameRate) {
                const std::size_t type = static_cast<std::size_t>(rng.below(names.size()));
                const Name& n = names[type][static_cast<std::size_t>(rng.below(names[type].size()))];
                if (static_cast<int>(n.tokens.size()) <= remaining) {
                    tagging.tokens.insert(tagging.tokens.end(), n.tokens.begin(), n.tokens.end());
                    tagging.tags.insert(tagging.tags.end(), n.tags.begin(), n.tags.end());
                    continue;
                }
            }
            const int w = zipf_draw(cumulative, rng);
            tagging.tokens.push_back("t" + std::to_string(topic) + "w" + std::to_string(w));
            tagging.tags.push_back(0);
        }
        std::string text;
        for (const std::string& tok : tagging.tokens) {
            if (!text.empty()) text += ' ';
            text += tok;
        }
        data.mlm_text.push_back(text);
        data.topic_data.push_back(ClassificationExample{text, topic});
        data.tagging_data.push_back(std::move(tagging));
    }
    return data;
}

std::vector<int> select_top_tokens(const Tokenizer& tokenizer, const Corpus& corpus, int n) {
    if (n < kNumSpecials)
        throw ConfigError("select_top_tokens: n=" + std::to_string(n) + " below the " +
                          std::to_string(kNumSpecials) + " specials");
    if (n > tokenizer.vocab_size())
        throw ConfigError("select_top_tokens: n=" + std::to_string(n) + " exceeds vocab of " +
                          std::to_string(tokenizer.vocab_size()));
    std::vector<std::int64_t> counts(static_cast<std::size_t>(tokenizer.vocab_size()), 0);
    for (const std::vector<int>& doc : corpus.docs)
        for (int id : doc) {
            if (id < 0 || id >= tokenizer.vocab_size())
                throw DataError("select_top_tokens: corpus id " + std::to_string(id) +
                                " outside vocab of " + std::to_string(tokenizer.vocab_size()));
            ++counts[static_cast<std::size_t>(id)];
        }
    std::vector<int> candidates;
    for (int id = kNumSpecials; id < tokenizer.vocab_size(); ++id) candidates.push_back(id);
    std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
        const std::int64_t ca = counts[static_cast<std::size_t>(a)];
        const std::int64_t cb = counts[static_cast<std::size_t>(b)];
        if (ca != cb) return ca > cb;
        return tokenizer.token_of(a) < tokenizer.token_of(b);
    });
    std::vector<int> kept;
    for (int i = 0; i < kNumSpecials; ++i) kept.push_back(i);
    for (int i = 0; i < n - kNumSpecials; ++i) kept.push_back(candidates[static_cast<std::size_t>(i)]);
    return kept;
}

namespace {

template <typename Example>
TaskSplit<Example> split_impl(std::vector<Example> examples, double dev_frac, double test_frac,
                              std::uint64_t seed) {
    if (dev_frac < 0.0 || test_frac < 0.0 || dev_frac + test_frac >= 1.0)
        throw ConfigError("split_examples: dev/test fractions must be non-negative and sum below 1");
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "task-split"));
    rng.shuffle(order);
    const std::size_t n = examples.size();
    std::size_t n_dev = static_cast<std::size_t>(dev_frac * static_cast<double>(n));
    std::size_t n_test = static_cast<std::size_t>(test_frac * static_cast<double>(n));
    if (dev_frac > 0.0 && n_dev == 0 && n >= 3) n_dev = 1;
    if (test_frac > 0.0 && n_test == 0 && n >= 3) n_test = 1;
    TaskSplit<Example> split;
    for (std::size_t i = 0; i < n; ++i) {
        Example& e = examples[order[i]];
        if (i < n_dev)
            split.dev.push_back(std::move(e));
        else if (i < n_dev + n_test)
            split.test.push_back(std::move(e));
        else
            split.train.push_back(std::move(e));
    }
    return split;
}

}  // namespace

TaskSplit<ClassificationExample> split_examples(std::vector<ClassificationExample> examples,
                                                double dev_frac, double test_frac, std::uint64_t seed) {
    return split_impl(std::move(examples), dev_frac, test_frac, seed);
}

TaskSplit<TaggingExample> split_examples(std::vector<TaggingExample> examples, double dev_frac,
                                         double test_frac, std::uint64_t seed) {
    return split_impl(std::move(examples), dev_frac, test_frac, seed);
}

}  // namespace shrinkpipe
