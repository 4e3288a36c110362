// SPDX-License-Identifier: Apache-2.0
//
// Corpus containers, file ingestion, train/validation splitting, and the
// deterministic synthetic-corpus generator that yields MLM text plus
// aligned topic-classification and BIO-tagging task data.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shrinkpipe/tokenizer.hpp"

namespace shrinkpipe {

struct Corpus {
    std::vector<std::vector<int>> docs;  // token ids, one entry per document

    std::int64_t total_tokens() const;
};

// UTF-8 text, one document per line; blank lines are skipped.
std::vector<std::string> read_document_lines(const std::filesystem::path& path);

Corpus encode_corpus(const Tokenizer& tokenizer, const std::vector<std::string>& documents);

// Deterministic split; holds out held_out_frac of documents (at least one
// when the corpus has two or more) for validation.
struct CorpusSplit {
    Corpus train;
    Corpus validation;
};
CorpusSplit split_corpus(const Corpus& corpus, double held_out_frac, std::uint64_t seed);

struct ClassificationExample {
    std::string text;
    int label = 0;
};

struct TaggingExample {
    std::vector<std::string> tokens;
    std::vector<int> tags;  // indices into the BIO tag-name list
};

struct SyntheticSpec {
    int num_topics = 3;
    int vocab_per_topic = 40;
    std::vector<std::string> tag_lexicon = {"PER", "LOC"};  // entity types
    int doc_count = 300;
    int doc_length = 60;
    std::uint64_t seed = 1;

    void validate() const;  // throws ConfigError on a degenerate spec
};

struct SyntheticData {
    std::vector<std::string> mlm_text;               // one document per entry
    std::vector<ClassificationExample> topic_data;   // text -> topic id
    std::vector<TaggingExample> tagging_data;
    std::vector<std::string> tag_names;              // "O", "B-PER", "I-PER", ...
    int num_topics = 0;
};

// Topic vocabularies are disjoint and Zipf-weighted; entity names are 1-3
// tokens whose surfaces encode their own BIO tag, so gold tags are
// recoverable from tokens alone. Identical output for identical spec.
SyntheticData generate_synthetic_corpus(const SyntheticSpec& spec);

// Ids to keep when trimming the vocabulary to size n: the five specials
// plus the n-5 most frequent ids measured on the given corpus (frequency
// descending, ties lexicographic on surface form); list order defines the
// new id space. Throws ConfigError on n < 5 or n > current vocab size.
std::vector<int> select_top_tokens(const Tokenizer& tokenizer, const Corpus& corpus, int n);

// Deterministic shuffled split into train/dev/test by fractions.
template <typename Example>
struct TaskSplit {
    std::vector<Example> train;
    std::vector<Example> dev;
    std::vector<Example> test;
};
TaskSplit<ClassificationExample> split_examples(std::vector<ClassificationExample> examples,
                                                double dev_frac, double test_frac, std::uint64_t seed);
TaskSplit<TaggingExample> split_examples(std::vector<TaggingExample> examples, double dev_frac,
                                         double test_frac, std::uint64_t seed);

}  // namespace shrinkpipe
