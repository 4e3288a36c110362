// SPDX-License-Identifier: Apache-2.0
//
// Deterministic word-level tokenizer. Five special tokens own ids 0-4;
// surface forms get dense ids 5..V-1 in descending training-corpus
// frequency with lexicographic tie-breaking.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace shrinkpipe {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kNumSpecials = 5;

class Tokenizer {
public:
    // Top vocab_size-5 surface forms by frequency from one-document-per-
    // entry text. Throws DataError on an empty corpus, ConfigError on
    // vocab_size < 5.
    static Tokenizer build(const std::vector<std::string>& documents, int vocab_size);

    // Whitespace splits; runs of alphanumeric/UTF-8 bytes form words;
    // other punctuation becomes single-character tokens.
    static std::vector<std::string> word_split(std::string_view text);

    int vocab_size() const { return static_cast<int>(tokens_.size()); }
    int id_of(std::string_view token) const;  // kUnkId when absent
    const std::string& token_of(int id) const;
    std::int64_t frequency(int id) const;
    std::int64_t total_frequency() const;

    std::vector<int> encode(std::string_view text) const;
    std::string decode(const std::vector<int>& ids) const;

    std::string to_json_string() const;
    static Tokenizer from_json_string(const std::string& text);

    // Rebuild from explicit id-order token/frequency arrays (trimming).
    static Tokenizer from_rows(std::vector<std::string> tokens, std::vector<std::int64_t> frequencies);

private:
    Tokenizer() = default;
    void index_tokens();

    std::vector<std::string> tokens_;        // id -> surface
    std::vector<std::int64_t> frequencies_;  // id -> training count
    std::unordered_map<std::string, int> ids_;
};

}  // namespace shrinkpipe
