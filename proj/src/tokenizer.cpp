// SPDX-License-Identifier: Apache-2.0
//
// Word-level tokenizer. UNK absorbs the frequency mass of every surface
// form that missed the vocabulary cut, so the frequency table always sums
// to the training corpus token count.

#include "shrinkpipe/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

#include "json.hpp"
#include "shrinkpipe/errors.hpp"

namespace shrinkpipe {

namespace {

const char* const kSpecialSurfaces[kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }
bool is_space_byte(unsigned char c) { return std::isspace(c) != 0; }

}  // namespace

std::vector<std::string> Tokenizer::word_split(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_space_byte(c)) {
            ++i;
            continue;
        }
        if (is_word_byte(c)) {
            std::size_t j = i + 1;
            while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
            out.emplace_back(text.substr(i, j - i));
            i = j;
        } else {
            out.emplace_back(text.substr(i, 1));
            ++i;
        }
    }
    return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& documents, int vocab_size) {
    if (vocab_size < kNumSpecials)
        throw ConfigError("build_tokenizer: vocab size " + std::to_string(vocab_size) + " < " +
                          std::to_string(kNumSpecials) + " specials");
    std::unordered_map<std::string, std::int64_t> counts;
    std::int64_t total = 0;
    for (const std::string& doc : documents) {
        for (std::string& w : word_split(doc)) {
            ++counts[std::move(w)];
            ++total;
        }
    }
    if (total == 0) throw DataError("build_tokenizer: empty corpus");

    std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Tokenizer t;
    for (const char* s : kSpecialSurfaces) t.tokens_.emplace_back(s);
    t.frequencies_.assign(kNumSpecials, 0);
    const std::size_t keep = std::min(ranked.size(), static_cast<std::size_t>(vocab_size - kNumSpecials));
    std::int64_t kept_mass = 0;
    for (std::size_t i = 0; i < keep; ++i) {
        t.tokens_.push_back(ranked[i].first);
        t.frequencies_.push_back(ranked[i].second);
        kept_mass += ranked[i].second;
    }
    t.frequencies_[kUnkId] = total - kept_mass;  // out-of-vocab mass
    t.index_tokens();
    return t;
}

void Tokenizer::index_tokens() {
    ids_.clear();
    ids_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
            throw DataError("tokenizer: duplicate surface form '" + tokens_[i] + "'");
    }
}

int Tokenizer::id_of(std::string_view token) const {
    const auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Tokenizer::token_of(int id) const {
    if (id < 0 || id >= vocab_size())
        throw DataError("tokenizer: id " + std::to_string(id) + " outside vocab of " +
                        std::to_string(vocab_size()));
    return tokens_[static_cast<std::size_t>(id)];
}

std::int64_t Tokenizer::frequency(int id) const {
    if (id < 0 || id >= vocab_size())
        throw DataError("tokenizer: id " + std::to_string(id) + " outside vocab of " +
                        std::to_string(vocab_size()));
    return frequencies_[static_cast<std::size_t>(id)];
}

std::int64_t Tokenizer::total_frequency() const {
    return std::accumulate(frequencies_.begin(), frequencies_.end(), std::int64_t{0});
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> out;
    for (const std::string& w : word_split(text)) out.push_back(id_of(w));
    return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (!out.empty()) out += ' ';
        out += token_of(id);
    }
    return out;
}

std::string Tokenizer::to_json_string() const {
    nlohmann::json j;
    j["version"] = 1;
    j["specials"] = nlohmann::json::array();
    for (const char* s : kSpecialSurfaces) j["specials"].push_back(s);
    j["tokens"] = tokens_;
    j["frequencies"] = frequencies_;
    return j.dump(2);
}

Tokenizer Tokenizer::from_json_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("tokenizer.json: " + std::string(e.what()));
    }
    try {
        if (j.at("version").get<int>() != 1) throw IoError("tokenizer.json: unsupported version");
        return from_rows(j.at("tokens").get<std::vector<std::string>>(),
                         j.at("frequencies").get<std::vector<std::int64_t>>());
    } catch (const nlohmann::json::exception& e) {
        throw IoError("tokenizer.json: " + std::string(e.what()));
    }
}

Tokenizer Tokenizer::from_rows(std::vector<std::string> tokens, std::vector<std::int64_t> frequencies) {
    if (tokens.size() != frequencies.size())
        throw DataError("tokenizer: " + std::to_string(tokens.size()) + " tokens but " +
                        std::to_string(frequencies.size()) + " frequencies");
    if (tokens.size() < kNumSpecials) throw DataError("tokenizer: fewer rows than special tokens");
    for (int i = 0; i < kNumSpecials; ++i)
        if (tokens[static_cast<std::size_t>(i)] != kSpecialSurfaces[i])
            throw DataError("tokenizer: id " + std::to_string(i) + " must be " + kSpecialSurfaces[i]);
    Tokenizer t;
    t.tokens_ = std::move(tokens);
    t.frequencies_ = std::move(frequencies);
    t.index_tokens();
    return t;
}

}  // namespace shrinkpipe
