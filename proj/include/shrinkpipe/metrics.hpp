// SPDX-License-Identifier: Apache-2.0
//
// Classification and sequence-labeling metrics: macro-averaged F1 over
// label ids and exact-span micro F1 over BIO tag sequences (conlleval
// semantics, including repair of I- tags that open a span).

#pragma once

#include <string>
#include <vector>

namespace shrinkpipe {

// Unweighted mean of per-class F1; classes absent from both gold and pred
// are excluded. Empty or length-mismatched input raises DataError.
double macro_f1(const std::vector<int>& gold, const std::vector<int>& pred);

struct Span {
    std::string type;
    int start = 0;
    int end = 0;  // inclusive
    bool operator==(const Span&) const = default;
};

// BIO span extraction with seqeval-style repair: I-X after O, start of
// sequence, or a different type opens a new X span. Malformed tags raise
// DataError naming the position.
std::vector<Span> extract_spans(const std::vector<std::string>& tags);

// Micro F1 over exact (type, start, end) matches across aligned sequences.
double span_f1(const std::vector<std::vector<std::string>>& gold,
               const std::vector<std::vector<std::string>>& pred);

}  // namespace shrinkpipe
