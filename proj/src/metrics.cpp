// SPDX-License-Identifier: Apache-2.0
//
// macro-F1 and BIO span-F1. Span extraction follows conlleval semantics:
// a span is closed by O, by any B-, or by an I- of a different type, and
// an I- with no open span of its type starts one (repair).

#include "shrinkpipe/metrics.hpp"

#include <map>
#include <set>
#include <tuple>

#include "shrinkpipe/errors.hpp"

namespace shrinkpipe {

double macro_f1(const std::vector<int>& gold, const std::vector<int>& pred) {
    if (gold.empty()) throw DataError("macro_f1: empty input");
    if (gold.size() != pred.size())
        throw DataError("macro_f1: gold has " + std::to_string(gold.size()) + " labels, pred " +
                        std::to_string(pred.size()));
    struct Counts {
        std::int64_t tp = 0, fp = 0, fn = 0;
    };
    std::map<int, Counts> per_class;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] == pred[i]) {
            ++per_class[gold[i]].tp;
        } else {
            ++per_class[pred[i]].fp;
            ++per_class[gold[i]].fn;
        }
    }
    double sum = 0.0;
    for (const auto& [label, c] : per_class) {
        const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
        sum += denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
    }
    return sum / static_cast<double>(per_class.size());
}

std::vector<Span> extract_spans(const std::vector<std::string>& tags) {
    std::vector<Span> spans;
    bool open = false;
    Span current;
    const auto close = [&]() {
        if (open) spans.push_back(current);
        open = false;
    };
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const std::string& tag = tags[i];
        if (tag == "O") {
            close();
            continue;
        }
        if (tag.size() < 3 || (tag[0] != 'B' && tag[0] != 'I') || tag[1] != '-')
            throw DataError("extract_spans: malformed tag '" + tag + "' at position " + std::to_string(i));
        const std::string type = tag.substr(2);
        if (tag[0] == 'B' || !open || current.type != type) {
            close();
            open = true;
            current.type = type;
            current.start = static_cast<int>(i);
            current.end = static_cast<int>(i);
        } else {
            current.end = static_cast<int>(i);
        }
    }
    close();
    return spans;
}

double span_f1(const std::vector<std::vector<std::string>>& gold,
               const std::vector<std::vector<std::string>>& pred) {
    if (gold.empty()) throw DataError("span_f1: empty input");
    if (gold.size() != pred.size())
        throw DataError("span_f1: gold has " + std::to_string(gold.size()) + " sequences, pred " +
                        std::to_string(pred.size()));
    std::int64_t tp = 0, gold_total = 0, pred_total = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i].size() != pred[i].size())
            throw DataError("span_f1: sequence " + std::to_string(i) + " length mismatch (" +
                            std::to_string(gold[i].size()) + " vs " + std::to_string(pred[i].size()) + ")");
        std::set<std::tuple<std::string, int, int>> gold_spans;
        for (const Span& s : extract_spans(gold[i])) gold_spans.emplace(s.type, s.start, s.end);
        std::int64_t matched = 0;
        std::int64_t n_pred = 0;
        for (const Span& s : extract_spans(pred[i])) {
            ++n_pred;
            if (gold_spans.count({s.type, s.start, s.end}) > 0) ++matched;
        }
        tp += matched;
        gold_total += static_cast<std::int64_t>(gold_spans.size());
        pred_total += n_pred;
    }
    if (gold_total == 0 && pred_total == 0) return 1.0;  // nothing to find, nothing claimed
    if (tp == 0) return 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(pred_total);
    const double recall = static_cast<double>(tp) / static_cast<double>(gold_total);
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace shrinkpipe
