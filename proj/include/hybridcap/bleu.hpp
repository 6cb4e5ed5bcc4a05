#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hybridcap/corpus.hpp"

namespace hybridcap {

struct PrecisionCounts {
    std::size_t clipped_matches = 0;
    std::size_t total = 0;
};

struct BleuScore {
    double value = 0.0;
    // Modified precision per order 1..N after smoothing (if any). Orders with
    // no hypothesis n-grams are reported as 0 and excluded from the mean.
    std::vector<double> precisions;
    double brevity_penalty = 1.0;
    // Orders that entered the geometric mean: min(N, hypothesis length).
    int orders_used = 0;
};

enum class Smoothing {
    kNone,
    // Zero-match orders get numerator 1/2^k, k counting zero orders so far.
    kExponential,
};

// Sorted n-gram -> count table for one order. Keys join tokens with '\x1f'.
class NGramCounts {
public:
    NGramCounts() = default;
    NGramCounts(const Tokens& tokens, int order);

    int order() const { return order_; }
    std::size_t total() const { return total_; }
    const std::vector<std::pair<std::string, std::size_t>>& entries() const { return entries_; }

    // Σ over own n-grams of min(own count, other count).
    std::size_t clipped_against(const NGramCounts& reference) const;

private:
    int order_ = 0;
    std::size_t total_ = 0;
    std::vector<std::pair<std::string, std::size_t>> entries_;
};

// Precomputed n-gram tables for orders 1..max_order; reused when the same
// caption is scored many times (consensus selection).
class NGramProfile {
public:
    NGramProfile() = default;
    NGramProfile(const Tokens& tokens, int max_order);

    std::size_t length() const { return length_; }
    int max_order() const { return static_cast<int>(orders_.size()); }
    const NGramCounts& order(int n) const { return orders_.at(static_cast<std::size_t>(n - 1)); }

private:
    std::size_t length_ = 0;
    std::vector<NGramCounts> orders_;
};

PrecisionCounts modified_precision(const Tokens& hypothesis, const std::vector<Tokens>& references,
                                   int n);

BleuScore sentence_bleu(const Tokens& hypothesis, const std::vector<Tokens>& references,
                        int max_order = 4, Smoothing smoothing = Smoothing::kExponential);

// Single-reference fast path over precomputed profiles.
double sentence_bleu(const NGramProfile& hypothesis, const NGramProfile& reference,
                     int max_order = 4);

struct BleuPair {
    Tokens hypothesis;
    std::vector<Tokens> references;
};

// Clipped matches and totals summed per order over the corpus; corpus-level
// brevity penalty; never smoothed.
BleuScore corpus_bleu(const std::vector<BleuPair>& pairs, int max_order = 4);

std::vector<Tokens> reference_tokens(const std::vector<Caption>& captions);

}  // namespace hybridcap
