#include "hybridcap/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "hybridcap/error.hpp"

namespace hybridcap {

namespace {

constexpr char kJoin = '\x1f';

struct OrderStats {
    std::size_t matches = 0;
    std::size_t total = 0;
};

std::size_t closest_ref_length(std::size_t hyp_len, const std::vector<Tokens>& refs) {
    std::size_t best = refs.front().size();
    for (const auto& r : refs) {
        const auto d = [&](std::size_t len) {
            return len > hyp_len ? len - hyp_len : hyp_len - len;
        };
        if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    return best;
}

double brevity_penalty(std::size_t hyp_len, std::size_t ref_len) {
    if (hyp_len == 0) return 0.0;
    if (hyp_len > ref_len) return 1.0;
    return std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
}

BleuScore combine(const std::vector<OrderStats>& stats, std::size_t hyp_len, std::size_t ref_len,
                  Smoothing smoothing) {
    BleuScore score;
    score.precisions.assign(stats.size(), 0.0);
    score.brevity_penalty = brevity_penalty(hyp_len, ref_len);
    if (hyp_len == 0) return score;

    double log_sum = 0.0;
    int used = 0;
    int zero_orders = 0;
    bool collapsed = false;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        const auto& s = stats[i];
        if (s.total == 0) continue;
        ++used;
        double p = static_cast<double>(s.matches) / static_cast<double>(s.total);
        if (s.matches == 0) {
            if (smoothing == Smoothing::kExponential && i > 0) {
                ++zero_orders;
                p = std::ldexp(1.0, -zero_orders) / static_cast<double>(s.total);
            } else {
                collapsed = true;
            }
        }
        score.precisions[i] = p;
        if (p > 0.0) log_sum += std::log(p);
    }
    score.orders_used = used;
    if (collapsed || used == 0) return score;
    score.value = score.brevity_penalty * std::exp(log_sum / used);
    return score;
}

}  // namespace

NGramCounts::NGramCounts(const Tokens& tokens, int order) : order_(order) {
    if (order < 1) throw Error("n-gram order must be >= 1");
    const auto n = static_cast<std::size_t>(order);
    if (tokens.size() < n) return;
    std::map<std::string, std::size_t> counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (std::size_t j = 1; j < n; ++j) {
            key.push_back(kJoin);
            key += tokens[i + j];
        }
        ++counts[key];
        ++total_;
    }
    entries_.assign(counts.begin(), counts.end());
}

std::size_t NGramCounts::clipped_against(const NGramCounts& reference) const {
    std::size_t matches = 0;
    auto a = entries_.begin();
    auto b = reference.entries_.begin();
    while (a != entries_.end() && b != reference.entries_.end()) {
        int cmp = a->first.compare(b->first);
        if (cmp < 0) {
            ++a;
        } else if (cmp > 0) {
            ++b;
        } else {
            matches += std::min(a->second, b->second);
            ++a;
            ++b;
        }
    }
    return matches;
}

NGramProfile::NGramProfile(const Tokens& tokens, int max_order) : length_(tokens.size()) {
    for (int n = 1; n <= max_order; ++n) orders_.emplace_back(tokens, n);
}

PrecisionCounts modified_precision(const Tokens& hypothesis, const std::vector<Tokens>& references,
                                   int n) {
    NGramCounts hyp(hypothesis, n);
    std::map<std::string, std::size_t> max_ref;
    for (const auto& ref : references) {
        NGramCounts rc(ref, n);
        for (const auto& [key, count] : rc.entries()) {
            auto& slot = max_ref[key];
            slot = std::max(slot, count);
        }
    }
    PrecisionCounts out;
    out.total = hyp.total();
    for (const auto& [key, count] : hyp.entries()) {
        auto it = max_ref.find(key);
        if (it != max_ref.end()) out.clipped_matches += std::min(count, it->second);
    }
    return out;
}

BleuScore sentence_bleu(const Tokens& hypothesis, const std::vector<Tokens>& references,
                        int max_order, Smoothing smoothing) {
    if (max_order < 1) throw Error("BLEU max order must be >= 1");
    if (references.empty()) throw Error("sentence BLEU needs at least one reference");
    std::vector<OrderStats> stats;
    for (int n = 1; n <= max_order; ++n) {
        auto pc = modified_precision(hypothesis, references, n);
        stats.push_back({pc.clipped_matches, pc.total});
    }
    return combine(stats, hypothesis.size(), closest_ref_length(hypothesis.size(), references),
                   smoothing);
}

double sentence_bleu(const NGramProfile& hypothesis, const NGramProfile& reference, int max_order) {
    std::vector<OrderStats> stats;
    stats.reserve(static_cast<std::size_t>(max_order));
    for (int n = 1; n <= max_order; ++n) {
        const auto& h = hypothesis.order(n);
        stats.push_back({h.clipped_against(reference.order(n)), h.total()});
    }
    return combine(stats, hypothesis.length(), reference.length(), Smoothing::kExponential).value;
}

BleuScore corpus_bleu(const std::vector<BleuPair>& pairs, int max_order) {
    if (pairs.empty()) throw Error("corpus BLEU needs at least one pair");
    if (max_order < 1) throw Error("BLEU max order must be >= 1");
    std::vector<OrderStats> stats(static_cast<std::size_t>(max_order));
    std::size_t hyp_len = 0;
    std::size_t ref_len = 0;
    for (const auto& pair : pairs) {
        if (pair.references.empty()) throw Error("corpus BLEU pair without references");
        for (int n = 1; n <= max_order; ++n) {
            auto pc = modified_precision(pair.hypothesis, pair.references, n);
            stats[static_cast<std::size_t>(n - 1)].matches += pc.clipped_matches;
            stats[static_cast<std::size_t>(n - 1)].total += pc.total;
        }
        hyp_len += pair.hypothesis.size();
        ref_len += closest_ref_length(pair.hypothesis.size(), pair.references);
    }
    return combine(stats, hyp_len, ref_len, Smoothing::kNone);
}

std::vector<Tokens> reference_tokens(const std::vector<Caption>& captions) {
    std::vector<Tokens> out;
    out.reserve(captions.size());
    for (const auto& c : captions) out.push_back(c.tokens);
    return out;
}

}  // namespace hybridcap
