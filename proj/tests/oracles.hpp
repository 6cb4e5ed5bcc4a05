#pragma once

// Independent reference implementations used only by the test suites. They
// follow the textbook definitions literally (linear scans, full enumeration)
// and share no code path with the library beyond the public data types.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hybridcap/corpus.hpp"

namespace oracle {

using Tokens = hybridcap::Tokens;
using NGram = std::vector<std::string>;

inline std::vector<NGram> ngrams(const Tokens& t, std::size_t n) {
    std::vector<NGram> out;
    for (std::size_t i = 0; i + n <= t.size(); ++i) out.emplace_back(t.begin() + i, t.begin() + i + n);
    return out;
}

inline std::size_t occurrences(const std::vector<NGram>& list, const NGram& g) {
    return static_cast<std::size_t>(std::count(list.begin(), list.end(), g));
}

struct Counts {
    std::size_t matches = 0;
    std::size_t total = 0;
};

inline Counts clipped(const Tokens& hyp, const std::vector<Tokens>& refs, std::size_t n) {
    const auto h = ngrams(hyp, n);
    Counts c;
    c.total = h.size();
    std::vector<NGram> seen;
    for (const auto& g : h) {
        if (std::find(seen.begin(), seen.end(), g) != seen.end()) continue;
        seen.push_back(g);
        std::size_t max_ref = 0;
        for (const auto& r : refs) max_ref = std::max(max_ref, occurrences(ngrams(r, n), g));
        c.matches += std::min(occurrences(h, g), max_ref);
    }
    return c;
}

inline std::size_t closest_length(std::size_t hyp_len, const std::vector<Tokens>& refs) {
    std::size_t best = 0;
    long best_diff = -1;
    for (const auto& r : refs) {
        const long diff = std::labs(static_cast<long>(r.size()) - static_cast<long>(hyp_len));
        if (best_diff < 0 || diff < best_diff || (diff == best_diff && r.size() < best)) {
            best_diff = diff;
            best = r.size();
        }
    }
    return best;
}

// Geometric mean over orders 1..N that have at least one hypothesis n-gram.
inline double bleu_from_counts(const std::vector<Counts>& per_order, std::size_t hyp_len,
                               std::size_t ref_len, bool smooth) {
    if (hyp_len == 0) return 0.0;
    double log_sum = 0.0;
    int used = 0;
    int zeros = 0;
    for (std::size_t i = 0; i < per_order.size(); ++i) {
        const auto& c = per_order[i];
        if (c.total == 0) continue;
        ++used;
        double p;
        if (c.matches > 0) {
            p = static_cast<double>(c.matches) / static_cast<double>(c.total);
        } else if (smooth && i > 0) {
            ++zeros;
            p = 1.0 / (std::pow(2.0, zeros) * static_cast<double>(c.total));
        } else {
            return 0.0;
        }
        log_sum += std::log(p);
    }
    if (used == 0) return 0.0;
    const double bp = hyp_len > ref_len
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return bp * std::exp(log_sum / used);
}

inline double sentence_bleu(const Tokens& hyp, const std::vector<Tokens>& refs, int max_order,
                            bool smooth) {
    std::vector<Counts> per;
    for (int n = 1; n <= max_order; ++n) per.push_back(clipped(hyp, refs, static_cast<std::size_t>(n)));
    return bleu_from_counts(per, hyp.size(), closest_length(hyp.size(), refs), smooth);
}

struct Pair {
    Tokens hyp;
    std::vector<Tokens> refs;
};

inline double corpus_bleu(const std::vector<Pair>& pairs, int max_order) {
    std::vector<Counts> per(static_cast<std::size_t>(max_order));
    std::size_t hyp_len = 0, ref_len = 0;
    for (const auto& p : pairs) {
        for (int n = 1; n <= max_order; ++n) {
            auto c = clipped(p.hyp, p.refs, static_cast<std::size_t>(n));
            per[static_cast<std::size_t>(n - 1)].matches += c.matches;
            per[static_cast<std::size_t>(n - 1)].total += c.total;
        }
        hyp_len += p.hyp.size();
        ref_len += closest_length(p.hyp.size(), p.refs);
    }
    return bleu_from_counts(per, hyp_len, ref_len, false);
}

// Visits every size-m subset of {0..n-1}.
inline void for_each_subset(std::size_t n, std::size_t m,
                            const std::function<void(const std::vector<std::size_t>&)>& fn) {
    std::vector<std::size_t> idx(m);
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t start, std::size_t depth) {
        if (depth == m) {
            fn(idx);
            return;
        }
        for (std::size_t i = start; i + (m - depth) <= n; ++i) {
            idx[depth] = i;
            rec(i + 1, depth + 1);
        }
    };
    rec(0, 0);
}

struct ConsensusAnswer {
    std::vector<double> best_subset_score;  // per candidate
    std::size_t winner = 0;                 // lowest index within tolerance of the max
    double winner_score = 0.0;
};

// Consensus by brute force: for each candidate, the best sum
// over every size-m subset of the other candidates.
inline ConsensusAnswer consensus(const std::vector<Tokens>& cands, std::size_t m, double tol = 1e-12) {
    const std::size_t n = cands.size();
    const std::size_t m_used = std::min(m, n - 1);
    ConsensusAnswer a;
    a.best_subset_score.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> sims;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) sims.push_back(sentence_bleu(cands[i], {cands[j]}, 4, true));
        }
        double best = -1.0;
        for_each_subset(sims.size(), m_used, [&](const std::vector<std::size_t>& subset) {
            std::vector<double> vals;
            for (auto s : subset) vals.push_back(sims[s]);
            std::sort(vals.begin(), vals.end(), std::greater<>());
            double total = 0.0;
            for (double v : vals) total += v;
            best = std::max(best, total);
        });
        a.best_subset_score[i] = best;
    }
    const double top = *std::max_element(a.best_subset_score.begin(), a.best_subset_score.end());
    for (std::size_t i = 0; i < n; ++i) {
        if (a.best_subset_score[i] >= top - tol) {
            a.winner = i;
            a.winner_score = a.best_subset_score[i];
            break;
        }
    }
    return a;
}

inline Tokens random_tokens(std::mt19937_64& rng, const std::vector<std::string>& words,
                            std::size_t min_len, std::size_t max_len) {
    std::uniform_int_distribution<std::size_t> len(min_len, max_len);
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
    Tokens t(len(rng));
    for (auto& w : t) w = words[pick(rng)];
    return t;
}

// Relative error with an absolute floor so exact zeros compare cleanly.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

}  // namespace oracle
