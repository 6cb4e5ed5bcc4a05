#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hybridcap/bleu.hpp"
#include "hybridcap/corpus.hpp"

namespace hybridcap {

inline constexpr std::size_t kDefaultNeighbors = 30;
inline constexpr std::size_t kDefaultConsensusSubset = 50;

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct Neighbor {
    std::string image_id;
    double cosine = 0.0;
    // Position in the index the search ran over.
    std::size_t index = 0;
};

struct NeighborSet {
    std::string query_id;
    // Cosine descending, ties by image id ascending.
    std::vector<Neighbor> neighbors;
    // Set when the index held fewer than k eligible images.
    bool truncated = false;
};

NeighborSet find_neighbors(const ImageRecord& query, std::span<const ImageRecord> index,
                           std::size_t k);

struct Candidate {
    Caption caption;
    std::size_t neighbor_rank = 0;
    std::size_t reference_index = 0;
};

struct CandidateSet {
    std::vector<Candidate> candidates;
};

// References of every neighbor, in neighbor order.
CandidateSet gather_candidates(const NeighborSet& neighbors, std::span<const ImageRecord> index);

struct ConsensusResult {
    Caption caption;
    std::size_t candidate_index = 0;
    double raw_score = 0.0;
    double avg_similarity = 0.0;
    std::size_t m_used = 0;
};

// Consensus caption: each candidate scores the sum of its m largest
// similarities to the other candidates (smoothed BLEU-4, candidate as
// hypothesis, other as sole reference); highest score wins, lowest index on
// ties.
ConsensusResult consensus_caption(const CandidateSet& candidates, std::size_t m);

// The pairwise similarity matrix consensus_caption works from; row i holds
// Sim(candidate i, candidate j).
std::vector<std::vector<double>> similarity_matrix(const CandidateSet& candidates);

// Sum of the neighbor cosines (unnormalized).
double sc_feature(const NeighborSet& neighbors);

// Everything the gate needs from one kNN query.
struct KnnOutput {
    NeighborSet neighbors;
    ConsensusResult consensus;
    double sc = 0.0;
};

// Immutable kNN captioner over the training images.
class KnnCaptioner {
public:
    KnnCaptioner(std::vector<ImageRecord> index, std::size_t k, std::size_t m);

    std::size_t k() const { return k_; }
    std::size_t m() const { return m_; }
    std::size_t feature_dim() const { return feature_dim_; }
    const std::vector<ImageRecord>& index() const { return index_; }

    KnnOutput caption(const ImageRecord& query) const;

    // Fingerprint of ids, feature values and references.
    std::string corpus_hash() const;

private:
    std::vector<ImageRecord> index_;
    std::size_t k_;
    std::size_t m_;
    std::size_t feature_dim_ = 0;
};

// Persisted index: a features JSONL holding the training images and a JSON
// manifest {k, m, feature_dim, corpus_hash, ...}. References come from the
// captions file at load time.
void save_knn_index(const KnnCaptioner& knn, const std::string& features_path,
                    const std::string& manifest_path);
KnnCaptioner load_knn_index(const std::string& features_path, const std::string& manifest_path,
                            const Corpus& corpus);

}  // namespace hybridcap
