#include "hybridcap/knn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>

#include <json.hpp>

#include "hybridcap/error.hpp"
#include "hybridcap/hash.hpp"

namespace hybridcap {

namespace {

constexpr int kSimOrder = 4;
constexpr const char* kManifestMagic = "hybridcap-knn-index";
constexpr int kManifestVersion = 1;

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw Error("cosine similarity dimension mismatch: " + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw Error("zero-norm feature vector");
    double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(c, -1.0, 1.0);
}

NeighborSet find_neighbors(const ImageRecord& query, std::span<const ImageRecord> index,
                           std::size_t k) {
    if (k < 1) throw Error("k must be >= 1");
    NeighborSet out;
    out.query_id = query.image_id;
    std::vector<Neighbor> all;
    all.reserve(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i].image_id == query.image_id) continue;
        all.push_back({index[i].image_id, cosine_similarity(query.features, index[i].features), i});
    }
    if (all.empty()) throw Error("empty kNN index");
    auto by_rank = [](const Neighbor& a, const Neighbor& b) {
        if (a.cosine != b.cosine) return a.cosine > b.cosine;
        return a.image_id < b.image_id;
    };
    if (all.size() < k) {
        out.truncated = true;
        k = all.size();
    }
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), by_rank);
    all.resize(k);
    out.neighbors = std::move(all);
    return out;
}

CandidateSet gather_candidates(const NeighborSet& neighbors, std::span<const ImageRecord> index) {
    CandidateSet set;
    for (std::size_t rank = 0; rank < neighbors.neighbors.size(); ++rank) {
        const auto& rec = index[neighbors.neighbors[rank].index];
        for (std::size_t r = 0; r < rec.references.size(); ++r) {
            set.candidates.push_back({rec.references[r], rank, r});
        }
    }
    return set;
}

std::vector<std::vector<double>> similarity_matrix(const CandidateSet& candidates) {
    const std::size_t n = candidates.candidates.size();
    std::vector<NGramProfile> profiles;
    profiles.reserve(n);
    for (const auto& c : candidates.candidates) profiles.emplace_back(c.caption.tokens, kSimOrder);
    std::vector<std::vector<double>> sim(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j) sim[i][j] = sentence_bleu(profiles[i], profiles[j], kSimOrder);
        }
    }
    return sim;
}

ConsensusResult consensus_caption(const CandidateSet& candidates, std::size_t m) {
    const std::size_t n = candidates.candidates.size();
    if (n == 0) throw Error("consensus over an empty candidate set");
    if (m < 1) throw Error("consensus subset size m must be >= 1");

    const auto sim = similarity_matrix(candidates);
    const std::size_t m_used = std::min(m, n - 1);

    ConsensusResult best;
    best.m_used = m_used;
    bool have_best = false;
    std::vector<double> row;
    for (std::size_t i = 0; i < n; ++i) {
        row.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) row.push_back(sim[i][j]);
        }
        const auto top = row.begin() + static_cast<std::ptrdiff_t>(m_used);
        std::partial_sort(row.begin(), top, row.end(), std::greater<>());
        double score = 0.0;
        for (auto it = row.begin(); it != top; ++it) score += *it;
        if (!have_best || score > best.raw_score) {
            best.raw_score = score;
            best.candidate_index = i;
            have_best = true;
        }
    }
    best.caption = candidates.candidates[best.candidate_index].caption;
    best.avg_similarity = m_used == 0 ? 0.0 : best.raw_score / static_cast<double>(m_used);
    return best;
}

double sc_feature(const NeighborSet& neighbors) {
    double sum = 0.0;
    for (const auto& nb : neighbors.neighbors) sum += nb.cosine;
    return sum;
}

// --------------------------------------------------------------- KnnCaptioner

KnnCaptioner::KnnCaptioner(std::vector<ImageRecord> index, std::size_t k, std::size_t m)
    : index_(std::move(index)), k_(k), m_(m) {
    if (index_.empty()) throw Error("empty kNN index");
    if (k_ < 1) throw Error("k must be >= 1");
    if (m_ < 1) throw Error("m must be >= 1");
    feature_dim_ = index_.front().features.size();
    for (const auto& rec : index_) {
        if (rec.features.size() != feature_dim_) {
            throw Error("feature dimension mismatch in kNN index: expected " +
                        std::to_string(feature_dim_) + ", image '" + rec.image_id + "' has " +
                        std::to_string(rec.features.size()));
        }
        if (rec.references.empty()) {
            throw Error("kNN index image '" + rec.image_id + "' has no captions");
        }
    }
}

KnnOutput KnnCaptioner::caption(const ImageRecord& query) const {
    KnnOutput out;
    out.neighbors = find_neighbors(query, index_, k_);
    out.consensus = consensus_caption(gather_candidates(out.neighbors, index_), m_);
    out.sc = sc_feature(out.neighbors);
    return out;
}

std::string KnnCaptioner::corpus_hash() const {
    Fnv1a h;
    for (const auto& rec : index_) {
        h.update(rec.image_id);
        h.update(std::string_view("\t", 1));
        for (double v : rec.features) h.update(v);
        for (const auto& ref : rec.references) {
            h.update(join_tokens(ref.tokens));
            h.update(std::string_view("\n", 1));
        }
    }
    return h.hex();
}

void save_knn_index(const KnnCaptioner& knn, const std::string& features_path,
                    const std::string& manifest_path) {
    std::string lines;
    for (const auto& rec : knn.index()) {
        nlohmann::ordered_json j;
        j["image_id"] = rec.image_id;
        j["features"] = rec.features;
        lines += j.dump();
        lines.push_back('\n');
    }
    write_file(features_path, lines);

    nlohmann::ordered_json manifest;
    manifest["magic"] = kManifestMagic;
    manifest["version"] = kManifestVersion;
    manifest["k"] = knn.k();
    manifest["m"] = knn.m();
    manifest["feature_dim"] = knn.feature_dim();
    manifest["num_images"] = knn.index().size();
    manifest["corpus_hash"] = knn.corpus_hash();
    write_file(manifest_path, manifest.dump(2) + "\n");
}

KnnCaptioner load_knn_index(const std::string& features_path, const std::string& manifest_path,
                            const Corpus& corpus) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest_path, 1, std::string("invalid manifest: ") + e.what());
    }
    if (manifest.value("magic", "") != kManifestMagic ||
        manifest.value("version", 0) != kManifestVersion) {
        throw Error(manifest_path + ": not a kNN index manifest (or unsupported version)");
    }
    auto features = read_features(features_path);
    std::vector<ImageRecord> index;
    index.reserve(features.size());
    for (auto& [id, vec] : features) {
        const ImageRecord* rec = corpus.find(id);
        if (!rec) throw Error("kNN index image '" + id + "' is not in the corpus");
        index.push_back(ImageRecord{id, std::move(vec), rec->references});
    }
    KnnCaptioner knn(std::move(index), manifest.at("k").get<std::size_t>(),
                     manifest.at("m").get<std::size_t>());
    if (knn.feature_dim() != manifest.at("feature_dim").get<std::size_t>()) {
        throw Error(manifest_path + ": feature dimension differs from index file");
    }
    if (knn.corpus_hash() != manifest.at("corpus_hash").get<std::string>()) {
        throw Error(manifest_path + ": corpus hash mismatch; rerun prepare");
    }
    return knn;
}

}  // namespace hybridcap
