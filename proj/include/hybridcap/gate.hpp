#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hybridcap/corpus.hpp"
#include "hybridcap/knn.hpp"
#include "hybridcap/nic.hpp"

namespace hybridcap {

inline constexpr std::size_t kNumGateFeatures = 5;
// Caption-length normalizer, in words.
inline constexpr double kLengthNormalizer = 35.0;

// 0: NIC confidence exp(p*); 1: consensus average similarity;
// 2: S_c / (5k); 3: l1 / 35; 4: l2 / 35. All in [0, 1].
struct GateFeatures {
    std::array<double, kNumGateFeatures> values{};

    double operator[](std::size_t i) const { return values[i]; }
    bool in_unit_range() const;
};

struct GateSample {
    std::string image_id;
    GateFeatures features;
    int label = 0;
    // Per-model smoothed sentence BLEU-4 against the image's references.
    double nic_bleu = 0.0;
    double knn_bleu = 0.0;
};

struct GateHyperParams {
    double learning_rate = 0.5;
    int epochs = 10000;
    double l2 = 1e-4;
    std::uint64_t seed = 0;
};

struct GateModel {
    std::array<double, kNumGateFeatures> weights{};
    double bias = 0.0;
    GateHyperParams hyper;
    double final_loss = 0.0;
    // True when training saw a single class and fell back to a constant.
    bool degenerate = false;

    double probability(const GateFeatures& f) const;
    // 1 (kNN) only when the probability is strictly above one half.
    int predict(const GateFeatures& f) const;
};

GateFeatures extract_features(const DecodedCaption& decoded, const ConsensusResult& consensus,
                              double sc, std::size_t k);

// 0 when the NIC caption scores at least as well as the kNN caption.
int label_from_scores(double nic_bleu, double knn_bleu);

// Per-image outputs of both base models.
struct ModelOutputs {
    DecodedCaption nic;
    KnnOutput knn;
    GateFeatures features;
};

ModelOutputs run_models(const NicParameters& nic, const Vocabulary& vocab, const KnnCaptioner& knn,
                        const ImageRecord& image, std::size_t beam);

// Images without references are skipped (reported through `skipped`).
std::vector<GateSample> make_labels(const std::vector<const ImageRecord*>& images,
                                    const NicParameters& nic, const Vocabulary& vocab,
                                    const KnnCaptioner& knn, std::size_t beam,
                                    std::vector<std::string>* skipped = nullptr,
                                    unsigned jobs = 1);

GateSample make_sample(const std::string& image_id, const ModelOutputs& outputs,
                       const std::vector<Caption>& references);

// Mean cross-entropy plus (l2 / 2) * |w|^2. Gradient has the weights first,
// then the bias.
double gate_loss(const std::array<double, kNumGateFeatures>& weights, double bias,
                 const std::vector<GateSample>& samples, double l2,
                 std::array<double, kNumGateFeatures + 1>* grad = nullptr);

struct GateTrainingReport {
    std::vector<double> loss_history;  // loss before each step, then final
    std::vector<std::string> warnings;
};

GateModel train_gate(const std::vector<GateSample>& samples, const GateHyperParams& hp,
                     GateTrainingReport* report = nullptr);

double gate_accuracy(const GateModel& model, const std::vector<GateSample>& samples);
double majority_baseline(const std::vector<GateSample>& samples);

struct HybridDecision {
    std::string image_id;
    Caption nic_caption;
    Caption knn_caption;
    GateFeatures features;
    double probability = 0.0;
    int predicted = 0;
    Caption caption;
};

HybridDecision decide(const GateModel& model, const GateFeatures& features, const Caption& nic,
                      const Caption& knn);

void save_gate(const GateModel& model, const std::string& vocab_hash, const std::string& path);
GateModel load_gate(const std::string& path, std::string* vocab_hash = nullptr);

}  // namespace hybridcap
