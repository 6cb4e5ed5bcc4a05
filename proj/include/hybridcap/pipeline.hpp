#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hybridcap/config.hpp"
#include "hybridcap/corpus.hpp"
#include "hybridcap/gate.hpp"
#include "hybridcap/knn.hpp"
#include "hybridcap/nic.hpp"

namespace hybridcap {

// Artifact names inside the output directory.
namespace artifacts {
inline constexpr const char* kVocabulary = "vocab.tsv";
inline constexpr const char* kKnnFeatures = "knn_index.jsonl";
inline constexpr const char* kKnnManifest = "knn_manifest.json";
inline constexpr const char* kPrepareRecord = "prepare.json";
inline constexpr const char* kNicCheckpoint = "nic.json";
inline constexpr const char* kGateCheckpoint = "gate.json";
inline constexpr const char* kGateSamples = "gate_samples.jsonl";
inline constexpr const char* kTrainReport = "train_report.json";
}  // namespace artifacts

std::string artifact_path(const RunConfig& config, const char* name);

SplitName parse_split(const std::string& name);
const char* split_label(SplitName split);

struct PrepareResult {
    std::size_t vocab_size = 0;
    std::size_t index_size = 0;
    std::string vocab_hash;
    std::string corpus_hash;
};

PrepareResult cmd_prepare(const RunConfig& config);

struct TrainResult {
    std::vector<double> nic_epoch_loss;
    std::size_t gate_samples = 0;
    double gate_accuracy = 0.0;
    double majority_baseline = 0.0;
    std::vector<std::string> warnings;
};

TrainResult cmd_train(const RunConfig& config);

// Everything a trained pipeline needs to caption an image.
struct LoadedPipeline {
    Corpus corpus;
    Vocabulary vocab;
    KnnCaptioner knn;
    NicCheckpoint nic;
    GateModel gate;
};

LoadedPipeline load_pipeline(const RunConfig& config);

struct CaptionRequest {
    std::optional<SplitName> split;
    std::vector<std::string> image_ids;
    // External JSONL features file; images need not be in the corpus.
    std::string features_file;
    // Overrides the gate prediction with a constant 0 or 1.
    std::optional<int> force_gate;
};

struct CaptionRecord {
    std::string image_id;
    std::optional<HybridDecision> decision;
    std::string error;
};

std::vector<CaptionRecord> caption_images(const LoadedPipeline& pipeline, const RunConfig& config,
                                          const CaptionRequest& request);

// One JSON object per line.
std::string caption_record_json(const CaptionRecord& record);
HybridDecision decision_from_json(const nlohmann::json& j);

std::vector<CaptionRecord> cmd_caption(const RunConfig& config, const CaptionRequest& request,
                                       std::ostream& out);

struct ModelRow {
    std::string name;
    double bleu1 = 0.0;  // corpus, x100
    double bleu4 = 0.0;  // corpus, x100
    double mean_sentence_bleu4 = 0.0;  // in [0,1]
};

struct EvalReport {
    std::string split;
    std::size_t images = 0;
    std::vector<ModelRow> rows;  // NIC, kNN, Hybrid, Oracle hybrid
    double gate_accuracy = 0.0;
    double majority_baseline = 0.0;
    std::vector<HybridDecision> decisions;

    const ModelRow& row(const std::string& name) const;
};

// Pure function of the decision stream and the references.
EvalReport build_report(const std::vector<HybridDecision>& decisions, const Corpus& corpus,
                        const std::string& split);

nlohmann::ordered_json report_json(const EvalReport& report, const RunConfig& config);
std::string render_report_table(const EvalReport& report);

EvalReport cmd_evaluate(const RunConfig& config, SplitName split, std::ostream& out);

struct BeamRow {
    std::size_t beam = 0;
    double bleu1 = 0.0;
    double bleu4 = 0.0;
    double mean_total_log_prob = 0.0;
};

inline const std::vector<std::size_t> kBeamSweep{1, 3, 5, 7};

std::vector<BeamRow> cmd_sweep_beam(const RunConfig& config, SplitName split,
                                    const std::vector<std::size_t>& beams, std::ostream& out);
std::string render_beam_table(const std::vector<BeamRow>& rows);

std::string format_score(double x100);

}  // namespace hybridcap
