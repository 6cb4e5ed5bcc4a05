#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hybridcap/corpus.hpp"

namespace hybridcap {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Longest caption in words (START/END excluded); also the decoders' step limit.
inline constexpr std::size_t kMaxCaptionLength = 35;

struct NicHyperParams {
    int embed_dim = 64;
    int hidden_dim = 64;
    double learning_rate = 0.1;
    // Learning rate is multiplied by this when an epoch fails to improve.
    double lr_decay = 0.5;
    int epochs = 20;
    double clip_norm = 5.0;
    std::uint64_t seed = 0;
};

struct ParamBlock {
    const char* name;
    Eigen::Map<MatrixXd> values;
};

struct ConstParamBlock {
    const char* name;
    Eigen::Map<const MatrixXd> values;
};

struct NicParameters {
    MatrixXd image_proj;   // E x D
    VectorXd image_bias;   // E
    MatrixXd embedding;    // V x E, one row per token id
    MatrixXd lstm_weight;  // 4H x (E + H); gate blocks ordered input, forget, output, cell
    VectorXd lstm_bias;    // 4H
    MatrixXd out_weight;   // V x H
    VectorXd out_bias;     // V

    int feature_dim() const { return static_cast<int>(image_proj.cols()); }
    int embed_dim() const { return static_cast<int>(image_proj.rows()); }
    int hidden_dim() const { return static_cast<int>(lstm_bias.size() / 4); }
    int vocab_size() const { return static_cast<int>(out_bias.size()); }

    static NicParameters zeros(int feature_dim, int vocab_size, int embed_dim, int hidden_dim);
    // Xavier-uniform weights, zero biases except the forget gate (1.0).
    static NicParameters initialize(int feature_dim, int vocab_size, int embed_dim,
                                    int hidden_dim, std::uint64_t seed);

    // Every block in a fixed order; used for SGD, clipping and checkpoints.
    std::vector<ParamBlock> blocks();
    std::vector<ConstParamBlock> blocks() const;

    void check_consistent() const;
};

struct LstmState {
    VectorXd hidden;
    VectorXd cell;

    static LstmState zero(int hidden_dim);
};

struct StepOutput {
    LstmState state;
    VectorXd log_probs;
};

// One LSTM step followed by the output projection and log-softmax.
StepOutput forward_step(const NicParameters& params, const LstmState& state,
                        const VectorXd& input);

VectorXd project_image(const NicParameters& params, const std::vector<double>& features);

// State after consuming the image projection (step 0) and then START.
StepOutput prime_decoder(const NicParameters& params, const std::vector<double>& features);

// Log-softmax with barred ids removed from the normalization; barred entries
// come back as -infinity.
VectorXd masked_log_softmax(const VectorXd& log_probs, const std::vector<TokenId>& barred);

// Ids never emitted by the decoders: PAD, START, UNK.
const std::vector<TokenId>& barred_tokens();

// Summed negative log-likelihood of `ids` (START ... END) under teacher
// forcing. When `grad` is non-null it receives d loss / d params (same shapes).
double sequence_loss(const NicParameters& params, const std::vector<double>& features,
                     const IdSequence& ids, NicParameters* grad = nullptr);

struct TrainingExample {
    const std::vector<double>* features = nullptr;
    IdSequence ids;
};

struct TrainingReport {
    // Mean per-token loss of each epoch.
    std::vector<double> epoch_loss;
    std::vector<double> epoch_learning_rate;
};

NicParameters train_nic(const std::vector<TrainingExample>& examples, int vocab_size,
                        const NicHyperParams& hp, TrainingReport* report = nullptr);

// All reference captions of the given images, encoded.
std::vector<TrainingExample> make_training_examples(const std::vector<const ImageRecord*>& images,
                                                    const Vocabulary& vocab);

struct DecodedCaption {
    IdSequence ids;             // emitted ids, END included when emitted
    Tokens tokens;              // words only
    std::vector<double> token_log_probs;
    double total_log_prob = 0.0;
    double normalized_log_prob = 0.0;  // total / emitted ids
    bool finished = false;             // END was emitted
};

DecodedCaption decode_greedy(const NicParameters& params, const std::vector<double>& features,
                             const Vocabulary& vocab, std::size_t max_len = kMaxCaptionLength);

DecodedCaption decode_beam(const NicParameters& params, const std::vector<double>& features,
                           const Vocabulary& vocab, std::size_t beam,
                           std::size_t max_len = kMaxCaptionLength);

struct NicCheckpoint {
    NicParameters params;
    NicHyperParams hyper;
    std::string vocab_hash;
    std::vector<double> epoch_loss;
};

void save_nic(const NicCheckpoint& ckpt, const std::string& path);
NicCheckpoint load_nic(const std::string& path);

}  // namespace hybridcap
