#include "hybridcap/gate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "hybridcap/bleu.hpp"
#include "hybridcap/error.hpp"
#include "hybridcap/parallel.hpp"

namespace hybridcap {

namespace {

constexpr const char* kGateMagic = "hybridcap-gate-checkpoint";
constexpr int kGateVersion = 1;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double logit(const std::array<double, kNumGateFeatures>& w, double b, const GateFeatures& f) {
    double z = b;
    for (std::size_t j = 0; j < kNumGateFeatures; ++j) z += w[j] * f[j];
    return z;
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

bool GateFeatures::in_unit_range() const {
    return std::all_of(values.begin(), values.end(),
                       [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; });
}

double GateModel::probability(const GateFeatures& f) const { return sigmoid(logit(weights, bias, f)); }

int GateModel::predict(const GateFeatures& f) const { return probability(f) > 0.5 ? 1 : 0; }

GateFeatures extract_features(const DecodedCaption& decoded, const ConsensusResult& consensus,
                              double sc, std::size_t k) {
    GateFeatures f;
    f.values[0] = clamp01(std::exp(decoded.normalized_log_prob));
    f.values[1] = clamp01(consensus.avg_similarity);
    f.values[2] = k == 0 ? 0.0 : clamp01(sc / (5.0 * static_cast<double>(k)));
    f.values[3] = clamp01(static_cast<double>(decoded.tokens.size()) / kLengthNormalizer);
    f.values[4] = clamp01(static_cast<double>(consensus.caption.tokens.size()) / kLengthNormalizer);
    return f;
}

int label_from_scores(double nic_bleu, double knn_bleu) { return nic_bleu >= knn_bleu ? 0 : 1; }

ModelOutputs run_models(const NicParameters& nic, const Vocabulary& vocab, const KnnCaptioner& knn,
                        const ImageRecord& image, std::size_t beam) {
    ModelOutputs out;
    out.nic = beam <= 1 ? decode_greedy(nic, image.features, vocab)
                        : decode_beam(nic, image.features, vocab, beam);
    out.knn = knn.caption(image);
    out.features = extract_features(out.nic, out.knn.consensus, out.knn.sc,
                                    out.knn.neighbors.neighbors.size());
    return out;
}

GateSample make_sample(const std::string& image_id, const ModelOutputs& outputs,
                       const std::vector<Caption>& references) {
    if (references.empty()) throw Error("image '" + image_id + "' has no references");
    const auto refs = reference_tokens(references);
    GateSample s;
    s.image_id = image_id;
    s.features = outputs.features;
    s.nic_bleu = sentence_bleu(outputs.nic.tokens, refs, 4).value;
    s.knn_bleu = sentence_bleu(outputs.knn.consensus.caption.tokens, refs, 4).value;
    s.label = label_from_scores(s.nic_bleu, s.knn_bleu);
    if (!s.features.in_unit_range()) {
        throw Error("gate feature out of [0,1] for image '" + image_id + "'");
    }
    return s;
}

std::vector<GateSample> make_labels(const std::vector<const ImageRecord*>& images,
                                    const NicParameters& nic, const Vocabulary& vocab,
                                    const KnnCaptioner& knn, std::size_t beam,
                                    std::vector<std::string>* skipped, unsigned jobs) {
    std::vector<const ImageRecord*> usable;
    for (const ImageRecord* rec : images) {
        if (rec->references.empty()) {
            if (skipped) skipped->push_back(rec->image_id);
            continue;
        }
        usable.push_back(rec);
    }
    std::vector<GateSample> samples(usable.size());
    parallel_for(usable.size(), jobs, [&](std::size_t i) {
        const ImageRecord& rec = *usable[i];
        samples[i] = make_sample(rec.image_id, run_models(nic, vocab, knn, rec, beam), rec.references);
    });
    return samples;
}

double gate_loss(const std::array<double, kNumGateFeatures>& weights, double bias,
                 const std::vector<GateSample>& samples, double l2,
                 std::array<double, kNumGateFeatures + 1>* grad) {
    if (samples.empty()) throw Error("no gate training data");
    const double n = static_cast<double>(samples.size());
    double loss = 0.0;
    if (grad) grad->fill(0.0);
    for (const auto& s : samples) {
        const double z = logit(weights, bias, s.features);
        const double y = static_cast<double>(s.label);
        loss += softplus(z) - y * z;
        if (grad) {
            const double err = sigmoid(z) - y;
            for (std::size_t j = 0; j < kNumGateFeatures; ++j) (*grad)[j] += err * s.features[j];
            (*grad)[kNumGateFeatures] += err;
        }
    }
    loss /= n;
    double wsq = 0.0;
    for (double w : weights) wsq += w * w;
    loss += 0.5 * l2 * wsq;
    if (grad) {
        for (std::size_t j = 0; j < kNumGateFeatures; ++j) (*grad)[j] = (*grad)[j] / n + l2 * weights[j];
        (*grad)[kNumGateFeatures] /= n;
    }
    return loss;
}

GateModel train_gate(const std::vector<GateSample>& samples, const GateHyperParams& hp,
                     GateTrainingReport* report) {
    if (samples.empty()) throw Error("no gate training data");
    GateModel model;
    model.hyper = hp;

    std::size_t ones = 0;
    for (const auto& s : samples) {
        if (s.label != 0 && s.label != 1) throw Error("gate label must be 0 or 1");
        ones += static_cast<std::size_t>(s.label);
    }
    const std::size_t zeros = samples.size() - ones;
    if (samples.size() < 2 || ones == 0 || zeros == 0) {
        model.degenerate = true;
        model.bias = std::log((static_cast<double>(ones) + 0.5) / (static_cast<double>(zeros) + 0.5));
        model.final_loss = gate_loss(model.weights, model.bias, samples, hp.l2);
        if (report) {
            report->warnings.push_back("gate training data has a single class; using a constant predictor");
            report->loss_history.push_back(model.final_loss);
        }
        return model;
    }

    std::mt19937_64 rng(hp.seed);
    std::uniform_real_distribution<double> init(-0.01, 0.01);
    for (auto& w : model.weights) w = init(rng);

    std::array<double, kNumGateFeatures + 1> grad{};
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        const double loss = gate_loss(model.weights, model.bias, samples, hp.l2, &grad);
        if (!std::isfinite(loss)) throw Error("gate training diverged at epoch " + std::to_string(epoch + 1));
        if (report) report->loss_history.push_back(loss);
        for (std::size_t j = 0; j < kNumGateFeatures; ++j) model.weights[j] -= hp.learning_rate * grad[j];
        model.bias -= hp.learning_rate * grad[kNumGateFeatures];
    }
    model.final_loss = gate_loss(model.weights, model.bias, samples, hp.l2);
    if (report) report->loss_history.push_back(model.final_loss);
    return model;
}

double gate_accuracy(const GateModel& model, const std::vector<GateSample>& samples) {
    if (samples.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& s : samples) correct += model.predict(s.features) == s.label ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

double majority_baseline(const std::vector<GateSample>& samples) {
    if (samples.empty()) return 0.0;
    std::size_t ones = 0;
    for (const auto& s : samples) ones += static_cast<std::size_t>(s.label);
    const std::size_t major = std::max(ones, samples.size() - ones);
    return static_cast<double>(major) / static_cast<double>(samples.size());
}

HybridDecision decide(const GateModel& model, const GateFeatures& features, const Caption& nic,
                      const Caption& knn) {
    HybridDecision d;
    d.image_id = nic.image_id.empty() ? knn.image_id : nic.image_id;
    d.nic_caption = nic;
    d.knn_caption = knn;
    d.features = features;
    d.probability = model.probability(features);
    d.predicted = d.probability > 0.5 ? 1 : 0;
    d.caption = d.predicted == 0 ? nic : knn;
    return d;
}

void save_gate(const GateModel& model, const std::string& vocab_hash, const std::string& path) {
    nlohmann::ordered_json j;
    j["magic"] = kGateMagic;
    j["version"] = kGateVersion;
    j["weights"] = model.weights;
    j["bias"] = model.bias;
    j["hyperparams"] = {{"learning_rate", model.hyper.learning_rate},
                        {"epochs", model.hyper.epochs},
                        {"l2", model.hyper.l2}};
    j["seed"] = model.hyper.seed;
    j["vocab_hash"] = vocab_hash;
    j["final_loss"] = model.final_loss;
    j["degenerate"] = model.degenerate;
    write_file(path, j.dump(2) + "\n");
}

GateModel load_gate(const std::string& path, std::string* vocab_hash) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path, 1, std::string("invalid gate checkpoint: ") + e.what());
    }
    if (!j.is_object() || j.value("magic", "") != kGateMagic || j.value("version", 0) != kGateVersion) {
        throw Error(path + ": not a gate checkpoint (or unsupported version)");
    }
    try {
        GateModel model;
        auto w = j.at("weights").get<std::vector<double>>();
        if (w.size() != kNumGateFeatures) throw Error(path + ": gate needs 5 weights");
        std::copy(w.begin(), w.end(), model.weights.begin());
        model.bias = j.at("bias");
        const auto& h = j.at("hyperparams");
        model.hyper.learning_rate = h.at("learning_rate");
        model.hyper.epochs = h.at("epochs");
        model.hyper.l2 = h.at("l2");
        model.hyper.seed = j.at("seed");
        model.final_loss = j.at("final_loss");
        model.degenerate = j.value("degenerate", false);
        if (vocab_hash) *vocab_hash = j.at("vocab_hash");
        for (double v : model.weights) {
            if (!std::isfinite(v)) throw Error(path + ": non-finite gate weight");
        }
        if (!std::isfinite(model.bias)) throw Error(path + ": non-finite gate bias");
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path, 1, std::string("malformed gate checkpoint: ") + e.what());
    }
}

}  // namespace hybridcap
