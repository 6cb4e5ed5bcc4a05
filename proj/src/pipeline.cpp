#include "hybridcap/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "hybridcap/bleu.hpp"
#include "hybridcap/error.hpp"
#include "hybridcap/parallel.hpp"

namespace hybridcap {

namespace fs = std::filesystem;

namespace {

Corpus load_config_corpus(const RunConfig& config) {
    if (config.captions_path.empty() || config.features_path.empty() || config.splits_path.empty()) {
        throw Error("captions, features and splits paths are all required");
    }
    return load_corpus(config.captions_path, config.features_path, config.splits_path);
}

void require_output_dir(const RunConfig& config) {
    if (config.output_dir.empty()) throw Error("an output directory is required (--output)");
}

nlohmann::ordered_json tokens_json(const Tokens& tokens) { return join_tokens(tokens); }

Caption caption_from(const std::string& image_id, const std::string& text) {
    return Caption{image_id, tokenize(text)};
}

std::vector<ImageRecord> training_index(const Corpus& corpus) {
    std::vector<ImageRecord> index;
    for (const ImageRecord* rec : corpus.images_in(SplitName::kTrain)) index.push_back(*rec);
    if (index.empty()) throw Error("training split is empty");
    return index;
}

std::string sample_json(const GateSample& s) {
    nlohmann::ordered_json j;
    j["image_id"] = s.image_id;
    j["features"] = s.features.values;
    j["label"] = s.label;
    j["nic_bleu4"] = s.nic_bleu;
    j["knn_bleu4"] = s.knn_bleu;
    return j.dump();
}

}  // namespace

std::string artifact_path(const RunConfig& config, const char* name) {
    return (fs::path(config.output_dir) / name).string();
}

SplitName parse_split(const std::string& name) {
    if (name == "train") return SplitName::kTrain;
    if (name == "val" || name == "validation") return SplitName::kValidation;
    if (name == "test") return SplitName::kTest;
    throw Error("unknown split '" + name + "' (expected train, val or test)");
}

const char* split_label(SplitName split) {
    switch (split) {
        case SplitName::kTrain: return "train";
        case SplitName::kValidation: return "val";
        case SplitName::kTest: return "test";
    }
    return "?";
}

std::string format_score(double x100) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", x100);
    return buf;
}

// ------------------------------------------------------------------- prepare

PrepareResult cmd_prepare(const RunConfig& config) {
    config.validate();
    require_output_dir(config);
    // Check inputs before touching the output directory.
    const Corpus corpus = load_config_corpus(config);
    const Vocabulary vocab = build_vocabulary(corpus.training_captions(), config.cutoff);
    if (vocab.size() == static_cast<std::size_t>(Vocabulary::kNumSpecial)) {
        throw Error("empty vocabulary: no training token occurs more than " +
                    std::to_string(config.cutoff) + " times");
    }
    const KnnCaptioner knn(training_index(corpus), config.k, config.m);

    fs::create_directories(config.output_dir);
    write_file(artifact_path(config, artifacts::kVocabulary), vocab.serialize());
    save_knn_index(knn, artifact_path(config, artifacts::kKnnFeatures),
                   artifact_path(config, artifacts::kKnnManifest));

    PrepareResult result{vocab.size(), knn.index().size(), vocab.hash(), knn.corpus_hash()};
    nlohmann::ordered_json record;
    record["config"] = config.to_json();
    record["vocab_size"] = result.vocab_size;
    record["vocab_hash"] = result.vocab_hash;
    record["corpus_hash"] = result.corpus_hash;
    record["feature_dim"] = corpus.feature_dim;
    record["splits"] = {{"train", corpus.split.train.size()},
                        {"val", corpus.split.validation.size()},
                        {"test", corpus.split.test.size()}};
    write_file(artifact_path(config, artifacts::kPrepareRecord), record.dump(2) + "\n");
    return result;
}

// --------------------------------------------------------------------- train

TrainResult cmd_train(const RunConfig& config) {
    config.validate();
    require_output_dir(config);
    const std::uint64_t seed = config.require_seed();

    const Corpus corpus = load_config_corpus(config);
    const Vocabulary vocab = Vocabulary::deserialize(
        read_file(artifact_path(config, artifacts::kVocabulary)), artifact_path(config, artifacts::kVocabulary));
    KnnCaptioner stored = load_knn_index(artifact_path(config, artifacts::kKnnFeatures),
                                         artifact_path(config, artifacts::kKnnManifest), corpus);
    const KnnCaptioner knn(stored.index(), config.k, config.m);

    const auto validation = corpus.images_in(SplitName::kValidation);
    if (validation.empty()) throw Error("no gate training data: validation split is empty");

    NicHyperParams hp = config.nic;
    hp.seed = seed;
    TrainingReport nic_report;
    const auto examples = make_training_examples(corpus.images_in(SplitName::kTrain), vocab);
    NicCheckpoint ckpt{train_nic(examples, static_cast<int>(vocab.size()), hp, &nic_report), hp,
                       vocab.hash(), nic_report.epoch_loss};
    save_nic(ckpt, artifact_path(config, artifacts::kNicCheckpoint));

    TrainResult result;
    result.nic_epoch_loss = nic_report.epoch_loss;

    std::vector<std::string> skipped;
    const auto samples = make_labels(validation, ckpt.params, vocab, knn, config.beam, &skipped, config.jobs);
    for (const auto& id : skipped) result.warnings.push_back("skipped image without references: " + id);
    if (samples.empty()) throw Error("no gate training data: no labelled validation images");
    std::string lines;
    for (const auto& s : samples) lines += sample_json(s) + "\n";
    write_file(artifact_path(config, artifacts::kGateSamples), lines);

    GateHyperParams ghp = config.gate;
    ghp.seed = seed;
    GateTrainingReport gate_report;
    const GateModel gate = train_gate(samples, ghp, &gate_report);
    save_gate(gate, vocab.hash(), artifact_path(config, artifacts::kGateCheckpoint));
    result.warnings.insert(result.warnings.end(), gate_report.warnings.begin(), gate_report.warnings.end());

    result.gate_samples = samples.size();
    result.gate_accuracy = gate_accuracy(gate, samples);
    result.majority_baseline = majority_baseline(samples);

    nlohmann::ordered_json report;
    report["config"] = config.to_json();
    report["nic_epoch_loss"] = result.nic_epoch_loss;
    report["nic_epoch_learning_rate"] = nic_report.epoch_learning_rate;
    report["gate_samples"] = result.gate_samples;
    std::size_t ones = 0;
    for (const auto& s : samples) ones += static_cast<std::size_t>(s.label);
    report["gate_label_counts"] = {{"nic", samples.size() - ones}, {"knn", ones}};
    report["gate_training_accuracy"] = result.gate_accuracy;
    report["gate_majority_baseline"] = result.majority_baseline;
    report["gate_final_loss"] = gate.final_loss;
    report["warnings"] = result.warnings;
    write_file(artifact_path(config, artifacts::kTrainReport), report.dump(2) + "\n");
    return result;
}

// ------------------------------------------------------------------- caption

LoadedPipeline load_pipeline(const RunConfig& config) {
    config.validate();
    require_output_dir(config);
    Corpus corpus = load_config_corpus(config);
    const std::string vocab_path = artifact_path(config, artifacts::kVocabulary);
    Vocabulary vocab = Vocabulary::deserialize(read_file(vocab_path), vocab_path);
    KnnCaptioner stored = load_knn_index(artifact_path(config, artifacts::kKnnFeatures),
                                         artifact_path(config, artifacts::kKnnManifest), corpus);
    KnnCaptioner knn(stored.index(), config.k, config.m);
    NicCheckpoint nic = load_nic(artifact_path(config, artifacts::kNicCheckpoint));
    if (nic.vocab_hash != vocab.hash()) throw Error("NIC checkpoint was trained on a different vocabulary");
    if (nic.params.vocab_size() != static_cast<int>(vocab.size())) {
        throw Error("NIC checkpoint vocabulary size mismatch");
    }
    std::string gate_vocab;
    GateModel gate = load_gate(artifact_path(config, artifacts::kGateCheckpoint), &gate_vocab);
    if (gate_vocab != vocab.hash()) throw Error("gate checkpoint was trained on a different vocabulary");
    return {std::move(corpus), std::move(vocab), std::move(knn), std::move(nic), gate};
}

std::vector<CaptionRecord> caption_images(const LoadedPipeline& p, const RunConfig& config,
                                          const CaptionRequest& request) {
    std::vector<CaptionRecord> records;
    std::vector<ImageRecord> queries;
    std::vector<std::size_t> slot;  // record index per query

    auto add_query = [&](ImageRecord rec) {
        slot.push_back(records.size());
        records.push_back({rec.image_id, std::nullopt, {}});
        queries.push_back(std::move(rec));
    };

    if (!request.features_file.empty()) {
        for (auto& [id, vec] : read_features(request.features_file)) {
            if (vec.size() != p.corpus.feature_dim) {
                records.push_back({id, std::nullopt,
                                   "feature dimension " + std::to_string(vec.size()) + " != " +
                                       std::to_string(p.corpus.feature_dim)});
                continue;
            }
            add_query(ImageRecord{id, std::move(vec), {}});
        }
    }
    for (const auto& id : request.image_ids) {
        const ImageRecord* rec = p.corpus.find(id);
        if (!rec) {
            records.push_back({id, std::nullopt, "unknown image id"});
            continue;
        }
        add_query(*rec);
    }
    if (request.split) {
        for (const ImageRecord* rec : p.corpus.images_in(*request.split)) add_query(*rec);
    }

    parallel_for(queries.size(), config.jobs, [&](std::size_t i) {
        CaptionRecord& out = records[slot[i]];
        try {
            const ModelOutputs mo = run_models(p.nic.params, p.vocab, p.knn, queries[i], config.beam);
            Caption nic{queries[i].image_id, mo.nic.tokens};
            Caption knn{queries[i].image_id, mo.knn.consensus.caption.tokens};
            HybridDecision d = decide(p.gate, mo.features, nic, knn);
            if (request.force_gate) {
                d.predicted = *request.force_gate;
                d.caption = d.predicted == 0 ? d.nic_caption : d.knn_caption;
            }
            out.decision = std::move(d);
        } catch (const Error& e) {
            out.error = e.what();
        }
    });

    std::stable_sort(records.begin(), records.end(),
                     [](const CaptionRecord& a, const CaptionRecord& b) { return a.image_id < b.image_id; });
    return records;
}

std::string caption_record_json(const CaptionRecord& r) {
    nlohmann::ordered_json j;
    j["image_id"] = r.image_id;
    if (!r.decision) {
        j["error"] = r.error;
        return j.dump();
    }
    const HybridDecision& d = *r.decision;
    j["nic_caption"] = tokens_json(d.nic_caption.tokens);
    j["knn_caption"] = tokens_json(d.knn_caption.tokens);
    j["features"] = d.features.values;
    j["probability"] = d.probability;
    j["predicted"] = d.predicted;
    j["final"] = d.predicted == 0 ? "nic" : "knn";
    j["final_caption"] = tokens_json(d.caption.tokens);
    return j.dump();
}

HybridDecision decision_from_json(const nlohmann::json& j) {
    HybridDecision d;
    d.image_id = j.at("image_id").get<std::string>();
    d.nic_caption = caption_from(d.image_id, j.at("nic_caption").get<std::string>());
    d.knn_caption = caption_from(d.image_id, j.at("knn_caption").get<std::string>());
    auto f = j.at("features").get<std::vector<double>>();
    if (f.size() != kNumGateFeatures) throw Error("decision record needs 5 features");
    std::copy(f.begin(), f.end(), d.features.values.begin());
    d.probability = j.at("probability").get<double>();
    d.predicted = j.at("predicted").get<int>();
    d.caption = d.predicted == 0 ? d.nic_caption : d.knn_caption;
    return d;
}

std::vector<CaptionRecord> cmd_caption(const RunConfig& config, const CaptionRequest& request,
                                       std::ostream& out) {
    const LoadedPipeline p = load_pipeline(config);
    auto records = caption_images(p, config, request);
    for (const auto& r : records) out << caption_record_json(r) << '\n';
    return records;
}

// ------------------------------------------------------------------ evaluate

const ModelRow& EvalReport::row(const std::string& name) const {
    for (const auto& r : rows) {
        if (r.name == name) return r;
    }
    throw Error("report has no row '" + name + "'");
}

EvalReport build_report(const std::vector<HybridDecision>& decisions, const Corpus& corpus,
                        const std::string& split) {
    if (decisions.empty()) throw Error("cannot evaluate an empty split");
    EvalReport report;
    report.split = split;
    report.images = decisions.size();
    report.decisions = decisions;

    std::vector<BleuPair> nic, knn, hybrid, oracle;
    double nic_sum = 0, knn_sum = 0, hybrid_sum = 0, oracle_sum = 0;
    std::size_t agree = 0, oracle_ones = 0;
    for (const auto& d : decisions) {
        const ImageRecord& rec = corpus.image(d.image_id);
        if (rec.references.empty()) throw Error("image '" + d.image_id + "' has no references");
        const auto refs = reference_tokens(rec.references);
        const double nb = sentence_bleu(d.nic_caption.tokens, refs, 4).value;
        const double kb = sentence_bleu(d.knn_caption.tokens, refs, 4).value;
        const int label = label_from_scores(nb, kb);
        const Caption& best = label == 0 ? d.nic_caption : d.knn_caption;
        nic.push_back({d.nic_caption.tokens, refs});
        knn.push_back({d.knn_caption.tokens, refs});
        hybrid.push_back({d.caption.tokens, refs});
        oracle.push_back({best.tokens, refs});
        nic_sum += nb;
        knn_sum += kb;
        hybrid_sum += d.predicted == 0 ? nb : kb;
        oracle_sum += std::max(nb, kb);
        agree += d.predicted == label ? 1 : 0;
        oracle_ones += static_cast<std::size_t>(label);
    }
    const double n = static_cast<double>(decisions.size());
    auto row = [&](const char* name, const std::vector<BleuPair>& pairs, double sum) {
        return ModelRow{name, 100.0 * corpus_bleu(pairs, 1).value, 100.0 * corpus_bleu(pairs, 4).value,
                        sum / n};
    };
    report.rows.push_back(row("kNN", knn, knn_sum));
    report.rows.push_back(row("NIC", nic, nic_sum));
    report.rows.push_back(row("Hybrid", hybrid, hybrid_sum));
    report.rows.push_back(row("Oracle hybrid", oracle, oracle_sum));
    report.gate_accuracy = static_cast<double>(agree) / n;
    report.majority_baseline =
        static_cast<double>(std::max(oracle_ones, decisions.size() - oracle_ones)) / n;
    return report;
}

nlohmann::ordered_json report_json(const EvalReport& report, const RunConfig& config) {
    nlohmann::ordered_json j;
    j["split"] = report.split;
    j["images"] = report.images;
    j["config"] = config.to_json();
    auto& rows = j["models"];
    rows = nlohmann::ordered_json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"model", r.name},
                        {"bleu1", r.bleu1},
                        {"bleu4", r.bleu4},
                        {"bleu1_display", format_score(r.bleu1)},
                        {"bleu4_display", format_score(r.bleu4)},
                        {"mean_sentence_bleu4", r.mean_sentence_bleu4}});
    }
    j["gate_accuracy"] = report.gate_accuracy;
    j["majority_baseline"] = report.majority_baseline;
    auto& decisions = j["decisions"];
    decisions = nlohmann::ordered_json::array();
    for (const auto& d : report.decisions) {
        decisions.push_back(nlohmann::ordered_json::parse(caption_record_json({d.image_id, d, {}})));
    }
    return j;
}

std::string render_report_table(const EvalReport& report) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-16s %8s %8s %14s\n", "Model", "BLEU-1", "BLEU-4", "mean sBLEU-4");
    out << line;
    for (const auto& r : report.rows) {
        std::snprintf(line, sizeof line, "%-16s %8s %8s %14.4f\n", r.name.c_str(),
                      format_score(r.bleu1).c_str(), format_score(r.bleu4).c_str(), r.mean_sentence_bleu4);
        out << line;
    }
    std::snprintf(line, sizeof line, "gate accuracy %.4f (majority baseline %.4f) on %zu %s images\n",
                  report.gate_accuracy, report.majority_baseline, report.images, report.split.c_str());
    out << line;
    return out.str();
}

EvalReport cmd_evaluate(const RunConfig& config, SplitName split, std::ostream& out) {
    const LoadedPipeline p = load_pipeline(config);
    CaptionRequest request;
    request.split = split;
    const auto records = caption_images(p, config, request);
    std::vector<HybridDecision> decisions;
    for (const auto& r : records) {
        if (!r.decision) throw Error("captioning failed for '" + r.image_id + "': " + r.error);
        decisions.push_back(*r.decision);
    }
    EvalReport report = build_report(decisions, p.corpus, split_label(split));
    const std::string path =
        artifact_path(config, ("eval_" + std::string(split_label(split)) + ".json").c_str());
    write_file(path, report_json(report, config).dump(2) + "\n");
    out << render_report_table(report);
    return report;
}

// ---------------------------------------------------------------- sweep-beam

std::string render_beam_table(const std::vector<BeamRow>& rows) {
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof line, "%-14s %8s %8s %16s\n", "Beam Size (i)", "BLEU-1", "BLEU-4",
                  "mean log p(S|I)");
    out << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-14zu %8s %8s %16.4f\n", r.beam, format_score(r.bleu1).c_str(),
                      format_score(r.bleu4).c_str(), r.mean_total_log_prob);
        out << line;
    }
    return out.str();
}

std::vector<BeamRow> cmd_sweep_beam(const RunConfig& config, SplitName split,
                                    const std::vector<std::size_t>& beams, std::ostream& out) {
    config.validate();
    require_output_dir(config);
    const Corpus corpus = load_config_corpus(config);
    const std::string vocab_path = artifact_path(config, artifacts::kVocabulary);
    const Vocabulary vocab = Vocabulary::deserialize(read_file(vocab_path), vocab_path);
    const NicCheckpoint nic = load_nic(artifact_path(config, artifacts::kNicCheckpoint));
    if (nic.vocab_hash != vocab.hash()) throw Error("NIC checkpoint was trained on a different vocabulary");
    const auto images = corpus.images_in(split);
    if (images.empty()) throw Error("cannot evaluate an empty split");

    std::vector<BeamRow> rows;
    for (std::size_t beam : beams) {
        std::vector<DecodedCaption> decoded(images.size());
        parallel_for(images.size(), config.jobs, [&](std::size_t i) {
            decoded[i] = decode_beam(nic.params, images[i]->features, vocab, beam);
        });
        std::vector<BleuPair> pairs;
        double logp = 0.0;
        for (std::size_t i = 0; i < images.size(); ++i) {
            pairs.push_back({decoded[i].tokens, reference_tokens(images[i]->references)});
            logp += decoded[i].total_log_prob;
        }
        rows.push_back({beam, 100.0 * corpus_bleu(pairs, 1).value, 100.0 * corpus_bleu(pairs, 4).value,
                        logp / static_cast<double>(images.size())});
    }

    nlohmann::ordered_json j;
    j["split"] = split_label(split);
    j["config"] = config.to_json();
    auto& jr = j["rows"];
    jr = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        jr.push_back({{"beam", r.beam},
                      {"bleu1", r.bleu1},
                      {"bleu4", r.bleu4},
                      {"mean_total_log_prob", r.mean_total_log_prob}});
    }
    write_file(artifact_path(config, ("beam_sweep_" + std::string(split_label(split)) + ".json").c_str()),
               j.dump(2) + "\n");
    out << render_beam_table(rows);
    return rows;
}

}  // namespace hybridcap
