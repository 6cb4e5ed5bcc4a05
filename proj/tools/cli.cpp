#include "cli.hpp"

#include <fstream>
#include <memory>
#include <utility>

#include <CLI11.hpp>
#include <json.hpp>

#include "hybridcap/config.hpp"
#include "hybridcap/error.hpp"
#include "hybridcap/fixture.hpp"
#include "hybridcap/pipeline.hpp"

namespace hybridcap {

namespace {

struct Overrides {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> settings;

    RunConfig resolve() const {
        RunConfig config;
        if (!config_path.empty()) config = load_config_file(config_path);
        for (const auto& [key, value] : settings) apply_setting(config, key, value);
        config.validate();
        return config;
    }
};

void add_run_options(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--config", ov.config_path, "key = value config file");
    const std::pair<const char*, const char*> keyed[] = {
        {"--captions", "captions"},         {"--features", "features"},
        {"--splits", "splits"},             {"--output", "output"},
        {"--seed", "seed"},                 {"--k", "k"},
        {"--m", "m"},                       {"--beam", "beam"},
        {"--cutoff", "cutoff"},             {"--jobs", "jobs"},
        {"--nic-embed", "nic.embed_dim"},   {"--nic-hidden", "nic.hidden_dim"},
        {"--nic-lr", "nic.learning_rate"},  {"--nic-epochs", "nic.epochs"},
        {"--nic-clip", "nic.clip_norm"},    {"--gate-lr", "gate.learning_rate"},
        {"--gate-epochs", "gate.epochs"},   {"--gate-l2", "gate.l2"},
    };
    for (const auto& [flag, key] : keyed) {
        std::string k = key;
        cmd->add_option_function<std::string>(
            flag, [&ov, k](const std::string& v) { ov.settings.emplace_back(k, v); },
            std::string("overrides config key '") + key + "'");
    }
}

void print_error(std::ostream& err, const std::string& command, const std::string& message) {
    nlohmann::ordered_json j;
    j["error"] = message;
    j["command"] = command;
    err << j.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hybrid kNN + NIC image captioner with a logistic-regression gate"};
    app.require_subcommand(1);

    Overrides ov;
    std::string split_name = "test";
    std::vector<std::string> ids;
    std::string features_file;
    std::string caption_out;
    int force_gate = -1;
    std::vector<std::size_t> beams = kBeamSweep;
    FixtureOptions fixture;
    std::string fixture_dir;

    auto* prepare = app.add_subcommand("prepare", "build the vocabulary and the kNN index");
    add_run_options(prepare, ov);

    auto* train = app.add_subcommand("train", "train NIC, label the validation split, train the gate");
    add_run_options(train, ov);

    auto* caption = app.add_subcommand("caption", "emit one JSON decision line per image");
    add_run_options(caption, ov);
    auto* split_opt = caption->add_option("--split", split_name, "train, val or test");
    caption->add_option("--ids", ids, "image ids (comma separated or repeated)")->delimiter(',');
    caption->add_option("--features-file", features_file, "JSONL feature vectors of new images");
    caption->add_option("--force-gate", force_gate, "always pick 0 (NIC) or 1 (kNN)")
        ->check(CLI::IsMember({0, 1}));
    caption->add_option("--out", caption_out, "write lines here instead of stdout");

    auto* evaluate = app.add_subcommand("evaluate", "corpus BLEU for kNN, NIC, hybrid and oracle gate");
    add_run_options(evaluate, ov);
    evaluate->add_option("--split", split_name, "train, val or test")->capture_default_str();

    auto* sweep = app.add_subcommand("sweep-beam", "NIC corpus BLEU over beam sizes");
    add_run_options(sweep, ov);
    sweep->add_option("--split", split_name, "train, val or test")->capture_default_str();
    sweep->add_option("--beams", beams, "beam sizes")->delimiter(',')->capture_default_str();

    auto* make_fixture = app.add_subcommand("make-fixture", "write the synthetic fixture corpus");
    make_fixture->add_option("--output", fixture_dir, "target directory")->required();
    make_fixture->add_option("--images", fixture.num_images)->capture_default_str();
    make_fixture->add_option("--dim", fixture.feature_dim)->capture_default_str();
    make_fixture->add_option("--val", fixture.num_validation)->capture_default_str();
    make_fixture->add_option("--test", fixture.num_test)->capture_default_str();
    make_fixture->add_option("--seed", fixture.seed)->capture_default_str();
    make_fixture->add_option("--prototypes", fixture.prototypes)->capture_default_str();
    make_fixture->add_option("--prototype-share", fixture.prototype_share)->capture_default_str();
    make_fixture->add_option("--noise", fixture.noise)->capture_default_str();

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        if (command == "make-fixture") {
            write_fixture(fixture_dir, fixture);
            out << "wrote fixture to " << fixture_dir << '\n';
            return 0;
        }
        const RunConfig config = ov.resolve();
        if (command == "prepare") {
            const auto r = cmd_prepare(config);
            out << "vocabulary: " << r.vocab_size << " tokens (hash " << r.vocab_hash << ")\n"
                << "kNN index: " << r.index_size << " training images (hash " << r.corpus_hash << ")\n";
        } else if (command == "train") {
            const auto r = cmd_train(config);
            for (const auto& w : r.warnings) err << "warning: " << w << '\n';
            out << "NIC epochs: " << r.nic_epoch_loss.size();
            if (!r.nic_epoch_loss.empty()) out << ", final mean token loss " << r.nic_epoch_loss.back();
            out << "\ngate samples: " << r.gate_samples << ", training accuracy " << r.gate_accuracy
                << " (majority baseline " << r.majority_baseline << ")\n";
        } else if (command == "caption") {
            CaptionRequest request;
            request.image_ids = ids;
            request.features_file = features_file;
            if (force_gate >= 0) request.force_gate = force_gate;
            if (split_opt->count() > 0 || (ids.empty() && features_file.empty())) {
                request.split = parse_split(split_name);
            }
            std::unique_ptr<std::ofstream> file;
            std::ostream* sink = &out;
            if (!caption_out.empty()) {
                file = std::make_unique<std::ofstream>(caption_out, std::ios::trunc);
                if (!*file) throw Error("cannot write " + caption_out);
                sink = file.get();
            }
            const auto records = cmd_caption(config, request, *sink);
            for (const auto& r : records) {
                if (!r.decision) err << "warning: " << r.image_id << ": " << r.error << '\n';
            }
        } else if (command == "evaluate") {
            cmd_evaluate(config, parse_split(split_name), out);
        } else if (command == "sweep-beam") {
            cmd_sweep_beam(config, parse_split(split_name), beams, out);
        }
        return 0;
    } catch (const std::exception& e) {
        print_error(err, command, e.what());
        return 1;
    }
}

}  // namespace hybridcap
