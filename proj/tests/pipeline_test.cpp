#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "hybridcap/config.hpp"
#include "hybridcap/error.hpp"
#include "hybridcap/fixture.hpp"
#include "hybridcap/pipeline.hpp"

using namespace hybridcap;
namespace fs = std::filesystem;

namespace {

const std::string kFixture = HYBRIDCAP_FIXTURE_DIR;

RunConfig fixture_config(const std::string& out_name) {
    RunConfig c = load_config_file(kFixture + "/fixture.conf");
    c.nic.epochs = 4;
    c.gate.epochs = 2000;
    const auto out = fs::temp_directory_path() / ("hybridcap_pipeline_" + out_name);
    fs::remove_all(out);
    c.output_dir = out.string();
    return c;
}

std::string slurp(const RunConfig& c, const char* name) { return read_file(artifact_path(c, name)); }

// Prepared and trained once; shared by the read-only tests below.
const RunConfig& trained() {
    static const RunConfig config = [] {
        RunConfig c = fixture_config("shared");
        cmd_prepare(c);
        cmd_train(c);
        return c;
    }();
    return config;
}

}  // namespace

TEST_CASE("config files: comments, relative paths and unknown keys") {
    const auto dir = fs::temp_directory_path() / "hybridcap_config";
    fs::create_directories(dir);
    write_file((dir / "run.conf").string(),
               "# comment\ncaptions = c.txt\nfeatures=f.jsonl   # trailing\nsplits = s.txt\n"
               "seed = 3\nk = 7\nnic.hidden_dim = 12\ngate.l2 = 0.5\n");
    const auto c = load_config_file((dir / "run.conf").string());
    CHECK(c.captions_path == (dir / "c.txt").string());
    CHECK(c.features_path == (dir / "f.jsonl").string());
    CHECK(c.seed == 3u);
    CHECK(c.k == 7);
    CHECK(c.nic.hidden_dim == 12);
    CHECK(c.gate.l2 == 0.5);

    write_file((dir / "bad.conf").string(), "colour = blue\n");
    CHECK_THROWS_AS(load_config_file((dir / "bad.conf").string()), Error);
    write_file((dir / "bad2.conf").string(), "k = many\n");
    CHECK_THROWS_AS(load_config_file((dir / "bad2.conf").string()), Error);
}

TEST_CASE("fixture generation is deterministic and matches the bundled copy") {
    const auto files = generate_fixture(FixtureOptions{});
    CHECK(files.captions == read_file(kFixture + "/captions.txt"));
    CHECK(files.features == read_file(kFixture + "/features.jsonl"));
    CHECK(files.splits == read_file(kFixture + "/splits.txt"));
}

TEST_CASE("prepare is idempotent") {
    auto c = fixture_config("prepare");
    const auto a = cmd_prepare(c);
    const std::string vocab = slurp(c, artifacts::kVocabulary);
    const std::string index = slurp(c, artifacts::kKnnFeatures);
    const std::string manifest = slurp(c, artifacts::kKnnManifest);
    const std::string record = slurp(c, artifacts::kPrepareRecord);
    const auto b = cmd_prepare(c);
    CHECK(a.vocab_hash == b.vocab_hash);
    CHECK(slurp(c, artifacts::kVocabulary) == vocab);
    CHECK(slurp(c, artifacts::kKnnFeatures) == index);
    CHECK(slurp(c, artifacts::kKnnManifest) == manifest);
    CHECK(slurp(c, artifacts::kPrepareRecord) == record);
    CHECK(a.index_size == 100);
}

TEST_CASE("prepare rejects an empty vocabulary") {
    auto c = fixture_config("empty_vocab");
    c.cutoff = 100000;
    CHECK_THROWS_WITH_AS(cmd_prepare(c), doctest::Contains("empty vocabulary"), Error);
    CHECK_FALSE(fs::exists(c.output_dir));
}

TEST_CASE("cli reports errors as JSON and a nonzero status") {
    std::ostringstream out, err;
    const int rc = run_cli({"hybridcap", "prepare", "--captions", kFixture + "/captions.txt", "--features",
                            "/nonexistent/features.jsonl", "--splits", kFixture + "/splits.txt", "--output",
                            (fs::temp_directory_path() / "hybridcap_cli_err").string()},
                           out, err);
    CHECK(rc != 0);
    CHECK(err.str().find("\"error\"") != std::string::npos);
    CHECK(err.str().find("nonexistent") != std::string::npos);

    std::ostringstream out2, err2;
    CHECK(run_cli({"hybridcap", "train", "--config", kFixture + "/fixture.conf", "--output",
                   (fs::temp_directory_path() / "hybridcap_cli_err2").string()},
                  out2, err2) != 0);
}

TEST_CASE("train requires a seed and a validation split") {
    auto c = fixture_config("noseed");
    c.seed.reset();
    cmd_prepare(c);
    CHECK_THROWS_AS(cmd_train(c), Error);

    const auto dir = fs::temp_directory_path() / "hybridcap_noval";
    fs::create_directories(dir);
    FixtureOptions opt;
    opt.num_images = 30;
    opt.num_validation = 0;
    opt.num_test = 5;
    write_fixture(dir.string(), opt);
    auto nv = fixture_config("noval");
    nv.captions_path = (dir / "captions.txt").string();
    nv.features_path = (dir / "features.jsonl").string();
    nv.splits_path = (dir / "splits.txt").string();
    nv.nic.epochs = 1;
    cmd_prepare(nv);
    CHECK_THROWS_WITH_AS(cmd_train(nv), doctest::Contains("validation split is empty"), Error);
}

TEST_CASE("training is reproducible") {
    const RunConfig& a = trained();
    auto b = fixture_config("repeat");
    cmd_prepare(b);
    const auto result = cmd_train(b);
    CHECK(slurp(a, artifacts::kNicCheckpoint) == slurp(b, artifacts::kNicCheckpoint));
    CHECK(slurp(a, artifacts::kGateCheckpoint) == slurp(b, artifacts::kGateCheckpoint));
    CHECK(slurp(a, artifacts::kGateSamples) == slurp(b, artifacts::kGateSamples));
    CHECK(slurp(a, artifacts::kTrainReport) == slurp(b, artifacts::kTrainReport));
    CHECK(result.gate_samples == 60);
    CHECK(result.nic_epoch_loss.size() == 4);

    b.jobs = 4;
    const auto parallel = cmd_train(b);
    CHECK(slurp(a, artifacts::kGateSamples) == slurp(b, artifacts::kGateSamples));
    CHECK(parallel.gate_accuracy == result.gate_accuracy);
}

TEST_CASE("caption output carries both captions and one final choice") {
    const RunConfig& c = trained();
    CaptionRequest req;
    req.split = SplitName::kTest;
    req.image_ids = {"no_such_image.jpg"};
    std::ostringstream out;
    const auto records = cmd_caption(c, req, out);
    CHECK(records.size() == 41);

    const LoadedPipeline p = load_pipeline(c);
    std::istringstream lines(out.str());
    std::string line;
    std::size_t errors = 0, ok = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        if (j.contains("error")) {
            CHECK(j["image_id"] == "no_such_image.jpg");
            CHECK(j["error"] == "unknown image id");
            ++errors;
            continue;
        }
        ++ok;
        CHECK(j.contains("nic_caption"));
        CHECK(j.contains("knn_caption"));
        const std::string final_model = j["final"];
        CHECK((final_model == "nic" || final_model == "knn"));
        CHECK(j["final_caption"] == j[final_model + "_caption"]);

        // Features recomputed offline from the two base models.
        const auto& rec = p.corpus.image(j["image_id"]);
        const auto mo = run_models(p.nic.params, p.vocab, p.knn, rec, c.beam);
        const auto f = j["features"].get<std::vector<double>>();
        for (std::size_t i = 0; i < kNumGateFeatures; ++i) CHECK(f[i] == mo.features[i]);
        CHECK(j["nic_caption"] == join_tokens(mo.nic.tokens));
        CHECK(j["knn_caption"] == join_tokens(mo.knn.consensus.caption.tokens));
    }
    CHECK(errors == 1);
    CHECK(ok == 40);
}

TEST_CASE("forced gate always picks the requested model") {
    const RunConfig& c = trained();
    CaptionRequest req;
    req.split = SplitName::kTest;
    req.force_gate = 0;
    const LoadedPipeline p = load_pipeline(c);
    for (const auto& r : caption_images(p, c, req)) {
        REQUIRE(r.decision);
        CHECK(r.decision->caption.tokens == r.decision->nic_caption.tokens);
    }
    req.force_gate = 1;
    for (const auto& r : caption_images(p, c, req)) {
        REQUIRE(r.decision);
        CHECK(r.decision->caption.tokens == r.decision->knn_caption.tokens);
    }
}

TEST_CASE("captioning new images from a features file") {
    const RunConfig& c = trained();
    const auto path = (fs::temp_directory_path() / "hybridcap_new_features.jsonl").string();
    std::ostringstream vec;
    vec << "{\"image_id\": \"new.jpg\", \"features\": [";
    for (int i = 0; i < 32; ++i) vec << (i ? "," : "") << (i % 3) * 0.5;
    vec << "]}\n{\"image_id\": \"short.jpg\", \"features\": [1, 2]}\n";
    write_file(path, vec.str());
    CaptionRequest req;
    req.features_file = path;
    std::ostringstream out;
    const auto records = cmd_caption(c, req, out);
    REQUIRE(records.size() == 2);
    CHECK(records[0].image_id == "new.jpg");
    CHECK(records[0].decision.has_value());
    CHECK(records[1].image_id == "short.jpg");
    CHECK_FALSE(records[1].decision.has_value());
}

TEST_CASE("evaluation rows and the rebuildable report") {
    const RunConfig& c = trained();
    std::ostringstream out;
    const auto report = cmd_evaluate(c, SplitName::kTest, out);
    REQUIRE(report.rows.size() == 4);
    CHECK(report.rows[0].name == "kNN");
    CHECK(report.rows[3].name == "Oracle hybrid");
    const double oracle = report.row("Oracle hybrid").mean_sentence_bleu4;
    CHECK(oracle >= report.row("kNN").mean_sentence_bleu4);
    CHECK(oracle >= report.row("NIC").mean_sentence_bleu4);
    CHECK(oracle >= report.row("Hybrid").mean_sentence_bleu4);
    CHECK(out.str().find("Oracle hybrid") != std::string::npos);

    // The report is a pure function of the caption stream.
    CaptionRequest req;
    req.split = SplitName::kTest;
    std::ostringstream lines;
    cmd_caption(c, req, lines);
    std::vector<HybridDecision> decisions;
    std::istringstream in(lines.str());
    std::string line;
    while (std::getline(in, line)) decisions.push_back(decision_from_json(nlohmann::json::parse(line)));
    const LoadedPipeline p = load_pipeline(c);
    const auto rebuilt = build_report(decisions, p.corpus, "test");
    CHECK(report_json(rebuilt, c).dump() == report_json(report, c).dump());
}

TEST_CASE("beam sweep covers every requested width") {
    const RunConfig& c = trained();
    std::ostringstream out;
    const auto rows = cmd_sweep_beam(c, SplitName::kTest, kBeamSweep, out);
    REQUIRE(rows.size() == 4);
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].beam == kBeamSweep[i]);
    CHECK(out.str().find("Beam Size (i)") != std::string::npos);
    CHECK(fs::exists(artifact_path(c, "beam_sweep_test.json")));
}
