#include <doctest.h>

#include <filesystem>
#include <random>

#include "hybridcap/corpus.hpp"
#include "hybridcap/error.hpp"
#include "oracles.hpp"

using namespace hybridcap;
namespace fs = std::filesystem;

namespace {

Caption cap(const std::string& text, const std::string& id = "img") { return {id, tokenize(text)}; }

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("hybridcap_corpus_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct FixtureFilesOnDisk {
    fs::path captions, features, splits;
};

FixtureFilesOnDisk write_small(const fs::path& dir, const std::string& features) {
    write_file((dir / "captions.txt").string(),
               "a.jpg#0\tA black Dog.\n"
               "a.jpg#1\tA dog runs\n"
               "b.jpg#0\tTwo cats, sleeping\n"
               "c.jpg#0\tA bird!\n"
               "c.jpg#1\tbird flying\n");
    write_file((dir / "features.jsonl").string(), features);
    write_file((dir / "splits.txt").string(), "a.jpg\ttrain\nb.jpg\tval\nc.jpg\ttest\n");
    return {dir / "captions.txt", dir / "features.jsonl", dir / "splits.txt"};
}

}  // namespace

TEST_CASE("tokenize lowercases, strips punctuation and splits on whitespace runs") {
    CHECK(tokenize("A black Dog.") == Tokens{"a", "black", "dog"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("two dogs,  running") == Tokens{"two", "dogs", "running"});
    CHECK(tokenize("?!. ,").empty());
    CHECK(tokenize("the dog's ball") == Tokens{"the", "dog's", "ball"});
    CHECK(tokenize("a well-trained dog - 'jumping'") == Tokens{"a", "well-trained", "dog", "jumping"});
    CHECK(tokenize("\tcafé\r\n") == Tokens{"café"});
}

TEST_CASE("tokenize is idempotent on random byte soup") {
    std::mt19937_64 rng(11);
    const std::string alphabet = "aZ9 -'.,!\t\xc3\xa9";
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    std::uniform_int_distribution<std::size_t> len(0, 30);
    for (int trial = 0; trial < 500; ++trial) {
        std::string raw(len(rng), ' ');
        for (auto& ch : raw) ch = alphabet[pick(rng)];
        const auto once = tokenize(raw);
        REQUIRE(tokenize(join_tokens(once)) == once);
        for (const auto& tok : once) {
            CHECK_FALSE(tok.empty());
            CHECK(tok.find(' ') == std::string::npos);
        }
    }
}

TEST_CASE("build_vocabulary keeps tokens strictly above the cutoff") {
    std::vector<Caption> caps;
    for (int i = 0; i < 6; ++i) caps.push_back(cap("a dog"));
    for (int i = 0; i < 5; ++i) caps.push_back(cap("the cat"));
    const auto vocab = build_vocabulary(caps, 5);

    CHECK(vocab.contains("dog"));
    CHECK(vocab.contains("a"));
    CHECK_FALSE(vocab.contains("cat"));
    CHECK(vocab.id("cat") == Vocabulary::kUnk);
    for (TokenId id = 0; id < Vocabulary::kNumSpecial; ++id) {
        CHECK(vocab.token(id) == Vocabulary::special_name(id));
    }
    CHECK(vocab.size() == 6);
}

TEST_CASE("vocabulary ids: specials, then frequency descending, ties lexicographic") {
    std::vector<Caption> caps{cap("b a c c"), cap("a b c"), cap("d")};
    const auto vocab = build_vocabulary(caps, 0);
    // c:3, a:2, b:2, d:1
    CHECK(vocab.token(4) == "c");
    CHECK(vocab.token(5) == "a");
    CHECK(vocab.token(6) == "b");
    CHECK(vocab.token(7) == "d");
    // Same multiset in a different order gives the same table.
    std::vector<Caption> shuffled{cap("d"), cap("c b a"), cap("c c a b")};
    CHECK(build_vocabulary(shuffled, 0).serialize() == vocab.serialize());
    CHECK(build_vocabulary(shuffled, 0).hash() == vocab.hash());
}

TEST_CASE("build_vocabulary rejects an empty training corpus") {
    CHECK_THROWS_WITH_AS(build_vocabulary({}, 5), "empty training corpus", Error);
}

TEST_CASE("encode frames with START/END and maps OOV to UNK") {
    std::vector<Caption> caps{cap("a dog"), cap("a dog")};
    const auto vocab = build_vocabulary(caps, 0);
    const auto a = vocab.id("a");
    const auto dog = vocab.id("dog");
    CHECK(encode(Tokens{"a", "dog"}, vocab) == IdSequence{Vocabulary::kStart, a, dog, Vocabulary::kEnd});
    CHECK(encode(Tokens{"zyzzyva"}, vocab) ==
          IdSequence{Vocabulary::kStart, Vocabulary::kUnk, Vocabulary::kEnd});
    CHECK(encode(Tokens{}, vocab) == IdSequence{Vocabulary::kStart, Vocabulary::kEnd});
    CHECK(decode(encode(Tokens{"dog", "a", "dog"}, vocab), vocab) == Tokens{"dog", "a", "dog"});
}

TEST_CASE("vocabulary serialization round-trips") {
    std::vector<Caption> caps{cap("a dog runs"), cap("a cat runs"), cap("a dog")};
    const auto vocab = build_vocabulary(caps, 0);
    const auto back = Vocabulary::deserialize(vocab.serialize(), "mem");
    CHECK(back.serialize() == vocab.serialize());
    CHECK(back.cutoff() == 0);
}

TEST_CASE("load_corpus reads a well-formed fixture") {
    const auto dir = scratch_dir("ok");
    const auto files = write_small(dir,
                                   "{\"image_id\": \"a.jpg\", \"features\": [1, 0]}\n"
                                   "{\"image_id\": \"b.jpg\", \"features\": [0, 1]}\n"
                                   "{\"image_id\": \"c.jpg\", \"features\": [1, 1]}\n");
    const auto corpus = load_corpus(files.captions.string(), files.features.string(), files.splits.string());
    CHECK(corpus.images.size() == 3);
    CHECK(corpus.feature_dim == 2);
    CHECK(corpus.image("a.jpg").references.size() == 2);
    CHECK(corpus.image("a.jpg").references[0].tokens == Tokens{"a", "black", "dog"});
    CHECK(corpus.split.train == std::vector<std::string>{"a.jpg"});
    CHECK(corpus.split.validation == std::vector<std::string>{"b.jpg"});
    CHECK(corpus.split.test == std::vector<std::string>{"c.jpg"});
    CHECK(corpus.training_captions().size() == 2);
}

TEST_CASE("load_corpus names the split id that lacks features") {
    const auto dir = scratch_dir("missing");
    const auto files = write_small(dir,
                                   "{\"image_id\": \"a.jpg\", \"features\": [1, 0]}\n"
                                   "{\"image_id\": \"c.jpg\", \"features\": [1, 1]}\n");
    CHECK_THROWS_WITH_AS(load_corpus(files.captions.string(), files.features.string(), files.splits.string()),
                         doctest::Contains("b.jpg"), Error);
}

TEST_CASE("load_corpus reports both dimensions on a mismatch") {
    const auto dir = scratch_dir("dim");
    const auto files = write_small(dir,
                                   "{\"image_id\": \"a.jpg\", \"features\": [1, 0, 2]}\n"
                                   "{\"image_id\": \"b.jpg\", \"features\": [0, 1]}\n"
                                   "{\"image_id\": \"c.jpg\", \"features\": [1, 1, 1]}\n");
    try {
        load_corpus(files.captions.string(), files.features.string(), files.splits.string());
        FAIL("expected a dimension mismatch");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("dimension mismatch") != std::string::npos);
        CHECK(msg.find("3") != std::string::npos);
        CHECK(msg.find("2") != std::string::npos);
    }
}

TEST_CASE("file readers report file and line") {
    const auto dir = scratch_dir("parse");
    write_file((dir / "bad.jsonl").string(), "{\"image_id\": \"a\", \"features\": [1]}\nnot json\n");
    try {
        read_features((dir / "bad.jsonl").string());
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
        CHECK(std::string(e.what()).find("bad.jsonl:2") != std::string::npos);
    }
    write_file((dir / "splits.txt").string(), "a\ttrain\na\ttest\n");
    CHECK_THROWS_AS(read_splits((dir / "splits.txt").string()), ParseError);
    write_file((dir / "splits2.txt").string(), "a\tdev\n");
    CHECK_THROWS_AS(read_splits((dir / "splits2.txt").string()), ParseError);
    CHECK_THROWS_WITH_AS(read_captions((dir / "nope.txt").string()), doctest::Contains("nope.txt"), Error);
}
