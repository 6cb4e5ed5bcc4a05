#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hybridcap {

using Tokens = std::vector<std::string>;
using TokenId = int;
using IdSequence = std::vector<TokenId>;

struct Caption {
    std::string image_id;
    Tokens tokens;
};

struct ImageRecord {
    std::string image_id;
    std::vector<double> features;
    std::vector<Caption> references;
};

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
};

enum class SplitName { kTrain, kValidation, kTest };

// Lowercases, drops every character that is not alphanumeric (apostrophes and
// hyphens survive only between two word characters) and splits on whitespace
// runs. Bytes >= 0x80 count as word characters so UTF-8 words stay intact.
Tokens tokenize(std::string_view raw);

std::string join_tokens(const Tokens& tokens);

class Vocabulary {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kStart = 1;
    static constexpr TokenId kEnd = 2;
    static constexpr TokenId kUnk = 3;
    static constexpr int kNumSpecial = 4;

    static const char* special_name(TokenId id);

    // Builds from (token, count) entries already in id order after the specials.
    Vocabulary(std::vector<std::string> ordinary_tokens, std::vector<std::size_t> counts,
               std::size_t cutoff);

    std::size_t size() const { return id_to_token_.size(); }
    std::size_t cutoff() const { return cutoff_; }

    // Unknown tokens map to kUnk.
    TokenId id(const std::string& token) const;
    bool contains(const std::string& token) const;
    const std::string& token(TokenId id) const;
    std::size_t count(TokenId id) const { return counts_.at(static_cast<std::size_t>(id)); }
    static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecial; }

    // Fingerprint over the id -> token table.
    std::string hash() const;

    // One `id<TAB>token<TAB>count` line per entry.
    std::string serialize() const;
    static Vocabulary deserialize(const std::string& text, const std::string& origin);

private:
    std::vector<std::string> id_to_token_;
    std::vector<std::size_t> counts_;
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::size_t cutoff_;
};

inline constexpr std::size_t kDefaultVocabCutoff = 5;

// Keeps tokens whose training frequency is strictly greater than `cutoff`.
// Ids: specials, then descending frequency, ties lexicographic.
Vocabulary build_vocabulary(const std::vector<Caption>& captions,
                            std::size_t cutoff = kDefaultVocabCutoff);

// START + ids + END.
IdSequence encode(const Tokens& tokens, const Vocabulary& vocab);
IdSequence encode(const Caption& caption, const Vocabulary& vocab);

// Inverse of encode: skips START/PAD, stops at END.
Tokens decode(const IdSequence& ids, const Vocabulary& vocab);

struct Corpus {
    // Ordered by image id.
    std::vector<ImageRecord> images;
    DatasetSplit split;
    std::size_t feature_dim = 0;

    const ImageRecord& image(const std::string& image_id) const;
    const ImageRecord* find(const std::string& image_id) const;
    std::vector<const ImageRecord*> images_in(SplitName which) const;
    std::vector<Caption> training_captions() const;

    std::map<std::string, std::size_t> index_by_id;
};

// File readers. Each throws ParseError naming the file and line.
std::map<std::string, std::vector<Caption>> read_captions(const std::string& path);
std::map<std::string, std::vector<double>> read_features(const std::string& path);
DatasetSplit read_splits(const std::string& path);

Corpus load_corpus(const std::string& captions_path, const std::string& features_path,
                   const std::string& splits_path);

// Assembles a corpus from in-memory tables; load_corpus delegates here.
Corpus assemble_corpus(std::map<std::string, std::vector<Caption>> captions,
                       const std::map<std::string, std::vector<double>>& features,
                       DatasetSplit split);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace hybridcap
