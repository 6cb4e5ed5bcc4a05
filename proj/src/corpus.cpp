#include "hybridcap/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hybridcap/error.hpp"
#include "hybridcap/hash.hpp"

namespace hybridcap {

namespace {

bool is_word_char(unsigned char ch) {
    return (ch >= '0' && ch <= '9') || (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
           ch >= 0x80;
}

bool is_space(unsigned char ch) {
    return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' || ch == '\v';
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

template <typename Fn>
void for_each_line(const std::string& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view view = trim(line);
        if (view.empty()) continue;
        fn(view, lineno);
    }
}

}  // namespace

Tokens tokenize(std::string_view raw) {
    Tokens out;
    std::string current;
    const std::size_t n = raw.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto ch = static_cast<unsigned char>(raw[i]);
        if (is_space(ch)) {
            if (!current.empty()) out.push_back(std::move(current));
            current.clear();
            continue;
        }
        if (is_word_char(ch)) {
            current.push_back(ch >= 'A' && ch <= 'Z' ? static_cast<char>(ch - 'A' + 'a')
                                                     : static_cast<char>(ch));
            continue;
        }
        if ((ch == '\'' || ch == '-') && i > 0 && i + 1 < n &&
            is_word_char(static_cast<unsigned char>(raw[i - 1])) &&
            is_word_char(static_cast<unsigned char>(raw[i + 1]))) {
            current.push_back(static_cast<char>(ch));
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

std::string join_tokens(const Tokens& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

// ---------------------------------------------------------------- Vocabulary

const char* Vocabulary::special_name(TokenId id) {
    switch (id) {
        case kPad: return "<pad>";
        case kStart: return "<start>";
        case kEnd: return "<end>";
        case kUnk: return "<unk>";
        default: return nullptr;
    }
}

Vocabulary::Vocabulary(std::vector<std::string> ordinary_tokens, std::vector<std::size_t> counts,
                       std::size_t cutoff)
    : cutoff_(cutoff) {
    if (ordinary_tokens.size() != counts.size()) {
        throw Error("vocabulary token/count length mismatch");
    }
    for (TokenId id = 0; id < kNumSpecial; ++id) {
        id_to_token_.emplace_back(special_name(id));
        counts_.push_back(0);
    }
    for (std::size_t i = 0; i < ordinary_tokens.size(); ++i) {
        id_to_token_.push_back(std::move(ordinary_tokens[i]));
        counts_.push_back(counts[i]);
    }
    for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
        auto [it, inserted] = token_to_id_.emplace(id_to_token_[i], static_cast<TokenId>(i));
        if (!inserted) throw Error("duplicate vocabulary token '" + id_to_token_[i] + "'");
    }
}

TokenId Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
    return token_to_id_.count(token) != 0;
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
        throw Error("token id " + std::to_string(id) + " out of range");
    }
    return id_to_token_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::hash() const {
    Fnv1a h;
    for (const auto& tok : id_to_token_) {
        h.update(tok);
        h.update(std::string_view("\n", 1));
    }
    return h.hex();
}

std::string Vocabulary::serialize() const {
    std::ostringstream out;
    out << "# cutoff\t" << cutoff_ << "\n";
    for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
        out << i << '\t' << id_to_token_[i] << '\t' << counts_[i] << '\n';
    }
    return out.str();
}

Vocabulary Vocabulary::deserialize(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::size_t cutoff = kDefaultVocabCutoff;
    std::vector<std::string> tokens;
    std::vector<std::size_t> counts;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string a, b, c;
        std::getline(fields, a, '\t');
        std::getline(fields, b, '\t');
        if (a == "# cutoff") {
            cutoff = std::stoul(b);
            continue;
        }
        std::getline(fields, c, '\t');
        std::size_t id = 0;
        try {
            id = std::stoul(a);
        } catch (const std::exception&) {
            throw ParseError(origin, lineno, "malformed vocabulary id '" + a + "'");
        }
        if (id < static_cast<std::size_t>(kNumSpecial)) {
            if (b != special_name(static_cast<TokenId>(id))) {
                throw ParseError(origin, lineno, "special token mismatch at id " + a);
            }
            continue;
        }
        if (id != tokens.size() + kNumSpecial) {
            throw ParseError(origin, lineno, "vocabulary ids not contiguous");
        }
        tokens.push_back(b);
        counts.push_back(c.empty() ? 0 : std::stoul(c));
    }
    return Vocabulary(std::move(tokens), std::move(counts), cutoff);
}

Vocabulary build_vocabulary(const std::vector<Caption>& captions, std::size_t cutoff) {
    if (captions.empty()) throw Error("empty training corpus");
    std::map<std::string, std::size_t> freq;
    for (const auto& cap : captions) {
        for (const auto& tok : cap.tokens) ++freq[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, count] : freq) {
        if (count > cutoff) kept.emplace_back(tok, count);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> tokens;
    std::vector<std::size_t> counts;
    for (auto& [tok, count] : kept) {
        // A training token spelled like a special marker would break the bijection.
        if (tok.front() == '<') continue;
        tokens.push_back(tok);
        counts.push_back(count);
    }
    return Vocabulary(std::move(tokens), std::move(counts), cutoff);
}

IdSequence encode(const Tokens& tokens, const Vocabulary& vocab) {
    IdSequence ids;
    ids.reserve(tokens.size() + 2);
    ids.push_back(Vocabulary::kStart);
    for (const auto& tok : tokens) ids.push_back(vocab.id(tok));
    ids.push_back(Vocabulary::kEnd);
    return ids;
}

IdSequence encode(const Caption& caption, const Vocabulary& vocab) {
    return encode(caption.tokens, vocab);
}

Tokens decode(const IdSequence& ids, const Vocabulary& vocab) {
    Tokens out;
    for (TokenId id : ids) {
        if (id == Vocabulary::kEnd) break;
        if (id == Vocabulary::kStart || id == Vocabulary::kPad) continue;
        out.push_back(vocab.token(id));
    }
    return out;
}

// -------------------------------------------------------------------- Corpus

const ImageRecord* Corpus::find(const std::string& image_id) const {
    auto it = index_by_id.find(image_id);
    return it == index_by_id.end() ? nullptr : &images[it->second];
}

const ImageRecord& Corpus::image(const std::string& image_id) const {
    const ImageRecord* rec = find(image_id);
    if (!rec) throw Error("unknown image id '" + image_id + "'");
    return *rec;
}

std::vector<const ImageRecord*> Corpus::images_in(SplitName which) const {
    const std::vector<std::string>* ids = &split.train;
    if (which == SplitName::kValidation) ids = &split.validation;
    if (which == SplitName::kTest) ids = &split.test;
    std::vector<const ImageRecord*> out;
    out.reserve(ids->size());
    for (const auto& id : *ids) out.push_back(&image(id));
    return out;
}

std::vector<Caption> Corpus::training_captions() const {
    std::vector<Caption> out;
    for (const ImageRecord* rec : images_in(SplitName::kTrain)) {
        out.insert(out.end(), rec->references.begin(), rec->references.end());
    }
    return out;
}

std::map<std::string, std::vector<Caption>> read_captions(const std::string& path) {
    std::map<std::string, std::vector<Caption>> out;
    for_each_line(path, [&](std::string_view line, std::size_t lineno) {
        auto tab = line.find('\t');
        if (tab == std::string_view::npos) {
            throw ParseError(path, lineno, "expected image_id<TAB>caption");
        }
        std::string id(trim(line.substr(0, tab)));
        if (auto hash = id.rfind('#'); hash != std::string::npos) id.erase(hash);
        if (id.empty()) throw ParseError(path, lineno, "empty image id");
        Tokens toks = tokenize(line.substr(tab + 1));
        // Punctuation-only captions carry nothing to score; drop them.
        if (toks.empty()) return;
        out[id].push_back(Caption{id, std::move(toks)});
    });
    return out;
}

std::map<std::string, std::vector<double>> read_features(const std::string& path) {
    std::map<std::string, std::vector<double>> out;
    for_each_line(path, [&](std::string_view line, std::size_t lineno) {
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path, lineno, std::string("invalid JSON: ") + e.what());
        }
        if (!rec.is_object() || !rec.contains("image_id") || !rec["image_id"].is_string() ||
            !rec.contains("features") || !rec["features"].is_array()) {
            throw ParseError(path, lineno, "expected {\"image_id\": string, \"features\": [...]}");
        }
        std::vector<double> values;
        values.reserve(rec["features"].size());
        for (const auto& v : rec["features"]) {
            if (!v.is_number()) throw ParseError(path, lineno, "non-numeric feature value");
            values.push_back(v.get<double>());
        }
        std::string id = rec["image_id"].get<std::string>();
        if (!out.emplace(id, std::move(values)).second) {
            throw ParseError(path, lineno, "duplicate feature record for '" + id + "'");
        }
    });
    return out;
}

DatasetSplit read_splits(const std::string& path) {
    DatasetSplit split;
    std::set<std::string> seen;
    for_each_line(path, [&](std::string_view line, std::size_t lineno) {
        auto tab = line.find('\t');
        if (tab == std::string_view::npos) {
            throw ParseError(path, lineno, "expected image_id<TAB>{train|val|test}");
        }
        std::string id(trim(line.substr(0, tab)));
        std::string_view which = trim(line.substr(tab + 1));
        if (!seen.insert(id).second) {
            throw ParseError(path, lineno, "image '" + id + "' listed in more than one split");
        }
        if (which == "train") {
            split.train.push_back(id);
        } else if (which == "val") {
            split.validation.push_back(id);
        } else if (which == "test") {
            split.test.push_back(id);
        } else {
            throw ParseError(path, lineno, "unknown split '" + std::string(which) + "'");
        }
    });
    return split;
}

Corpus assemble_corpus(std::map<std::string, std::vector<Caption>> captions,
                       const std::map<std::string, std::vector<double>>& features,
                       DatasetSplit split) {
    std::vector<std::string> all;
    for (const auto* ids : {&split.train, &split.validation, &split.test}) {
        all.insert(all.end(), ids->begin(), ids->end());
    }
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
        throw Error("splits are not disjoint");
    }

    Corpus corpus;
    corpus.split = std::move(split);
    const std::string* dim_owner = nullptr;
    for (const auto& id : all) {
        auto feat = features.find(id);
        if (feat == features.end()) throw Error("missing feature vector for image '" + id + "'");
        auto caps = captions.find(id);
        if (caps == captions.end() || caps->second.empty()) {
            throw Error("no reference captions for image '" + id + "'");
        }
        const std::size_t dim = feat->second.size();
        if (dim == 0) throw Error("empty feature vector for image '" + id + "'");
        if (!dim_owner) {
            corpus.feature_dim = dim;
            dim_owner = &id;
        } else if (dim != corpus.feature_dim) {
            throw Error("feature dimension mismatch: image '" + *dim_owner + "' has " +
                        std::to_string(corpus.feature_dim) + ", image '" + id + "' has " +
                        std::to_string(dim));
        }
        corpus.index_by_id.emplace(id, corpus.images.size());
        corpus.images.push_back(ImageRecord{id, feat->second, std::move(caps->second)});
    }
    return corpus;
}

Corpus load_corpus(const std::string& captions_path, const std::string& features_path,
                   const std::string& splits_path) {
    auto split = read_splits(splits_path);
    auto features = read_features(features_path);
    auto captions = read_captions(captions_path);
    return assemble_corpus(std::move(captions), features, std::move(split));
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << contents;
    if (!out) throw Error("write failed for " + path);
}

}  // namespace hybridcap
