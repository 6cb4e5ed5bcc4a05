#include "hybridcap/config.hpp"

#include <charconv>
#include <filesystem>
#include <sstream>

#include "hybridcap/error.hpp"

namespace hybridcap {

namespace {

std::string trim_copy(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* begin = value.data();
    const char* end = begin + value.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    if (ec != std::errc() || ptr != end) {
        throw Error("config key '" + key + "': cannot parse '" + value + "'");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != value.size() || value.empty()) {
        throw Error("config key '" + key + "': cannot parse '" + value + "'");
    }
    return out;
}

}  // namespace

void RunConfig::validate() const {
    if (k < 1) throw Error("k must be >= 1");
    if (m < 1) throw Error("m must be >= 1");
    if (beam < 1) throw Error("beam must be >= 1");
    if (nic.embed_dim < 1 || nic.hidden_dim < 1) throw Error("NIC dimensions must be >= 1");
    if (nic.epochs < 0 || gate.epochs < 0) throw Error("epochs must be >= 0");
    if (nic.learning_rate < 0.0 || gate.learning_rate < 0.0) {
        throw Error("learning rates must be >= 0");
    }
}

std::uint64_t RunConfig::require_seed() const {
    if (!seed) throw Error("a seed is required (--seed or 'seed' in the config file)");
    return *seed;
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["captions"] = captions_path;
    j["features"] = features_path;
    j["splits"] = splits_path;
    j["cutoff"] = cutoff;
    j["k"] = k;
    j["m"] = m;
    j["beam"] = beam;
    j["max_len"] = kMaxCaptionLength;
    j["seed"] = seed ? nlohmann::ordered_json(*seed) : nlohmann::ordered_json(nullptr);
    j["nic"] = {{"embed_dim", nic.embed_dim},
                {"hidden_dim", nic.hidden_dim},
                {"learning_rate", nic.learning_rate},
                {"lr_decay", nic.lr_decay},
                {"epochs", nic.epochs},
                {"clip_norm", nic.clip_norm}};
    j["gate"] = {{"learning_rate", gate.learning_rate},
                 {"epochs", gate.epochs},
                 {"l2", gate.l2}};
    return j;
}

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim_copy(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(origin, lineno, "expected key = value");
        std::string key = trim_copy(line.substr(0, eq));
        std::string value = trim_copy(line.substr(eq + 1));
        if (key.empty()) throw ParseError(origin, lineno, "empty key");
        out[key] = value;
    }
    return out;
}

void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "captions") c.captions_path = value;
    else if (key == "features") c.features_path = value;
    else if (key == "splits") c.splits_path = value;
    else if (key == "output") c.output_dir = value;
    else if (key == "cutoff") c.cutoff = parse_number<std::size_t>(key, value);
    else if (key == "k") c.k = parse_number<std::size_t>(key, value);
    else if (key == "m") c.m = parse_number<std::size_t>(key, value);
    else if (key == "beam") c.beam = parse_number<std::size_t>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "jobs") c.jobs = parse_number<unsigned>(key, value);
    else if (key == "nic.embed_dim") c.nic.embed_dim = parse_number<int>(key, value);
    else if (key == "nic.hidden_dim") c.nic.hidden_dim = parse_number<int>(key, value);
    else if (key == "nic.learning_rate") c.nic.learning_rate = parse_double(key, value);
    else if (key == "nic.lr_decay") c.nic.lr_decay = parse_double(key, value);
    else if (key == "nic.epochs") c.nic.epochs = parse_number<int>(key, value);
    else if (key == "nic.clip_norm") c.nic.clip_norm = parse_double(key, value);
    else if (key == "gate.learning_rate") c.gate.learning_rate = parse_double(key, value);
    else if (key == "gate.epochs") c.gate.epochs = parse_number<int>(key, value);
    else if (key == "gate.l2") c.gate.l2 = parse_double(key, value);
    else throw Error("unknown config key '" + key + "'");
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
    const auto dir = std::filesystem::path(path).parent_path();
    for (auto [key, value] : parse_config_text(read_file(path), path)) {
        // Relative paths in a config file are relative to the file itself.
        const bool is_path =
            key == "captions" || key == "features" || key == "splits" || key == "output";
        if (is_path && !value.empty() && std::filesystem::path(value).is_relative()) {
            value = (dir / value).lexically_normal().string();
        }
        apply_setting(base, key, value);
    }
    return base;
}

}  // namespace hybridcap
