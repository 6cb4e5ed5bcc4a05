#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "hybridcap/corpus.hpp"
#include "hybridcap/gate.hpp"
#include "hybridcap/knn.hpp"
#include "hybridcap/nic.hpp"

namespace hybridcap {

inline constexpr std::size_t kDefaultBeam = 3;

struct RunConfig {
    std::string captions_path;
    std::string features_path;
    std::string splits_path;
    std::string output_dir;

    std::size_t cutoff = kDefaultVocabCutoff;
    std::size_t k = kDefaultNeighbors;
    std::size_t m = kDefaultConsensusSubset;
    std::size_t beam = kDefaultBeam;
    NicHyperParams nic;
    GateHyperParams gate;
    std::optional<std::uint64_t> seed;
    // Worker threads for per-image decoding; never changes results.
    unsigned jobs = 1;

    void validate() const;
    std::uint64_t require_seed() const;

    // Everything that influences results (no output dir, no job count).
    nlohmann::ordered_json to_json() const;
};

// `key = value` lines; '#' starts a comment. Unknown keys are rejected.
std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin);
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
RunConfig load_config_file(const std::string& path, RunConfig base = {});

}  // namespace hybridcap
