#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace hybridcap {

// Synthetic captioning corpus: every pseudo-image is a scene (color, animal,
// action, place) whose feature vector is the sum of per-attribute directions
// plus Gaussian noise. Most images repeat a handful of prototype scenes;
// the rest are fresh combinations, so neither captioner dominates.
struct FixtureOptions {
    std::size_t num_images = 200;
    std::size_t feature_dim = 32;
    std::size_t prototypes = 5;
    std::size_t num_validation = 60;
    std::size_t num_test = 40;
    // Fraction of images drawn from the prototype scenes.
    double prototype_share = 0.9;
    double noise = 2.0;
    std::uint64_t seed = 1;
};

struct FixtureFiles {
    std::string captions;
    std::string features;
    std::string splits;
};

FixtureFiles generate_fixture(const FixtureOptions& options);

// Writes captions.txt, features.jsonl and splits.txt into `dir`.
void write_fixture(const std::string& dir, const FixtureOptions& options);

}  // namespace hybridcap
