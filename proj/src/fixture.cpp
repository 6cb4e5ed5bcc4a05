#include "hybridcap/fixture.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <vector>

#include <json.hpp>

#include "hybridcap/corpus.hpp"
#include "hybridcap/error.hpp"

namespace hybridcap {

namespace {

// Portable draws (std distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 engine_;
};

const std::array<const char*, 5> kColors{"black", "white", "brown", "gray", "golden"};
const std::array<const char*, 6> kAnimals{"dog", "cat", "horse", "bird", "sheep", "goat"};
const std::array<std::pair<const char*, const char*>, 5> kActions{{{"runs", "running"},
                                                                    {"jumps", "jumping"},
                                                                    {"sits", "sitting"},
                                                                    {"plays", "playing"},
                                                                    {"rests", "resting"}}};
const std::array<const char*, 5> kPlaces{"on the grass", "in the water", "on the beach",
                                         "in the snow", "on a road"};

struct Scene {
    std::size_t color, animal, action, place;
};

std::string render(std::size_t tmpl, const Scene& s) {
    const std::string c = kColors[s.color];
    const std::string a = kAnimals[s.animal];
    const std::string v3 = kActions[s.action].first;
    const std::string ving = kActions[s.action].second;
    const std::string p = kPlaces[s.place];
    switch (tmpl) {
        case 0: return "A " + c + " " + a + " " + v3 + " " + p + ".";
        case 1: return "A " + c + " " + a + " is " + ving + " " + p + ".";
        case 2: return "The " + a + " is " + ving + " " + p + ".";
        case 3: return "A " + a + " " + ving + " " + p;
        case 4: return "A " + c + " " + a + " " + ving + ".";
        case 5: return "The " + c + " " + a + " " + v3 + " " + p + " .";
        default: return "a " + a + " " + v3 + " " + p + ".";
    }
}
constexpr std::size_t kTemplates = 7;
constexpr std::size_t kCaptionsPerImage = 5;

double round6(double v) { return std::round(v * 1e6) / 1e6; }

}  // namespace

FixtureFiles generate_fixture(const FixtureOptions& opt) {
    if (opt.num_validation + opt.num_test >= opt.num_images) {
        throw Error("fixture needs more images than validation + test");
    }
    if (opt.prototypes == 0) throw Error("fixture needs at least one prototype scene");
    Rng rng(opt.seed);
    const std::size_t d = opt.feature_dim;

    auto directions = [&](std::size_t count) {
        std::vector<std::vector<double>> dirs(count, std::vector<double>(d));
        for (auto& v : dirs) {
            for (auto& x : v) x = rng.normal() / std::sqrt(static_cast<double>(d));
        }
        return dirs;
    };
    const auto color_dir = directions(kColors.size());
    const auto animal_dir = directions(kAnimals.size());
    const auto action_dir = directions(kActions.size());
    const auto place_dir = directions(kPlaces.size());

    auto random_scene = [&] {
        return Scene{rng.below(kColors.size()), rng.below(kAnimals.size()),
                     rng.below(kActions.size()), rng.below(kPlaces.size())};
    };
    std::vector<Scene> prototypes;
    for (std::size_t i = 0; i < opt.prototypes; ++i) prototypes.push_back(random_scene());

    std::string captions, features;
    std::vector<std::string> ids;
    char idbuf[32];
    for (std::size_t i = 0; i < opt.num_images; ++i) {
        std::snprintf(idbuf, sizeof idbuf, "img_%04zu.jpg", i + 1);
        const std::string id = idbuf;
        ids.push_back(id);
        const Scene scene =
            rng.uniform() < opt.prototype_share ? prototypes[rng.below(prototypes.size())] : random_scene();

        std::vector<double> f(d);
        for (std::size_t j = 0; j < d; ++j) {
            f[j] = round6(color_dir[scene.color][j] + animal_dir[scene.animal][j] +
                          action_dir[scene.action][j] + place_dir[scene.place][j] +
                          opt.noise * rng.normal() / std::sqrt(static_cast<double>(d)));
        }
        nlohmann::ordered_json rec;
        rec["image_id"] = id;
        rec["features"] = f;
        features += rec.dump() + "\n";

        std::vector<std::size_t> templates(kTemplates);
        std::iota(templates.begin(), templates.end(), std::size_t{0});
        rng.shuffle(templates);
        for (std::size_t c = 0; c < kCaptionsPerImage; ++c) {
            captions += id + "#" + std::to_string(c) + "\t" + render(templates[c], scene) + "\n";
        }
    }

    std::vector<std::size_t> order(opt.num_images);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<std::string> which(opt.num_images, "train");
    for (std::size_t i = 0; i < opt.num_validation; ++i) which[order[i]] = "val";
    for (std::size_t i = 0; i < opt.num_test; ++i) which[order[opt.num_validation + i]] = "test";
    std::string splits;
    for (std::size_t i = 0; i < opt.num_images; ++i) splits += ids[i] + "\t" + which[i] + "\n";

    return {std::move(captions), std::move(features), std::move(splits)};
}

void write_fixture(const std::string& dir, const FixtureOptions& options) {
    std::filesystem::create_directories(dir);
    const auto files = generate_fixture(options);
    const std::filesystem::path base(dir);
    write_file((base / "captions.txt").string(), files.captions);
    write_file((base / "features.jsonl").string(), files.features);
    write_file((base / "splits.txt").string(), files.splits);
}

}  // namespace hybridcap
