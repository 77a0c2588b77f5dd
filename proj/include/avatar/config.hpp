#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "avatar/fit.hpp"
#include "avatar/synth.hpp"
#include "avatar/train.hpp"

namespace avatar {

// Every tunable of the pipeline. The text form is one "key = value" per line;
// '#' starts a comment.
struct Config {
    synth::DatasetOptions data;
    train::TrainConfig train;
    fit::FitConfig fit;
    fit::NoiseConfig noise;
    std::uint64_t fit_seed = 7;
    int resolution = 64;
    double iso = 0.5;

    // 22 subjects split 20/2, 6 frames at 128^2, 1800 + 200 points, 3000 steps.
    static Config desk();
    // 200 subjects split 190/10, 512^2 frames, 14756 + 1628 points.
    static Config paper();
    static Config preset(const std::string& name);

    // Applies one key; unknown keys and out-of-range values throw
    // ValidationError naming the key.
    void set(const std::string& key, const std::string& value);
    void validate() const;
    bool operator==(const Config&) const;
};

Config parse_config(const std::string& text, Config base = Config::desk());
Config load_config(const std::filesystem::path& path, Config base = Config::desk());
std::string to_text(const Config& config);

}  // namespace avatar
