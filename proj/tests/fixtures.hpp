#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "avatar/synth.hpp"

namespace avatar::testing {

// Per-process temp root, so test binaries can run concurrently.
inline std::filesystem::path temp_root() {
    return std::filesystem::temp_directory_path() / ("avatar_tests_" + std::to_string(::getpid()));
}

// Small dataset generated once per process under the temp directory.
inline const std::filesystem::path& small_dataset() {
    static const std::filesystem::path root = [] {
        const auto p = temp_root() / "fixture_small";
        std::filesystem::remove_all(p);
        synth::DatasetOptions o;
        o.subjects = 2;
        o.frames = 4;
        o.image_size = 96;
        o.train_fraction = 0.5;
        o.seed = 3;
        synth::generate_dataset(o, p);
        return p;
    }();
    return root;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = temp_root() / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace avatar::testing
