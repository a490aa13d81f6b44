#pragma once

// Shared fixtures for the test suites: on-disk synthetic datasets are
// generated once per size and cached for the life of the process.

#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>

#include "fedair/mnist.hpp"
#include "fedair/synthgen.hpp"

namespace testsup {

inline std::filesystem::path scratch_dir() {
    static const std::filesystem::path dir = [] {
        auto d = std::filesystem::temp_directory_path() / "fedair_test_scratch";
        std::filesystem::create_directories(d);
        return d;
    }();
    return dir;
}

inline const fedair::data::SynthPaths& dataset(std::size_t train_per_class,
                                               std::size_t test_per_class,
                                               std::uint64_t seed = 1) {
    static std::map<std::string, fedair::data::SynthPaths> cache;
    const std::string key = std::to_string(train_per_class) + "_" +
                            std::to_string(test_per_class) + "_" + std::to_string(seed);
    auto it = cache.find(key);
    if (it == cache.end()) {
        fedair::data::SynthConfig cfg;
        cfg.train_per_class = train_per_class;
        cfg.test_per_class = test_per_class;
        cfg.seed = seed;
        auto paths = fedair::data::generate_dataset((scratch_dir() / ("ds_" + key)).string(), cfg);
        it = cache.emplace(key, std::move(paths)).first;
    }
    return it->second;
}

inline fedair::data::MnistData load(const fedair::data::SynthPaths& p,
                                    std::array<int, 4> classes = {0, 1, 2, 3},
                                    std::uint64_t seed = 1,
                                    std::size_t max_per_class = 0) {
    return fedair::data::load_mnist(p.train_images, p.train_labels, p.test_images,
                                    p.test_labels, classes, seed, max_per_class);
}

} // namespace testsup
