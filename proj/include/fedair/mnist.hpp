#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fedair/common.hpp"

namespace fedair::data {

constexpr int kImageSide = 28;
constexpr int kPixels = kImageSide * kImageSide;
constexpr int kClasses = 4;

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// One sample after class reduction: 784 grayscale pixels in [0,1] and a
/// remapped label in {0,1,2,3}.
struct LabeledImage {
    std::vector<float> pixels; // row-major 28x28
    int label = 0;
};

enum class PartitionMode { IID, NonIID };

struct ClientDataset {
    int client_id = 0; // 1 or 2
    std::vector<LabeledImage> samples;
    std::array<std::size_t, kClasses> label_histogram{};
};

namespace detail {

inline std::uint32_t read_be32(std::ifstream& in, const std::string& path, std::size_t offset) {
    std::uint8_t b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw error("truncated IDX file " + path + " at byte offset " + std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline std::vector<std::vector<std::uint8_t>> read_idx_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error("cannot open IDX image file " + path);
    const std::uint32_t magic = read_be32(in, path, 0);
    if (magic != kIdxImageMagic)
        throw error("bad IDX magic in " + path + " at byte offset 0: got " +
                    std::to_string(magic) + ", expected " + std::to_string(kIdxImageMagic));
    const std::uint32_t count = read_be32(in, path, 4);
    const std::uint32_t rows = read_be32(in, path, 8);
    const std::uint32_t cols = read_be32(in, path, 12);
    if (rows != kImageSide || cols != kImageSide)
        throw error("IDX dimension mismatch in " + path + " at byte offset 8: " +
                    std::to_string(rows) + "x" + std::to_string(cols) + ", expected 28x28");
    std::vector<std::vector<std::uint8_t>> images(count, std::vector<std::uint8_t>(kPixels));
    for (std::uint32_t i = 0; i < count; ++i) {
        if (!in.read(reinterpret_cast<char*>(images[i].data()), kPixels))
            throw error("truncated IDX file " + path + " at byte offset " +
                        std::to_string(16 + std::size_t(i) * kPixels));
    }
    return images;
}

inline std::vector<std::uint8_t> read_idx_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error("cannot open IDX label file " + path);
    const std::uint32_t magic = read_be32(in, path, 0);
    if (magic != kIdxLabelMagic)
        throw error("bad IDX magic in " + path + " at byte offset 0: got " +
                    std::to_string(magic) + ", expected " + std::to_string(kIdxLabelMagic));
    const std::uint32_t count = read_be32(in, path, 4);
    std::vector<std::uint8_t> labels(count);
    if (count && !in.read(reinterpret_cast<char*>(labels.data()), count))
        throw error("truncated IDX file " + path + " at byte offset 8");
    return labels;
}

inline std::vector<LabeledImage> reduce(const std::vector<std::vector<std::uint8_t>>& images,
                                        const std::vector<std::uint8_t>& labels,
                                        const std::array<int, 4>& selected_sorted,
                                        const std::string& image_path) {
    if (images.size() != labels.size())
        throw error("IDX dimension mismatch: " + image_path + " has " +
                    std::to_string(images.size()) + " images but label file has " +
                    std::to_string(labels.size()));
    std::array<int, 10> remap;
    remap.fill(-1);
    for (int k = 0; k < 4; ++k) remap[selected_sorted[k]] = k;
    std::vector<LabeledImage> out;
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (labels[i] > 9) continue;
        const int m = remap[labels[i]];
        if (m < 0) continue;
        LabeledImage s;
        s.pixels.resize(kPixels);
        for (int p = 0; p < kPixels; ++p) s.pixels[p] = images[i][p] / 255.0f;
        s.label = m;
        out.push_back(std::move(s));
    }
    return out;
}

inline void cap_per_class(std::vector<LabeledImage>& set, std::size_t max_per_class,
                          std::uint64_t seed) {
    if (max_per_class == 0) return;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::array<std::size_t, kClasses> taken{};
    std::vector<char> keep(set.size(), 0);
    for (std::size_t idx : order) {
        const int c = set[idx].label;
        if (taken[c] < max_per_class) {
            keep[idx] = 1;
            ++taken[c];
        }
    }
    std::vector<LabeledImage> reduced;
    reduced.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i)
        if (keep[i]) reduced.push_back(std::move(set[i]));
    set = std::move(reduced);
}

} // namespace detail

struct MnistData {
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> test;
};

/// Load MNIST-format IDX files and keep only `selected_classes`, remapping
/// labels to {0,1,2,3} in ascending order of the original label. Pixels are
/// scaled by 1/255. `max_per_class` = 0 means no cap; a nonzero cap takes a
/// seeded uniform subsample of each class.
inline MnistData load_mnist(const std::string& train_images_path,
                            const std::string& train_labels_path,
                            const std::string& test_images_path,
                            const std::string& test_labels_path,
                            std::array<int, 4> selected_classes,
                            std::uint64_t seed,
                            std::size_t max_per_class = 0) {
    std::sort(selected_classes.begin(), selected_classes.end());
    for (int k = 0; k < 4; ++k) {
        if (selected_classes[k] < 0 || selected_classes[k] > 9)
            throw error("selected class out of range 0..9");
        if (k > 0 && selected_classes[k] == selected_classes[k - 1])
            throw error("selected classes must be distinct");
    }
    MnistData out;
    out.train = detail::reduce(detail::read_idx_images(train_images_path),
                               detail::read_idx_labels(train_labels_path),
                               selected_classes, train_images_path);
    out.test = detail::reduce(detail::read_idx_images(test_images_path),
                              detail::read_idx_labels(test_labels_path),
                              selected_classes, test_images_path);
    detail::cap_per_class(out.train, max_per_class, derive_seed(seed, 0xda7a));
    detail::cap_per_class(out.test, max_per_class, derive_seed(seed, 0x7e57));
    return out;
}

/// Split the training set across the two clients. IID: seeded uniform
/// shuffle, first half to client 1 (client 1 gets the extra sample when the
/// count is odd). NonIID: client 1 receives remapped classes {0,1}, client 2
/// receives {2,3}.
inline std::pair<ClientDataset, ClientDataset> partition(const std::vector<LabeledImage>& train,
                                                         PartitionMode mode,
                                                         std::uint64_t seed) {
    if (train.empty()) throw error("partition: empty training set");
    ClientDataset c1, c2;
    c1.client_id = 1;
    c2.client_id = 2;
    if (mode == PartitionMode::IID) {
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(seed);
        std::shuffle(order.begin(), order.end(), rng);
        const std::size_t first = (train.size() + 1) / 2;
        for (std::size_t i = 0; i < order.size(); ++i)
            (i < first ? c1 : c2).samples.push_back(train[order[i]]);
    } else {
        std::array<bool, kClasses> present{};
        for (const auto& s : train) present[s.label] = true;
        for (int c = 0; c < kClasses; ++c)
            if (!present[c])
                throw error("partition NonIID: class " + std::to_string(c) +
                            " missing from training set");
        for (const auto& s : train) (s.label <= 1 ? c1 : c2).samples.push_back(s);
    }
    for (auto* c : {&c1, &c2})
        for (const auto& s : c->samples) ++c->label_histogram[s.label];
    return {std::move(c1), std::move(c2)};
}

} // namespace fedair::data
