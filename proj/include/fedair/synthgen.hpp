#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "fedair/common.hpp"
#include "fedair/mnist.hpp"

namespace fedair::data {

/// Parameters of the procedural 4-class digit-like dataset used for
/// self-contained desk-scale runs. The generator writes standard IDX files,
/// so the rest of the pipeline is identical to running on real MNIST dumps.
struct SynthConfig {
    std::size_t train_per_class = 500;
    std::size_t test_per_class = 100;
    double pixel_noise = 0.30;  // stddev of additive Gaussian pixel noise
    int max_shift = 3;          // uniform integer translation in both axes
    double min_amplitude = 0.5; // per-image glyph intensity in [min,1]
    std::uint64_t seed = 1;
};

namespace detail {

/// Four separable glyphs: ring, vertical bar, horizontal bar, X.
inline std::array<std::vector<float>, 4> glyph_templates() {
    std::array<std::vector<float>, 4> t;
    for (auto& v : t) v.assign(kPixels, 0.0f);
    const double c = (kImageSide - 1) / 2.0;
    for (int y = 0; y < kImageSide; ++y) {
        for (int x = 0; x < kImageSide; ++x) {
            const double dy = y - c, dx = x - c;
            const double r = std::sqrt(dx * dx + dy * dy);
            const int i = y * kImageSide + x;
            t[0][i] = static_cast<float>(std::exp(-(r - 8.0) * (r - 8.0) / 3.0));
            t[1][i] = static_cast<float>(std::exp(-dx * dx / 3.0) * (std::abs(dy) < 9 ? 1.0 : 0.0));
            t[2][i] = static_cast<float>(std::exp(-dy * dy / 3.0) * (std::abs(dx) < 9 ? 1.0 : 0.0));
            const double d1 = std::abs(dy - dx) / std::sqrt(2.0);
            const double d2 = std::abs(dy + dx) / std::sqrt(2.0);
            t[3][i] = static_cast<float>((std::exp(-d1 * d1 / 2.0) + std::exp(-d2 * d2 / 2.0)) *
                                         (r < 11 ? 1.0 : 0.0));
        }
    }
    for (auto& v : t)
        for (auto& p : v) p = std::min(p, 1.0f);
    return t;
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
    const std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16),
                               std::uint8_t(v >> 8), std::uint8_t(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

} // namespace detail

inline void write_idx_images(const std::string& path,
                             const std::vector<std::vector<std::uint8_t>>& images) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot write " + path);
    detail::write_be32(out, kIdxImageMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(images.size()));
    detail::write_be32(out, kImageSide);
    detail::write_be32(out, kImageSide);
    for (const auto& img : images)
        out.write(reinterpret_cast<const char*>(img.data()), kPixels);
}

inline void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot write " + path);
    detail::write_be32(out, kIdxLabelMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), labels.size());
}

namespace detail {

inline void render_split(std::size_t per_class, std::mt19937_64& rng, const SynthConfig& cfg,
                         std::vector<std::vector<std::uint8_t>>& images,
                         std::vector<std::uint8_t>& labels) {
    static const auto tpl = glyph_templates();
    std::uniform_int_distribution<int> shift(-cfg.max_shift, cfg.max_shift);
    std::uniform_real_distribution<double> amp(cfg.min_amplitude, 1.0);
    std::normal_distribution<double> noise(0.0, cfg.pixel_noise);
    for (int cls = 0; cls < 4; ++cls) {
        for (std::size_t k = 0; k < per_class; ++k) {
            const int dx = shift(rng), dy = shift(rng);
            const double a = amp(rng);
            std::vector<std::uint8_t> img(kPixels);
            for (int y = 0; y < kImageSide; ++y) {
                for (int x = 0; x < kImageSide; ++x) {
                    // toroidal shift, same as the reference renderer
                    const int sy = ((y - dy) % kImageSide + kImageSide) % kImageSide;
                    const int sx = ((x - dx) % kImageSide + kImageSide) % kImageSide;
                    double v = a * tpl[cls][sy * kImageSide + sx] + noise(rng);
                    v = std::clamp(v, 0.0, 1.0);
                    img[y * kImageSide + x] = static_cast<std::uint8_t>(std::lround(v * 255.0));
                }
            }
            images.push_back(std::move(img));
            labels.push_back(static_cast<std::uint8_t>(cls));
        }
    }
    // interleave classes so file order is not sorted by label
    std::vector<std::size_t> order(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::uint8_t>> im2(images.size());
    std::vector<std::uint8_t> lb2(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        im2[i] = std::move(images[order[i]]);
        lb2[i] = labels[order[i]];
    }
    images = std::move(im2);
    labels = std::move(lb2);
}

} // namespace detail

struct SynthPaths {
    std::string train_images, train_labels, test_images, test_labels;
};

/// Generate the procedural dataset into `dir` as four IDX files with the
/// conventional MNIST names. Returns the paths.
inline SynthPaths generate_dataset(const std::string& dir, const SynthConfig& cfg) {
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::vector<std::uint8_t>> tr_img, te_img;
    std::vector<std::uint8_t> tr_lbl, te_lbl;
    detail::render_split(cfg.train_per_class, rng, cfg, tr_img, tr_lbl);
    detail::render_split(cfg.test_per_class, rng, cfg, te_img, te_lbl);
    SynthPaths p;
    p.train_images = dir + "/train-images-idx3-ubyte";
    p.train_labels = dir + "/train-labels-idx1-ubyte";
    p.test_images = dir + "/t10k-images-idx3-ubyte";
    p.test_labels = dir + "/t10k-labels-idx1-ubyte";
    write_idx_images(p.train_images, tr_img);
    write_idx_labels(p.train_labels, tr_lbl);
    write_idx_images(p.test_images, te_img);
    write_idx_labels(p.test_labels, te_lbl);
    return p;
}

} // namespace fedair::data
