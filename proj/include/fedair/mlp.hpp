#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fedair/common.hpp"
#include "fedair/mnist.hpp"

namespace fedair::fl {

using LayerShape = std::pair<int, int>; // (in_dim, out_dim)

/// Flattened MLP parameters, the unit of exchange between clients and the
/// server. Layer-major order: layer 1 weights row-major (in x out), layer 1
/// biases, layer 2 weights, ..., layer 3 biases. Values are 32-bit floats,
/// matching the wire format.
struct ModelParams {
    std::vector<LayerShape> layer_shapes;
    std::vector<float> values;

    std::size_t expected_size() const {
        std::size_t n = 0;
        for (const auto& [in, out] : layer_shapes) n += std::size_t(in) * out + out;
        return n;
    }

    void validate() const {
        if (values.size() != expected_size())
            throw error("ModelParams: value count " + std::to_string(values.size()) +
                        " does not match shapes (expected " + std::to_string(expected_size()) + ")");
        for (float v : values)
            if (!std::isfinite(v)) throw error("ModelParams: non-finite value");
    }
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 10;
    int batch_size = 32;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 0;

    void validate() const {
        if (learning_rate <= 0) throw error("TrainConfig: learning_rate must be > 0");
        if (!(0 < adam_beta1 && adam_beta1 < adam_beta2 && adam_beta2 < 1))
            throw error("TrainConfig: require 0 < beta1 < beta2 < 1");
        if (epochs < 0) throw error("TrainConfig: epochs must be >= 0");
        if (batch_size <= 0) throw error("TrainConfig: batch_size must be positive");
    }
};

struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    long step_count = 0;

    explicit AdamState(std::size_t n = 0) : first_moment(n, 0.0), second_moment(n, 0.0) {}
};

inline std::vector<LayerShape> default_shapes(int hidden1 = 15, int hidden2 = 16) {
    return {{data::kPixels, hidden1}, {hidden1, hidden2}, {hidden2, data::kClasses}};
}

/// Server-side initialization: weights uniform in (-sqrt(1/in_dim),
/// +sqrt(1/in_dim)), biases zero. 784->15->16->4 by default (12,099
/// parameters).
inline ModelParams init_model(std::uint64_t seed, int hidden1 = 15, int hidden2 = 16) {
    ModelParams p;
    p.layer_shapes = default_shapes(hidden1, hidden2);
    p.values.reserve(p.expected_size());
    std::mt19937_64 rng(seed);
    for (const auto& [in, out] : p.layer_shapes) {
        const double lim = std::sqrt(1.0 / in);
        std::uniform_real_distribution<double> u(-lim, lim);
        for (long i = 0; i < long(in) * out; ++i) p.values.push_back(static_cast<float>(u(rng)));
        for (int i = 0; i < out; ++i) p.values.push_back(0.0f);
    }
    return p;
}

namespace detail {

/// Forward pass on a double-precision weight vector. This is the evaluation
/// path the finite-difference tests perturb; it never touches the analytic
/// gradient code below.
inline std::vector<double> forward_double(const std::vector<LayerShape>& shapes,
                                          const std::vector<double>& w,
                                          const std::vector<float>& pixels,
                                          std::vector<std::vector<double>>* activations = nullptr) {
    std::vector<double> cur(pixels.begin(), pixels.end());
    if (activations) {
        activations->clear();
        activations->push_back(cur);
    }
    std::size_t off = 0;
    for (std::size_t l = 0; l < shapes.size(); ++l) {
        const auto [in, out] = shapes[l];
        std::vector<double> next(out);
        for (int j = 0; j < out; ++j) next[j] = w[off + std::size_t(in) * out + j]; // bias
        for (int i = 0; i < in; ++i) {
            const double x = cur[i];
            if (x == 0.0) continue;
            const double* row = &w[off + std::size_t(i) * out];
            for (int j = 0; j < out; ++j) next[j] += x * row[j];
        }
        if (l + 1 < shapes.size())
            for (double& v : next) v = std::max(v, 0.0); // ReLU on hidden layers only
        off += std::size_t(in) * out + out;
        cur = std::move(next);
        if (activations) activations->push_back(cur);
    }
    return cur;
}

inline std::vector<double> widen(const std::vector<float>& v) {
    return std::vector<double>(v.begin(), v.end());
}

/// Mean softmax cross-entropy over a batch, double-precision weights.
inline double loss_double(const std::vector<LayerShape>& shapes, const std::vector<double>& w,
                          const std::vector<data::LabeledImage>& batch) {
    double total = 0.0;
    for (const auto& s : batch) {
        const auto z = forward_double(shapes, w, s.pixels);
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - zmax);
        total += std::log(sum) - (z[s.label] - zmax);
    }
    return total / batch.size();
}

} // namespace detail

/// logits = L3(ReLU(L2(ReLU(L1(x))))), no activation after the final layer.
inline std::vector<double> forward(const ModelParams& params, const std::vector<float>& pixels) {
    params.validate();
    if (pixels.size() != std::size_t(params.layer_shapes.front().first))
        throw error("forward: input size mismatch");
    for (float v : pixels)
        if (!std::isfinite(v)) throw error("forward: non-finite input");
    return detail::forward_double(params.layer_shapes, detail::widen(params.values), pixels);
}

/// Mean softmax cross-entropy and its exact analytic gradient over the batch.
inline std::pair<double, std::vector<double>> loss_and_gradient(
    const ModelParams& params, const std::vector<data::LabeledImage>& batch) {
    if (batch.empty()) throw error("loss_and_gradient: empty batch");
    const auto& shapes = params.layer_shapes;
    const auto w = detail::widen(params.values);
    std::vector<double> grad(w.size(), 0.0);
    double total_loss = 0.0;

    const std::size_t nlayers = shapes.size();
    std::vector<std::size_t> offsets(nlayers);
    {
        std::size_t off = 0;
        for (std::size_t l = 0; l < nlayers; ++l) {
            offsets[l] = off;
            off += std::size_t(shapes[l].first) * shapes[l].second + shapes[l].second;
        }
    }

    std::vector<std::vector<double>> acts;
    for (const auto& s : batch) {
        const auto z = detail::forward_double(shapes, w, s.pixels, &acts);
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        std::vector<double> p(z.size());
        for (std::size_t j = 0; j < z.size(); ++j) {
            p[j] = std::exp(z[j] - zmax);
            sum += p[j];
        }
        for (auto& v : p) v /= sum;
        total_loss += std::log(sum) - (z[s.label] - zmax);

        // delta at output: softmax - onehot
        std::vector<double> delta(p);
        delta[s.label] -= 1.0;

        for (std::size_t l = nlayers; l-- > 0;) {
            const auto [in, out] = shapes[l];
            const auto& a_in = acts[l];
            double* gw = &grad[offsets[l]];
            double* gb = &grad[offsets[l] + std::size_t(in) * out];
            for (int j = 0; j < out; ++j) gb[j] += delta[j];
            for (int i = 0; i < in; ++i) {
                const double a = a_in[i];
                if (a == 0.0) continue;
                double* row = gw + std::size_t(i) * out;
                for (int j = 0; j < out; ++j) row[j] += a * delta[j];
            }
            if (l > 0) {
                std::vector<double> prev(in, 0.0);
                const double* wrow = &w[offsets[l]];
                for (int i = 0; i < in; ++i) {
                    if (a_in[i] <= 0.0) continue; // ReLU gate
                    double acc = 0.0;
                    const double* r = wrow + std::size_t(i) * out;
                    for (int j = 0; j < out; ++j) acc += r[j] * delta[j];
                    prev[i] = acc;
                }
                delta = std::move(prev);
            }
        }
    }
    const double inv = 1.0 / batch.size();
    for (auto& g : grad) g *= inv;
    return {total_loss * inv, std::move(grad)};
}

/// Standard Adam update with bias correction; parameters are written back in
/// 32-bit precision, moments stay in 64-bit.
inline void adam_step(ModelParams& params, const std::vector<double>& grad, AdamState& state,
                      const TrainConfig& config) {
    if (grad.size() != params.values.size() || state.first_moment.size() != grad.size())
        throw error("adam_step: length mismatch");
    ++state.step_count;
    const double b1 = config.adam_beta1, b2 = config.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, state.step_count);
    const double c2 = 1.0 - std::pow(b2, state.step_count);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        m = b1 * m + (1.0 - b1) * grad[i];
        v = b2 * v + (1.0 - b2) * grad[i] * grad[i];
        const double update = config.learning_rate * (m / c1) / (std::sqrt(v / c2) + config.adam_epsilon);
        params.values[i] = static_cast<float>(params.values[i] - update);
    }
}

/// Run `epochs` passes of seeded-shuffled mini-batches. The optimizer state
/// is fresh unless `carry` points at a matching AdamState, in which case
/// moments continue from (and are written back to) it. Throws on divergence,
/// naming the epoch and batch.
inline ModelParams train_local(const ModelParams& start, const data::ClientDataset& data,
                               const TrainConfig& config, AdamState* carry = nullptr) {
    config.validate();
    start.validate();
    if (data.samples.empty()) throw error("train_local: empty dataset");
    ModelParams model = start;
    AdamState state(model.values.size());
    if (carry && carry->first_moment.size() == model.values.size()) state = *carry;
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(data.samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<data::LabeledImage> batch;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        std::size_t batch_index = 0;
        for (std::size_t s = 0; s < order.size(); s += config.batch_size, ++batch_index) {
            batch.clear();
            const std::size_t end = std::min(order.size(), s + config.batch_size);
            for (std::size_t i = s; i < end; ++i) batch.push_back(data.samples[order[i]]);
            const auto [loss, grad] = loss_and_gradient(model, batch);
            if (!std::isfinite(loss))
                throw error("train_local: divergence (non-finite loss) at epoch " +
                            std::to_string(epoch) + " batch " + std::to_string(batch_index));
            adam_step(model, grad, state, config);
        }
    }
    if (carry) *carry = std::move(state);
    return model;
}

/// Coordinatewise weighted mean, weights proportional to sample counts.
inline ModelParams fed_avg(const std::vector<std::pair<ModelParams, std::size_t>>& updates) {
    if (updates.empty()) throw error("fed_avg: no updates");
    const auto& shapes = updates.front().first.layer_shapes;
    double total = 0.0;
    for (const auto& [p, n] : updates) {
        if (p.layer_shapes != shapes) throw error("fed_avg: layer shape mismatch");
        if (n == 0) throw error("fed_avg: zero sample count");
        total += double(n);
    }
    ModelParams out;
    out.layer_shapes = shapes;
    std::vector<double> acc(updates.front().first.values.size(), 0.0);
    for (const auto& [p, n] : updates) {
        const double w = double(n) / total;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * double(p.values[i]);
    }
    out.values.resize(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = static_cast<float>(acc[i]);
    return out;
}

using Confusion = std::array<std::array<std::size_t, data::kClasses>, data::kClasses>;

struct EvalResult {
    double accuracy = 0.0;
    Confusion confusion{}; // confusion[true][pred]
};

/// Argmax prediction; accuracy = trace / total.
inline EvalResult evaluate(const ModelParams& params, const std::vector<data::LabeledImage>& test) {
    if (test.empty()) throw error("evaluate: empty test set");
    EvalResult r;
    const auto w = detail::widen(params.values);
    for (const auto& s : test) {
        const auto z = detail::forward_double(params.layer_shapes, w, s.pixels);
        const int pred = int(std::max_element(z.begin(), z.end()) - z.begin());
        ++r.confusion[s.label][pred];
    }
    std::size_t correct = 0;
    for (int c = 0; c < data::kClasses; ++c) correct += r.confusion[c][c];
    r.accuracy = double(correct) / double(test.size());
    return r;
}

} // namespace fedair::fl
