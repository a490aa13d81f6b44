#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>

#include "fedair/mlp.hpp"
#include "support.hpp"

using namespace fedair;
using fl::ModelParams;

namespace {

std::vector<data::LabeledImage> sample_batch(std::size_t n, std::uint64_t seed) {
    auto d = testsup::load(testsup::dataset(60, 25));
    std::mt19937_64 rng(seed);
    std::shuffle(d.train.begin(), d.train.end(), rng);
    d.train.resize(n);
    return d.train;
}

data::ClientDataset as_client(std::vector<data::LabeledImage> samples, int id = 1) {
    data::ClientDataset c;
    c.client_id = id;
    c.samples = std::move(samples);
    for (const auto& s : c.samples) ++c.label_histogram[s.label];
    return c;
}

} // namespace

TEST_CASE("default architecture has 12,099 parameters") {
    // 784*15 + 15 + 15*16 + 16 + 16*4 + 4, written out.
    const std::size_t expect = 784 * 15 + 15 + 15 * 16 + 16 + 16 * 4 + 4;
    REQUIRE(expect == 12099);
    auto m = fl::init_model(1);
    REQUIRE(m.values.size() == expect);
    REQUIRE(m.expected_size() == expect);
    REQUIRE(m.layer_shapes == fl::default_shapes());
}

TEST_CASE("init draws weights within +/- sqrt(1/fan_in) and zeroes biases") {
    auto m = fl::init_model(7);
    std::size_t off = 0;
    for (auto [in, out] : m.layer_shapes) {
        const double lim = std::sqrt(1.0 / in);
        double mean = 0.0;
        for (std::size_t i = 0; i < std::size_t(in) * out; ++i) {
            const float v = m.values[off + i];
            REQUIRE(std::abs(v) <= lim);
            mean += v;
        }
        mean /= double(in) * out;
        if (std::size_t(in) * out > 1000) CHECK(std::abs(mean) < lim / 5);
        for (int j = 0; j < out; ++j) REQUIRE(m.values[off + std::size_t(in) * out + j] == 0.0f);
        off += std::size_t(in) * out + out;
    }
    REQUIRE(off == m.values.size());

    auto m2 = fl::init_model(7);
    REQUIRE(m.values == m2.values);
    auto m3 = fl::init_model(8);
    REQUIRE(m.values != m3.values);
}

TEST_CASE("forward validates inputs") {
    auto m = fl::init_model(1);
    std::vector<float> px(data::kPixels, 0.5f);
    REQUIRE(fl::forward(m, px).size() == 4);
    REQUIRE_THROWS(fl::forward(m, std::vector<float>(10, 0.0f)));
    px[3] = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS(fl::forward(m, px));
    ModelParams broken = m;
    broken.values.pop_back();
    REQUIRE_THROWS(fl::forward(broken, std::vector<float>(data::kPixels, 0.0f)));
    broken = m;
    broken.values[0] = std::numeric_limits<float>::infinity();
    REQUIRE_THROWS(fl::forward(broken, std::vector<float>(data::kPixels, 0.0f)));
}

TEST_CASE("all-zero parameters give uniform softmax and ln(4) loss") {
    ModelParams zero;
    zero.layer_shapes = fl::default_shapes();
    zero.values.assign(zero.expected_size(), 0.0f);
    auto batch = sample_batch(16, 3);
    auto [loss, grad] = fl::loss_and_gradient(zero, batch);
    REQUIRE(loss == Catch::Approx(std::log(4.0)).margin(1e-6));

    // With zero weights the only nonzero gradients are the final-layer biases:
    // d/db_j = mean(softmax_j - onehot_j) = 0.25 - class_freq_j.
    std::array<double, 4> freq{};
    for (const auto& s : batch) freq[s.label] += 1.0 / batch.size();
    const std::size_t bias3 = zero.values.size() - 4;
    for (int j = 0; j < 4; ++j)
        REQUIRE(grad[bias3 + j] == Catch::Approx(0.25 - freq[j]).margin(1e-12));
    for (std::size_t i = 0; i < bias3; ++i) REQUIRE(grad[i] == 0.0);
}

TEST_CASE("analytic gradient matches central finite differences") {
    // Oracle: the loss recomputed through the forward-only path at w +/- h.
    const double h = 1e-4;
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        auto m = fl::init_model(seed);
        auto batch = sample_batch(8, seed * 31 + 7);
        auto [loss, grad] = fl::loss_and_gradient(m, batch);
        REQUIRE(std::isfinite(loss));

        auto w = fl::detail::widen(m.values);
        auto fd_at = [&](std::size_t i) {
            const double keep = w[i];
            w[i] = keep + h;
            const double up = fl::detail::loss_double(m.layer_shapes, w, batch);
            w[i] = keep - h;
            const double dn = fl::detail::loss_double(m.layer_shapes, w, batch);
            w[i] = keep;
            return (up - dn) / (2 * h);
        };

        std::vector<std::size_t> coords;
        const std::size_t l2_begin = 784 * 15 + 15;
        for (std::size_t i = l2_begin; i < m.values.size(); ++i) coords.push_back(i);
        std::mt19937_64 rng(seed);
        for (int k = 0; k < 60; ++k) coords.push_back(rng() % l2_begin);

        for (std::size_t i : coords) {
            const double fd = fd_at(i);
            REQUIRE_THAT(grad[i], Catch::Matchers::WithinAbs(fd, 1e-7 + 1e-4 * std::abs(fd)));
        }
    }
}

TEST_CASE("gradient of a duplicated batch equals gradient of the batch") {
    auto m = fl::init_model(11);
    auto batch = sample_batch(6, 17);
    auto twice = batch;
    twice.insert(twice.end(), batch.begin(), batch.end());
    auto [l1, g1] = fl::loss_and_gradient(m, batch);
    auto [l2, g2] = fl::loss_and_gradient(m, twice);
    REQUIRE(l1 == Catch::Approx(l2).margin(1e-12));
    for (std::size_t i = 0; i < g1.size(); ++i)
        REQUIRE(g1[i] == Catch::Approx(g2[i]).margin(1e-12));
}

TEST_CASE("adam step reproduces the hand-computed update") {
    // One parameter with gradient 1.0, lr 0.1: m=0.1, v=0.001, bias
    // corrections 0.1 and 0.001, so the update is lr/(1+eps) ~ 0.1.
    ModelParams p;
    p.layer_shapes = {{1, 1}};
    p.values = {1.0f, 0.0f};
    fl::AdamState st(2);
    fl::TrainConfig cfg;
    cfg.learning_rate = 0.1;
    fl::adam_step(p, {1.0, 0.0}, st, cfg);
    REQUIRE(st.step_count == 1);
    REQUIRE(p.values[0] == Catch::Approx(0.9).margin(1e-7));
    REQUIRE(p.values[1] == 0.0f); // zero gradient moves nothing

    // Constant gradient keeps the bias-corrected ratio at 1: another -0.1.
    fl::adam_step(p, {1.0, 0.0}, st, cfg);
    REQUIRE(p.values[0] == Catch::Approx(0.8).margin(2e-7));
    REQUIRE(st.step_count == 2);

    REQUIRE_THROWS(fl::adam_step(p, {1.0}, st, cfg)); // length mismatch
}

TEST_CASE("train_local with zero epochs returns the start bit-for-bit") {
    auto m = fl::init_model(5);
    auto client = as_client(sample_batch(20, 9));
    fl::TrainConfig cfg;
    cfg.epochs = 0;
    auto out = fl::train_local(m, client, cfg);
    REQUIRE(out.values == m.values);
}

TEST_CASE("train_local is deterministic in the shuffle seed") {
    auto m = fl::init_model(5);
    auto client = as_client(sample_batch(40, 9));
    fl::TrainConfig cfg;
    cfg.epochs = 2;
    cfg.learning_rate = 1e-3;
    cfg.seed = 100;
    auto a = fl::train_local(m, client, cfg);
    auto b = fl::train_local(m, client, cfg);
    REQUIRE(a.values == b.values);
    cfg.seed = 101;
    auto c = fl::train_local(m, client, cfg);
    REQUIRE(a.values != c.values);
}

TEST_CASE("train_local can overfit a single sample") {
    auto m = fl::init_model(2);
    auto client = as_client(sample_batch(1, 4));
    fl::TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 1;
    cfg.learning_rate = 1e-2;
    auto out = fl::train_local(m, client, cfg);
    const double loss =
        fl::detail::loss_double(out.layer_shapes, fl::detail::widen(out.values), client.samples);
    REQUIRE(loss < 0.01);
}

TEST_CASE("train_local reports divergence with epoch and batch") {
    auto m = fl::init_model(3);
    auto client = as_client(sample_batch(8, 6));
    fl::TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 8;
    cfg.learning_rate = 2e38; // drives float parameters to overflow
    REQUIRE_THROWS_WITH(fl::train_local(m, client, cfg),
                        Catch::Matchers::ContainsSubstring("divergence") &&
                            Catch::Matchers::ContainsSubstring("epoch"));
}

TEST_CASE("train_local validates inputs") {
    auto m = fl::init_model(3);
    fl::TrainConfig cfg;
    REQUIRE_THROWS(fl::train_local(m, data::ClientDataset{}, cfg));
    cfg.learning_rate = -1;
    REQUIRE_THROWS(fl::train_local(m, as_client(sample_batch(4, 1)), cfg));
    cfg = {};
    cfg.batch_size = 0;
    REQUIRE_THROWS(fl::train_local(m, as_client(sample_batch(4, 1)), cfg));
}

TEST_CASE("carried optimizer state continues across calls") {
    auto m = fl::init_model(9);
    auto client = as_client(sample_batch(32, 13));
    fl::TrainConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 5;

    fl::AdamState carry(m.values.size());
    auto first = fl::train_local(m, client, cfg, &carry);
    REQUIRE(carry.step_count > 0);
    const long steps_after_one = carry.step_count;

    cfg.seed = 6;
    auto resumed = fl::train_local(first, client, cfg, &carry);
    REQUIRE(carry.step_count == 2 * steps_after_one);
    auto fresh = fl::train_local(first, client, cfg); // same data, cold moments
    REQUIRE(resumed.values != fresh.values);
}

TEST_CASE("fed_avg reproduces hand-computed weighted means") {
    ModelParams a, b;
    a.layer_shapes = b.layer_shapes = {{1, 1}};
    a.values = {0.0f, 2.0f};
    b.values = {2.0f, 0.0f};
    auto avg = fl::fed_avg({{a, 1}, {b, 3}});
    REQUIRE(avg.values[0] == 1.5f); // (1*0 + 3*2)/4, exact in binary
    REQUIRE(avg.values[1] == 0.5f);
}

TEST_CASE("fed_avg of identical models is the identity") {
    auto m = fl::init_model(21);
    auto avg = fl::fed_avg({{m, 250}, {m, 251}});
    REQUIRE(avg.values == m.values);
}

TEST_CASE("fed_avg matches a brute-force mean and stays inside the hull") {
    auto a = fl::init_model(1), b = fl::init_model(2), c = fl::init_model(3);
    const std::size_t n1 = 1, n2 = 2, n3 = 5;
    auto avg = fl::fed_avg({{a, n1}, {b, n2}, {c, n3}});
    for (std::size_t i = 0; i < avg.values.size(); ++i) {
        const double expect =
            (double(n1) * a.values[i] + double(n2) * b.values[i] + double(n3) * c.values[i]) / 8.0;
        REQUIRE(avg.values[i] == Catch::Approx(expect).margin(1e-6));
        const float lo = std::min({a.values[i], b.values[i], c.values[i]});
        const float hi = std::max({a.values[i], b.values[i], c.values[i]});
        REQUIRE(avg.values[i] >= lo - 1e-6f);
        REQUIRE(avg.values[i] <= hi + 1e-6f);
    }
}

TEST_CASE("fed_avg rejects bad update lists") {
    auto m = fl::init_model(1);
    REQUIRE_THROWS(fl::fed_avg({}));
    REQUIRE_THROWS(fl::fed_avg({{m, 0}}));
    auto other = fl::init_model(1, 3, 3);
    REQUIRE_THROWS(fl::fed_avg({{m, 1}, {other, 1}}));
}

TEST_CASE("evaluate: equal logits predict class 0") {
    ModelParams zero;
    zero.layer_shapes = fl::default_shapes();
    zero.values.assign(zero.expected_size(), 0.0f);
    auto d = testsup::load(testsup::dataset(60, 25));
    auto r = fl::evaluate(zero, d.test);
    // Balanced synthetic test set: 25 per class, all predicted as class 0.
    REQUIRE(r.accuracy == Catch::Approx(0.25));
    std::size_t total = 0;
    for (int t = 0; t < 4; ++t)
        for (int p = 0; p < 4; ++p) {
            total += r.confusion[t][p];
            if (p != 0) REQUIRE(r.confusion[t][p] == 0);
        }
    REQUIRE(total == d.test.size());
    for (int t = 0; t < 4; ++t) REQUIRE(r.confusion[t][0] == 25);
}

TEST_CASE("evaluate is invariant to a constant shift of the output biases") {
    auto m = fl::init_model(14);
    auto d = testsup::load(testsup::dataset(60, 25));
    auto base = fl::evaluate(m, d.test);
    ModelParams shifted = m;
    for (int j = 0; j < 4; ++j) shifted.values[shifted.values.size() - 4 + j] += 2.5f;
    auto moved = fl::evaluate(shifted, d.test);
    REQUIRE(base.accuracy == moved.accuracy);
    REQUIRE(base.confusion == moved.confusion);
    REQUIRE_THROWS(fl::evaluate(m, {}));
}
