// Acceptance gate: every release-blocking behavior, one PASS/FAIL line each.
// Runs the desk-scale configuration (500 train / 100 test per class) end to
// end; expensive sessions are shared across criteria. Exit code = #failures.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

#include "fedair/experiment.hpp"
#include "fedair/synthgen.hpp"

using namespace fedair;

namespace {

double now_s() {
    using clock = std::chrono::steady_clock;
    static const auto t0 = clock::now();
    return std::chrono::duration<double>(clock::now() - t0).count();
}

struct Gate {
    int failures = 0;

    void report(int idx, const char* name, bool pass, const std::string& detail) {
        std::printf("%s %d. %-22s %s\n", pass ? "PASS" : "FAIL", idx, name, detail.c_str());
        std::fflush(stdout);
        if (!pass) ++failures;
    }
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

exp::ExperimentConfig desk_config(const data::SynthPaths& p) {
    exp::ExperimentConfig c;
    c.train_images = p.train_images;
    c.train_labels = p.train_labels;
    c.test_images = p.test_images;
    c.test_labels = p.test_labels;
    c.max_per_class = 500;
    c.seed = 1;
    return c; // iid, 10 epochs, lr 3e-4, threshold 0.98, max 15, noiseless off
}

bool trace_conforms(const ctrl::RoundTrace& tr, std::string& why) {
    ctrl::ProtocolValidator v;
    try {
        for (const auto& m : tr.control_log) v.observe(m);
    } catch (const protocol_error& e) {
        why = e.what();
        return false;
    }
    if (!v.round_complete()) {
        why = "incomplete control sequence";
        return false;
    }
    for (std::size_t i = 0; i < tr.data_busy.size(); ++i)
        for (std::size_t j = i + 1; j < tr.data_busy.size(); ++j) {
            const auto& a = tr.data_busy[i];
            const auto& b = tr.data_busy[j];
            if (!(a.end <= b.begin || b.end <= a.begin)) {
                why = "overlapping data slots " + a.label + " / " + b.label;
                return false;
            }
        }
    for (std::size_t i = 1; i < tr.events.size(); ++i)
        if (tr.events[i].t < tr.events[i - 1].t - 1e-12) {
            why = "events out of time order";
            return false;
        }
    return true;
}

} // namespace

int main() {
    Gate gate;
    std::printf("desk-scale acceptance (500/class train, 100/class test)\n");

    const auto dir = std::filesystem::temp_directory_path() / "fedair_acceptance";
    data::SynthConfig synth;
    synth.train_per_class = 500;
    synth.test_per_class = 100;
    synth.seed = 1;
    const auto paths = data::generate_dataset(dir.string(), synth);

    // ---- shared desk-scale sessions -------------------------------------
    exp::ExperimentConfig iid10 = desk_config(paths);
    iid10.channel = "noiseless";

    exp::ExperimentConfig noniid10 = iid10;
    noniid10.partition = "noniid";
    noniid10.learning_rate = 5e-4;
    noniid10.accuracy_threshold = 0.88;

    exp::ExperimentConfig iid5 = iid10;
    iid5.epochs = 5;
    exp::ExperimentConfig noniid5 = noniid10;
    noniid5.epochs = 5;
    noniid5.max_rounds = 8; // 5-epoch non-IID needs the cap at desk scale

    exp::ResultBundle r_iid10, r_noniid10, r_iid5, r_noniid5;

    // 1. IID convergence
    try {
        const double t0 = now_s();
        r_iid10 = exp::run_experiment(iid10);
        const double acc = r_iid10.session.final_accuracy();
        gate.report(1, "iid-convergence", acc >= 0.95 && r_iid10.session.converged,
                    fmt("final accuracy %.4f >= 0.95 in %d rounds (%.1fs wall)", acc,
                        r_iid10.session.rounds_executed, now_s() - t0));
    } catch (const std::exception& e) {
        gate.report(1, "iid-convergence", false, e.what());
    }

    // 2. non-IID degradation under matched settings
    try {
        const double t0 = now_s();
        r_noniid10 = exp::run_experiment(noniid10);
        const double gap = r_iid10.session.final_accuracy() - r_noniid10.session.final_accuracy();
        gate.report(2, "noniid-degradation", gap >= 0.03,
                    fmt("iid %.4f vs noniid %.4f: gap %.1f points >= 3 (%.1fs wall)",
                        r_iid10.session.final_accuracy(), r_noniid10.session.final_accuracy(),
                        gap * 100.0, now_s() - t0));
    } catch (const std::exception& e) {
        gate.report(2, "noniid-degradation", false, e.what());
    }

    // 3. rounds-to-converge ordering
    try {
        const double t0 = now_s();
        r_iid5 = exp::run_experiment(iid5);
        r_noniid5 = exp::run_experiment(noniid5);
        const int ri10 = r_iid10.session.rounds_executed;
        const int rn10 = r_noniid10.session.rounds_executed;
        const int ri5 = r_iid5.session.rounds_executed;
        const int rn5 = r_noniid5.session.rounds_executed;
        const bool pass = rn10 > ri10 && ri5 >= ri10 && rn5 >= rn10;
        gate.report(3, "round-ordering", pass,
                    fmt("rounds iid10=%d noniid10=%d iid5=%d noniid5=%d (%.1fs wall)", ri10, rn10,
                        ri5, rn5, now_s() - t0));
    } catch (const std::exception& e) {
        gate.report(3, "round-ordering", false, e.what());
    }

    // 4. transmit-power dependence: packet corruption and learning outcome
    try {
        const double t0 = now_s();
        std::mt19937_64 rng(1);
        std::vector<float> payload(200 * 4);
        for (auto& v : payload) v = float(int(rng() % 2000) - 1000) / 97.0f;
        const auto train = codec::packetize_params(payload);
        std::vector<double> frac;
        for (double tx : {0.0, 5.0, 10.0, 15.0}) {
            phy::PhyConfig pc;
            pc.tx_power_db = tx;
            pc.noise_floor_db = 5.0;
            phy::PhyContext ctx(pc);
            double mean = 0.0;
            for (std::uint64_t s = 0; s < 20; ++s) {
                const auto out = phy::transmit_train(train, ctx, phy::make_channel(pc, s));
                mean += double(out.corrupted_count()) / double(train.packets.size());
            }
            frac.push_back(mean / 20.0);
        }
        bool monotone = frac.front() > frac.back();
        for (std::size_t i = 1; i < frac.size(); ++i) monotone &= frac[i] <= frac[i - 1] + 1e-9;

        auto mean_acc_at = [&](double tx) {
            double acc = 0.0;
            for (std::uint64_t s = 1; s <= 3; ++s) {
                exp::ExperimentConfig c = noniid10;
                c.channel = "awgn";
                c.noise_floor_db = 5.0;
                c.tx_power_db = tx;
                c.channel_seed = 100 + s;
                c.accuracy_threshold = 1.01; // always run the fixed round budget
                c.max_rounds = 3;
                acc += exp::run_experiment(c).session.final_accuracy();
            }
            return acc / 3.0;
        };
        const double lo = mean_acc_at(0.0), hi = mean_acc_at(15.0);
        gate.report(4, "power-dependence", monotone && hi >= lo,
                    fmt("corruption {%.3f %.3f %.3f %.3f} non-increasing; 3-round accuracy "
                        "%.3f@0dB -> %.3f@15dB (%.1fs wall)",
                        frac[0], frac[1], frac[2], frac[3], lo, hi, now_s() - t0));
    } catch (const std::exception& e) {
        gate.report(4, "power-dependence", false, e.what());
    }

    // 5. federation transfers knowledge a lone client never gets
    try {
        const double t0 = now_s();
        if (!r_noniid10.has_cross) throw error("criterion 2 session unavailable");
        const double x1 = r_noniid10.cross.client1;
        const double x2 = r_noniid10.cross.client2;
        const auto lone = exp::run_local_baseline(noniid10, r_noniid10.session.rounds_executed);
        exp::LoadedData d = exp::load_for(noniid10);
        const double lone_cross =
            exp::cross_accuracy(lone, d.test, data::PartitionMode::NonIID).client1;
        gate.report(5, "knowledge-transfer", x1 >= 0.75 && x2 >= 0.75 && lone_cross <= 0.10,
                    fmt("federated cross %.3f/%.3f >= 0.75; lone-client cross %.3f <= 0.10 "
                        "(%.1fs wall)",
                        x1, x2, lone_cross, now_s() - t0));
    } catch (const std::exception& e) {
        gate.report(5, "knowledge-transfer", false, e.what());
    }

    // 6. codec + phy recover a full model over the link; BER honors the bound
    try {
        const double t0 = now_s();
        const auto model = fl::init_model(99);
        const auto train = codec::packetize_params(model.values);
        phy::PhyContext ctx{phy::PhyConfig{}};
        phy::ChannelModel clean;
        clean.noiseless = true;
        const auto out = phy::transmit_train(train, ctx, clean);
        const auto rebuilt =
            codec::reassemble(out.packets, model.values.size(), codec::GapPolicy::ZeroFill);
        const bool lossless = rebuilt.values == model.values && out.corrupted_count() == 0;

        auto chan = phy::make_channel(phy::PhyConfig{}, 1234);
        std::mt19937_64 rng(11);
        long long errors = 0, total = 0;
        for (int t = 0; t < 9804; ++t) {
            BitBuffer bits;
            for (int i = 0; i < 204; ++i) bits.append_bit(rng() & 1);
            phy::ChannelModel per = chan;
            per.seed = derive_seed(chan.seed, t);
            const auto rx = phy::channel(phy::modulate(bits, ctx), per);
            const auto d = phy::demodulate(rx, ctx, 204);
            for (int i = 0; i < 204; ++i) errors += d.bits.bit(i) != bits.bit(i);
            total += 204;
        }
        const double ber = double(errors) / double(total);
        const double bound = 0.5 * std::exp(-10.0);
        const bool ber_ok = ber <= 2.0 * bound && ber >= 0.5 * bound && errors > 0;
        gate.report(6, "link-fidelity", lossless && ber_ok,
                    fmt("12099-param transfer %s; BER %.2e vs bound %.2e (x%.2f) over %lld bits "
                        "(%.1fs wall)",
                        lossless ? "bit-exact" : "CORRUPTED", ber, bound, ber / bound, total,
                        now_s() - t0));
    } catch (const std::exception& e) {
        gate.report(6, "link-fidelity", false, e.what());
    }

    // 7. learning numerics: analytic gradient, reference loss, exact averaging
    try {
        const double t0 = now_s();
        exp::LoadedData d = exp::load_for(iid10);
        std::vector<data::LabeledImage> batch(d.test.begin(), d.test.begin() + 8);

        double worst = 0.0;
        for (std::uint64_t seed : {11ull, 12ull}) {
            const auto m = fl::init_model(seed);
            const auto [loss, grad] = fl::loss_and_gradient(m, batch);
            auto w = fl::detail::widen(m.values);
            const double h = 1e-4;
            std::mt19937_64 rng(seed);
            for (int k = 0; k < 120; ++k) {
                const std::size_t i = rng() % w.size();
                const double keep = w[i];
                w[i] = keep + h;
                const double up = fl::detail::loss_double(m.layer_shapes, w, batch);
                w[i] = keep - h;
                const double dn = fl::detail::loss_double(m.layer_shapes, w, batch);
                w[i] = keep;
                const double fd = (up - dn) / (2 * h);
                worst = std::max(worst, std::abs(grad[i] - fd) / std::max(1e-3, std::abs(fd)));
            }
        }

        fl::ModelParams zero;
        zero.layer_shapes = fl::default_shapes();
        zero.values.assign(zero.expected_size(), 0.0f);
        const double ln4_err =
            std::abs(fl::loss_and_gradient(zero, batch).first - std::log(4.0));

        fl::ModelParams a, b;
        a.layer_shapes = b.layer_shapes = {{1, 1}};
        a.values = {0.0f, 2.0f};
        b.values = {2.0f, 0.0f};
        const auto avg = fl::fed_avg({{a, 1}, {b, 3}});
        const bool avg_ok = avg.values[0] == 1.5f && avg.values[1] == 0.5f;

        fl::ModelParams p;
        p.layer_shapes = {{1, 1}};
        p.values = {1.0f, 0.0f};
        fl::AdamState st(2);
        fl::TrainConfig tc;
        tc.learning_rate = 0.1;
        fl::adam_step(p, {1.0, 0.0}, st, tc);
        const bool adam_ok = std::abs(p.values[0] - 0.9) < 1e-6 && p.values[1] == 0.0f;

        gate.report(7, "learning-numerics",
                    worst < 1e-4 && ln4_err < 1e-6 && avg_ok && adam_ok,
                    fmt("grad vs finite-diff worst rel err %.2e; uniform loss off ln4 by %.1e; "
                        "weighted mean and adam step exact (%.1fs wall)",
                        worst, ln4_err, now_s() - t0));
    } catch (const std::exception& e) {
        gate.report(7, "learning-numerics", false, e.what());
    }

    // 8. determinism and protocol conformance of every executed round
    try {
        const double t0 = now_s();
        const auto rerun = exp::run_experiment(iid10);
        const bool identical =
            rerun.session.accuracy == r_iid10.session.accuracy &&
            rerun.session.final_model.values == r_iid10.session.final_model.values;

        std::string why;
        bool conforms = true;
        std::size_t rounds_checked = 0;
        const exp::ResultBundle* bundles[] = {&r_iid10, &r_noniid10, &r_iid5, &r_noniid5, &rerun};
        for (const auto* bundle : bundles) {
            for (const auto& tr : bundle->session.traces) {
                ++rounds_checked;
                if (!trace_conforms(tr, why)) {
                    conforms = false;
                    break;
                }
            }
            if (!conforms) break;
        }
        gate.report(8, "determinism-protocol", identical && conforms,
                    identical && conforms
                        ? fmt("rerun bit-identical; %zu round traces conform (%.1fs wall)",
                              rounds_checked, now_s() - t0)
                        : (identical ? "trace violation: " + why : std::string("rerun diverged")));
    } catch (const std::exception& e) {
        gate.report(8, "determinism-protocol", false, e.what());
    }

    std::printf("%d of 8 criteria passed (%.1fs total)\n", 8 - gate.failures, now_s());
    return gate.failures;
}
