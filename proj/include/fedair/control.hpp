#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "fedair/codec.hpp"
#include "fedair/common.hpp"
#include "fedair/mlp.hpp"
#include "fedair/mnist.hpp"
#include "fedair/phy.hpp"

namespace fedair::ctrl {

enum class Node { Client1, Client2, Server };
enum class MsgKind { AckReceived, StartTransmit, ActivateReceiver, ReceivedGlobalConfirm, HaltBroadcast };

inline const char* node_name(Node n) {
    switch (n) {
        case Node::Client1: return "client1";
        case Node::Client2: return "client2";
        default: return "server";
    }
}

inline const char* kind_name(MsgKind k) {
    switch (k) {
        case MsgKind::AckReceived: return "AckReceived";
        case MsgKind::StartTransmit: return "StartTransmit";
        case MsgKind::ActivateReceiver: return "ActivateReceiver";
        case MsgKind::ReceivedGlobalConfirm: return "ReceivedGlobalConfirm";
        default: return "HaltBroadcast";
    }
}

/// One message on the reliable side channel (the Zigbee stand-in).
struct ControlMessage {
    MsgKind kind;
    Node from;
    Node to;
    double timestamp = 0.0;
};

inline std::string describe(const ControlMessage& m) {
    return std::string(kind_name(m.kind)) + " " + node_name(m.from) + "->" + node_name(m.to);
}

/// Enforces the per-round control-channel order. Every round must produce
/// exactly this sequence:
///   AckReceived s->c1, StartTransmit s->c2, AckReceived s->c2,
///   ActivateReceiver s->c1, ActivateReceiver s->c2,
///   ReceivedGlobalConfirm c1->s, ReceivedGlobalConfirm c2->s,
///   HaltBroadcast s->c1, HaltBroadcast s->c2.
class ProtocolValidator {
  public:
    void observe(const ControlMessage& m) {
        if (m.from == m.to)
            throw protocol_error("distinct endpoints", describe(m));
        if (m.timestamp < last_t_)
            throw protocol_error("non-decreasing timestamps",
                                 describe(m) + " at " + std::to_string(m.timestamp));
        const ControlMessage expect = expected();
        if (m.kind != expect.kind || m.from != expect.from || m.to != expect.to)
            throw protocol_error(describe(expect), describe(m));
        last_t_ = m.timestamp;
        state_ = (state_ + 1) % kSequence.size();
    }

    bool round_complete() const { return state_ == 0; }
    void reset() { state_ = 0; }

  private:
    ControlMessage expected() const {
        const auto& [k, f, t] = kSequence[state_];
        return {k, f, t, last_t_};
    }

    static constexpr std::array<std::tuple<MsgKind, Node, Node>, 9> kSequence = {{
        {MsgKind::AckReceived, Node::Server, Node::Client1},
        {MsgKind::StartTransmit, Node::Server, Node::Client2},
        {MsgKind::AckReceived, Node::Server, Node::Client2},
        {MsgKind::ActivateReceiver, Node::Server, Node::Client1},
        {MsgKind::ActivateReceiver, Node::Server, Node::Client2},
        {MsgKind::ReceivedGlobalConfirm, Node::Client1, Node::Server},
        {MsgKind::ReceivedGlobalConfirm, Node::Client2, Node::Server},
        {MsgKind::HaltBroadcast, Node::Server, Node::Client1},
        {MsgKind::HaltBroadcast, Node::Server, Node::Client2},
    }};

    std::size_t state_ = 0;
    double last_t_ = 0.0;
};

/// Fig.-3-style decomposition of one communication round, simulated seconds.
struct RoundTimings {
    double t_c1_c1 = 0.0;        // client 1 local training
    double t_c2_c2 = 0.0;        // client 2 local training
    double t_c1_s = 0.0;         // client 1 -> server data transfer
    double t_c2_s = 0.0;         // client 2 -> server data transfer
    double t_s_s = 0.0;          // server aggregation
    double t_s_broadcast = 0.0;  // server -> clients data transfer
    double t_control = 0.0;      // control-channel overhead, itemized separately
    double total = 0.0;
};

struct TraceEvent {
    double t = 0.0;
    Node node = Node::Server;
    std::string what;
};

struct DataInterval {
    double begin = 0.0, end = 0.0;
    Node tx = Node::Server;
    std::string label;
};

struct RoundTrace {
    int round_index = 0;
    std::vector<TraceEvent> events;          // time-ordered
    std::vector<ControlMessage> control_log; // in protocol order
    std::vector<DataInterval> data_busy;     // TDMA slots actually used
    RoundTimings timings;
};

enum class TimingMode { Analytic, Measured };

struct RoundConfig {
    double control_latency_s = 0.005;
    double aggregate_seconds = 0.1;
    TimingMode timing_mode = TimingMode::Analytic;
    double seconds_per_epoch = 2.0; // analytic training cost
    double wallclock_scale = 1.0;   // measured mode: wall seconds * scale
    bool serial_compute = false;    // default: clients train concurrently
    bool strict_sync = false;       // abort the round on any sync loss
    bool persist_optimizer = false; // carry Adam moments across rounds
    codec::GapPolicy gap_policy = codec::GapPolicy::HoldPrevious;
};

struct LegStats {
    std::size_t failed = 0;      // CRC failures + lost frames
    std::size_t total = 0;
    std::size_t frames_lost = 0; // sync never found

    double failure_fraction() const { return total ? double(failed) / double(total) : 0.0; }
};

struct RoundOutcome {
    fl::ModelParams new_global; // the server-side aggregate
    RoundTrace trace;
    LegStats uplink1, uplink2, downlink1, downlink2;
    // What each client actually decoded from the broadcast (diagnostic; the
    // authoritative global for the next round is new_global).
    fl::ModelParams client1_received, client2_received;
};

namespace detail {

inline double train_seconds(const RoundConfig& rc, const fl::TrainConfig& tc, double wall_s) {
    if (rc.timing_mode == TimingMode::Measured) return wall_s * rc.wallclock_scale;
    return double(tc.epochs) * rc.seconds_per_epoch;
}

struct Clock {
    double t;
    RoundTrace& trace;
    ProtocolValidator& validator;
    double latency;

    void event(double at, Node n, std::string what) {
        trace.events.push_back({at, n, std::move(what)});
    }
    void control(MsgKind k, Node from, Node to) {
        ControlMessage m{k, from, to, t};
        validator.observe(m);
        trace.control_log.push_back(m);
        event(t, from, std::string("ctrl ") + describe(m));
        t += latency;
    }
    void data_slot(Node tx, const std::string& label, double airtime) {
        event(t, tx, "data-tx-start " + label);
        trace.data_busy.push_back({t, t + airtime, tx, label});
        t += airtime;
        event(t, tx, "data-tx-end " + label);
    }
};

} // namespace detail

/// One full communication round:
///  (1) both clients train locally; (2) client 1 transmits; (3) server ACKs;
///  (4) server signals client 2 to transmit; (5) client 2 transmits;
///  (6) server ACKs; (7) server aggregates; (8) server activates receivers and
///  broadcasts the new global; (9) clients confirm; (10) server halts.
/// The control channel is reliable; the data channel goes through phy-sim and
/// the reassembly gap policy.
inline RoundOutcome run_round(const fl::ModelParams& global, const data::ClientDataset& client1,
                              const data::ClientDataset& client2, const fl::TrainConfig& train_cfg,
                              const phy::PhyContext& phy_ctx, const phy::ChannelModel& channel,
                              int round_index, const RoundConfig& rc, double start_time = 0.0,
                              fl::AdamState* opt1 = nullptr, fl::AdamState* opt2 = nullptr) {
    if (round_index < 1) throw error("run_round: round_index starts at 1");
    global.validate();
    train_cfg.validate();

    RoundOutcome out;
    out.trace.round_index = round_index;
    ProtocolValidator validator;
    detail::Clock clk{start_time, out.trace, validator, rc.control_latency_s};
    clk.event(clk.t, Node::Server, "round-start " + std::to_string(round_index));

    // (1) local training; concurrent by default, so the round pays max() time
    fl::TrainConfig cfg1 = train_cfg, cfg2 = train_cfg;
    cfg1.seed = derive_seed(train_cfg.seed, 2 * std::uint64_t(round_index));
    cfg2.seed = derive_seed(train_cfg.seed, 2 * std::uint64_t(round_index) + 1);
    const auto wall0 = std::chrono::steady_clock::now();
    const fl::ModelParams trained1 =
        fl::train_local(global, client1, cfg1, rc.persist_optimizer ? opt1 : nullptr);
    const auto wall1 = std::chrono::steady_clock::now();
    const fl::ModelParams trained2 =
        fl::train_local(global, client2, cfg2, rc.persist_optimizer ? opt2 : nullptr);
    const auto wall2 = std::chrono::steady_clock::now();
    const double w1 = std::chrono::duration<double>(wall1 - wall0).count();
    const double w2 = std::chrono::duration<double>(wall2 - wall1).count();
    out.trace.timings.t_c1_c1 = detail::train_seconds(rc, cfg1, w1);
    out.trace.timings.t_c2_c2 = detail::train_seconds(rc, cfg2, w2);
    if (rc.serial_compute) {
        clk.event(clk.t, Node::Client1, "train-start");
        clk.event(clk.t + out.trace.timings.t_c1_c1, Node::Client1, "train-end");
        clk.event(clk.t + out.trace.timings.t_c1_c1, Node::Client2, "train-start");
        clk.t += out.trace.timings.t_c1_c1 + out.trace.timings.t_c2_c2;
        clk.event(clk.t, Node::Client2, "train-end");
    } else {
        clk.event(clk.t, Node::Client1, "train-start");
        clk.event(clk.t, Node::Client2, "train-start");
        clk.event(clk.t + out.trace.timings.t_c1_c1, Node::Client1, "train-end");
        clk.event(clk.t + out.trace.timings.t_c2_c2, Node::Client2, "train-end");
        clk.t += std::max(out.trace.timings.t_c1_c1, out.trace.timings.t_c2_c2);
    }

    const std::size_t n_values = global.values.size();
    auto leg_channel = [&](int leg) {
        phy::ChannelModel m = channel;
        m.seed = derive_seed(channel.seed, (std::uint64_t(round_index) << 2) | unsigned(leg));
        return m;
    };
    auto check_abort = [&](const phy::TransmitOutcome& tx, const char* leg) {
        if (rc.strict_sync && tx.frames_not_found > 0)
            throw error("round " + std::to_string(round_index) + " aborted: " +
                        std::to_string(tx.frames_not_found) + " frame(s) not found on " + leg);
    };

    // (2)(3) client 1 uplink, then server ACK over the control channel
    const codec::PacketTrain train1 = codec::packetize_params(trained1.values);
    const phy::TransmitOutcome up1 = phy::transmit_train(train1, phy_ctx, leg_channel(0));
    check_abort(up1, "client1 uplink");
    clk.data_slot(Node::Client1, "params client1->server", up1.airtime_s);
    out.trace.timings.t_c1_s = up1.airtime_s;
    clk.control(MsgKind::AckReceived, Node::Server, Node::Client1);

    // (4)(5)(6) server signals client 2; client 2 uplink; server ACK
    clk.control(MsgKind::StartTransmit, Node::Server, Node::Client2);
    const codec::PacketTrain train2 = codec::packetize_params(trained2.values);
    const phy::TransmitOutcome up2 = phy::transmit_train(train2, phy_ctx, leg_channel(1));
    check_abort(up2, "client2 uplink");
    clk.data_slot(Node::Client2, "params client2->server", up2.airtime_s);
    out.trace.timings.t_c2_s = up2.airtime_s;
    clk.control(MsgKind::AckReceived, Node::Server, Node::Client2);

    const codec::ReassemblyReport rx1 =
        codec::reassemble(up1.packets, n_values, rc.gap_policy, &global.values);
    const codec::ReassemblyReport rx2 =
        codec::reassemble(up2.packets, n_values, rc.gap_policy, &global.values);
    out.uplink1 = {rx1.failed.size(), train1.packets.size(), up1.frames_not_found};
    out.uplink2 = {rx2.failed.size(), train2.packets.size(), up2.frames_not_found};

    // (7) server-side FedAvg
    fl::ModelParams got1{global.layer_shapes, rx1.values};
    fl::ModelParams got2{global.layer_shapes, rx2.values};
    clk.event(clk.t, Node::Server, "aggregate-start");
    out.new_global = fl::fed_avg({{got1, client1.samples.size()}, {got2, client2.samples.size()}});
    clk.t += rc.aggregate_seconds;
    out.trace.timings.t_s_s = rc.aggregate_seconds;
    clk.event(clk.t, Node::Server, "aggregate-end");

    // (8) activate receivers, broadcast the new global in one data slot;
    // each client sees an independent noise realization of the same frames
    clk.control(MsgKind::ActivateReceiver, Node::Server, Node::Client1);
    clk.control(MsgKind::ActivateReceiver, Node::Server, Node::Client2);
    const codec::PacketTrain bcast = codec::packetize_params(out.new_global.values);
    const phy::TransmitOutcome down1 = phy::transmit_train(bcast, phy_ctx, leg_channel(2));
    const phy::TransmitOutcome down2 = phy::transmit_train(bcast, phy_ctx, leg_channel(3));
    check_abort(down1, "broadcast to client1");
    check_abort(down2, "broadcast to client2");
    clk.data_slot(Node::Server, "params server->broadcast", down1.airtime_s);
    out.trace.timings.t_s_broadcast = down1.airtime_s;
    const codec::ReassemblyReport brx1 =
        codec::reassemble(down1.packets, n_values, rc.gap_policy, &trained1.values);
    const codec::ReassemblyReport brx2 =
        codec::reassemble(down2.packets, n_values, rc.gap_policy, &trained2.values);
    out.downlink1 = {brx1.failed.size(), bcast.packets.size(), down1.frames_not_found};
    out.downlink2 = {brx2.failed.size(), bcast.packets.size(), down2.frames_not_found};
    out.client1_received = {global.layer_shapes, brx1.values};
    out.client2_received = {global.layer_shapes, brx2.values};

    // (9)(10) confirmations and halt
    clk.control(MsgKind::ReceivedGlobalConfirm, Node::Client1, Node::Server);
    clk.control(MsgKind::ReceivedGlobalConfirm, Node::Client2, Node::Server);
    clk.control(MsgKind::HaltBroadcast, Node::Server, Node::Client1);
    clk.control(MsgKind::HaltBroadcast, Node::Server, Node::Client2);
    clk.event(clk.t, Node::Server, "round-end " + std::to_string(round_index));

    out.trace.timings.t_control = 9.0 * rc.control_latency_s;
    out.trace.timings.total = clk.t - start_time;
    std::stable_sort(out.trace.events.begin(), out.trace.events.end(),
                     [](const TraceEvent& a, const TraceEvent& b) { return a.t < b.t; });
    return out;
}

struct SessionConfig {
    fl::TrainConfig train;
    phy::PhyConfig phy;
    RoundConfig round;
    double accuracy_threshold = 0.98;
    int max_rounds = 15;
    std::uint64_t init_seed = 1;
    std::uint64_t channel_seed = 1;
    bool noiseless = false;
    int hidden1 = 15, hidden2 = 16;

    void validate() const {
        train.validate();
        phy.validate();
        if (max_rounds < 1) throw error("SessionConfig: max_rounds must be >= 1");
        if (accuracy_threshold < 0.0 || accuracy_threshold > 1.01)
            throw error("SessionConfig: accuracy threshold must be in [0, 1.01]");
    }
};

struct SessionResult {
    std::vector<double> accuracy; // after each executed round
    std::vector<RoundTrace> traces;
    std::vector<std::array<LegStats, 4>> leg_stats; // up1, up2, down1, down2
    fl::ModelParams final_model;
    int rounds_executed = 0;
    bool converged = false;

    double final_accuracy() const { return accuracy.empty() ? 0.0 : accuracy.back(); }
    double data_packet_failure_fraction() const {
        std::size_t failed = 0, total = 0;
        for (const auto& legs : leg_stats)
            for (const auto& l : legs) failed += l.failed, total += l.total;
        return total ? double(failed) / double(total) : 0.0;
    }
};

/// Repeat rounds until the global model's test accuracy reaches the threshold
/// or max_rounds is hit. Accuracy is evaluated after every round on the
/// shared (never partitioned) test set.
inline SessionResult run_session(const SessionConfig& cfg, const data::ClientDataset& client1,
                                 const data::ClientDataset& client2,
                                 const std::vector<data::LabeledImage>& test) {
    cfg.validate();
    const phy::PhyContext ctx(cfg.phy);
    const phy::ChannelModel channel = phy::make_channel(cfg.phy, cfg.channel_seed, cfg.noiseless);
    fl::ModelParams global = fl::init_model(cfg.init_seed, cfg.hidden1, cfg.hidden2);
    fl::AdamState opt1(global.values.size()), opt2(global.values.size());

    SessionResult r;
    double sim_t = 0.0;
    for (int round = 1; round <= cfg.max_rounds; ++round) {
        RoundOutcome outcome = run_round(global, client1, client2, cfg.train, ctx, channel, round,
                                         cfg.round, sim_t, &opt1, &opt2);
        sim_t += outcome.trace.timings.total;
        global = std::move(outcome.new_global);
        r.traces.push_back(std::move(outcome.trace));
        r.leg_stats.push_back({outcome.uplink1, outcome.uplink2, outcome.downlink1, outcome.downlink2});
        const double acc = fl::evaluate(global, test).accuracy;
        r.accuracy.push_back(acc);
        r.rounds_executed = round;
        if (acc >= cfg.accuracy_threshold) {
            r.converged = true;
            break;
        }
    }
    r.final_model = std::move(global);
    return r;
}

struct TimingReport {
    std::vector<int> round_index;
    std::vector<RoundTimings> per_round;
    RoundTimings cumulative;
    TimingMode mode = TimingMode::Analytic;
};

inline TimingReport timing_report(const std::vector<RoundTrace>& traces,
                                  TimingMode mode = TimingMode::Analytic) {
    if (traces.empty()) throw error("timing_report: no traces");
    TimingReport rep;
    rep.mode = mode;
    for (const auto& tr : traces) {
        rep.round_index.push_back(tr.round_index);
        rep.per_round.push_back(tr.timings);
        auto& c = rep.cumulative;
        const auto& t = tr.timings;
        c.t_c1_c1 += t.t_c1_c1;
        c.t_c2_c2 += t.t_c2_c2;
        c.t_c1_s += t.t_c1_s;
        c.t_c2_s += t.t_c2_s;
        c.t_s_s += t.t_s_s;
        c.t_s_broadcast += t.t_s_broadcast;
        c.t_control += t.t_control;
        c.total += t.total;
    }
    return rep;
}

inline std::string format_timing_report(const TimingReport& rep) {
    char line[256];
    std::string out = "# timing mode: ";
    out += rep.mode == TimingMode::Analytic ? "analytic (epochs x seconds_per_epoch)"
                                            : "measured (wall clock x scale)";
    out += "\nround   t_c1_c1   t_c2_c2     t_c1_s     t_c2_s      t_s_s  t_broadcast      total\n";
    auto row = [&](const std::string& tag, const RoundTimings& t) {
        std::snprintf(line, sizeof line, "%5s %9.3f %9.3f %10.3f %10.3f %10.3f %12.3f %10.3f\n",
                      tag.c_str(), t.t_c1_c1, t.t_c2_c2, t.t_c1_s, t.t_c2_s, t.t_s_s,
                      t.t_s_broadcast, t.total);
        out += line;
    };
    for (std::size_t i = 0; i < rep.per_round.size(); ++i)
        row(std::to_string(rep.round_index[i]), rep.per_round[i]);
    row("sum", rep.cumulative);
    return out;
}

/// Line-oriented trace export: `<sim_time_s> <node> <event>`.
inline std::string trace_to_text(const RoundTrace& trace) {
    std::string out;
    char buf[64];
    for (const auto& e : trace.events) {
        std::snprintf(buf, sizeof buf, "%.6f ", e.t);
        out += buf;
        out += node_name(e.node);
        out += ' ';
        out += e.what;
        out += '\n';
    }
    return out;
}

} // namespace fedair::ctrl
