#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fedair/common.hpp"
#include "fedair/control.hpp"
#include "fedair/mlp.hpp"
#include "fedair/mnist.hpp"

namespace fedair::exp {

/// Everything one run needs, loadable from a flat key=value file. Field
/// defaults are the documented desk-scale profile: 500 samples/class and a
/// learning rate tuned so the 4-class runs converge in a handful of rounds.
struct ExperimentConfig {
    // dataset
    std::string train_images, train_labels, test_images, test_labels;
    std::array<int, 4> classes{0, 1, 2, 3};
    int max_per_class = 500;
    // learning
    std::string partition = "iid"; // iid | noniid
    int epochs = 10;
    double learning_rate = 3e-4; // desk-scale IID default; use 5e-4 for noniid
    int batch_size = 32;
    int hidden1 = 15, hidden2 = 16;
    bool persist_optimizer = false;
    // channel
    double tx_power_db = 20.0;
    double noise_floor_db = 10.0;
    std::string channel = "awgn"; // awgn | noiseless
    std::string gap_policy = "hold-previous"; // hold-previous | zero-fill
    double sync_threshold_factor = 4.5;
    // session
    double accuracy_threshold = 0.98;
    int max_rounds = 15;
    // timing model
    std::string timing_mode = "analytic"; // analytic | measured
    double control_latency_s = 0.005;
    double aggregate_seconds = 0.1;
    double seconds_per_epoch = 2.0;
    double wallclock_scale = 1.0;
    bool serial_compute = false;
    bool strict_sync = false;
    // seeds: explicit values win; 0 means "derive from master seed"
    std::uint64_t seed = 1;
    std::uint64_t data_seed = 0;
    std::uint64_t init_seed = 0;
    std::uint64_t channel_seed = 0;
    // output
    std::string output_dir;

    bool operator==(const ExperimentConfig&) const = default;

    std::uint64_t effective_data_seed() const { return data_seed ? data_seed : derive_seed(seed, 1); }
    std::uint64_t effective_init_seed() const { return init_seed ? init_seed : derive_seed(seed, 2); }
    std::uint64_t effective_channel_seed() const {
        return channel_seed ? channel_seed : derive_seed(seed, 3);
    }

    data::PartitionMode partition_mode() const {
        if (partition == "iid") return data::PartitionMode::IID;
        if (partition == "noniid") return data::PartitionMode::NonIID;
        throw error("config: partition must be iid or noniid, got '" + partition + "'");
    }
    codec::GapPolicy policy() const {
        if (gap_policy == "hold-previous") return codec::GapPolicy::HoldPrevious;
        if (gap_policy == "zero-fill") return codec::GapPolicy::ZeroFill;
        throw error("config: gap_policy must be hold-previous or zero-fill, got '" + gap_policy + "'");
    }
    bool noiseless() const {
        if (channel == "awgn") return false;
        if (channel == "noiseless") return true;
        throw error("config: channel must be awgn or noiseless, got '" + channel + "'");
    }

    void validate() const {
        if (epochs < 0) throw error("config: epochs must be >= 0");
        if (max_rounds < 1) throw error("config: max_rounds must be >= 1");
        if (accuracy_threshold < 0.0 || accuracy_threshold > 1.01)
            throw error("config: accuracy_threshold must be in [0, 1.01]");
        if (timing_mode != "analytic" && timing_mode != "measured")
            throw error("config: timing_mode must be analytic or measured");
        partition_mode();
        policy();
        noiseless();
    }

    ctrl::SessionConfig session_config() const {
        ctrl::SessionConfig s;
        s.train.learning_rate = learning_rate;
        s.train.epochs = epochs;
        s.train.batch_size = batch_size;
        s.train.seed = derive_seed(effective_data_seed(), 0x7ea1);
        s.phy.tx_power_db = tx_power_db;
        s.phy.noise_floor_db = noise_floor_db;
        s.phy.sync_threshold_factor = sync_threshold_factor;
        s.round.control_latency_s = control_latency_s;
        s.round.aggregate_seconds = aggregate_seconds;
        s.round.seconds_per_epoch = seconds_per_epoch;
        s.round.wallclock_scale = wallclock_scale;
        s.round.timing_mode =
            timing_mode == "measured" ? ctrl::TimingMode::Measured : ctrl::TimingMode::Analytic;
        s.round.serial_compute = serial_compute;
        s.round.strict_sync = strict_sync;
        s.round.persist_optimizer = persist_optimizer;
        s.round.gap_policy = policy();
        s.accuracy_threshold = accuracy_threshold;
        s.max_rounds = max_rounds;
        s.init_seed = effective_init_seed();
        s.channel_seed = effective_channel_seed();
        s.noiseless = noiseless();
        s.hidden1 = hidden1;
        s.hidden2 = hidden2;
        return s;
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw error("config: key '" + key + "' expects true/false, got '" + v + "'");
}

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace detail

/// Apply one `key=value` assignment. Unknown keys are errors so typos in
/// config files fail loudly.
inline void apply_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
    using detail::parse_bool;
    try {
        if (key == "train_images") c.train_images = value;
        else if (key == "train_labels") c.train_labels = value;
        else if (key == "test_images") c.test_images = value;
        else if (key == "test_labels") c.test_labels = value;
        else if (key == "classes") {
            std::stringstream ss(value);
            std::string tok;
            int i = 0;
            while (std::getline(ss, tok, ',')) {
                if (i >= 4) throw error("config: classes wants exactly 4 entries");
                c.classes[i++] = std::stoi(tok);
            }
            if (i != 4) throw error("config: classes wants exactly 4 entries");
        }
        else if (key == "max_per_class") c.max_per_class = std::stoi(value);
        else if (key == "partition") c.partition = value;
        else if (key == "epochs") c.epochs = std::stoi(value);
        else if (key == "learning_rate") c.learning_rate = std::stod(value);
        else if (key == "batch_size") c.batch_size = std::stoi(value);
        else if (key == "hidden1") c.hidden1 = std::stoi(value);
        else if (key == "hidden2") c.hidden2 = std::stoi(value);
        else if (key == "persist_optimizer") c.persist_optimizer = parse_bool(key, value);
        else if (key == "tx_power_db") c.tx_power_db = std::stod(value);
        else if (key == "noise_floor_db") c.noise_floor_db = std::stod(value);
        else if (key == "channel") c.channel = value;
        else if (key == "gap_policy") c.gap_policy = value;
        else if (key == "sync_threshold_factor") c.sync_threshold_factor = std::stod(value);
        else if (key == "accuracy_threshold") c.accuracy_threshold = std::stod(value);
        else if (key == "max_rounds") c.max_rounds = std::stoi(value);
        else if (key == "timing_mode") c.timing_mode = value;
        else if (key == "control_latency_s") c.control_latency_s = std::stod(value);
        else if (key == "aggregate_seconds") c.aggregate_seconds = std::stod(value);
        else if (key == "seconds_per_epoch") c.seconds_per_epoch = std::stod(value);
        else if (key == "wallclock_scale") c.wallclock_scale = std::stod(value);
        else if (key == "serial_compute") c.serial_compute = parse_bool(key, value);
        else if (key == "strict_sync") c.strict_sync = parse_bool(key, value);
        else if (key == "seed") c.seed = std::stoull(value);
        else if (key == "data_seed") c.data_seed = std::stoull(value);
        else if (key == "init_seed") c.init_seed = std::stoull(value);
        else if (key == "channel_seed") c.channel_seed = std::stoull(value);
        else if (key == "output_dir") c.output_dir = value;
        else throw error("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
        throw error("config: bad value '" + value + "' for key '" + key + "'");
    } catch (const std::out_of_range&) {
        throw error("config: value out of range for key '" + key + "'");
    }
}

/// Flat key=value text; '#' starts a comment, blank lines ignored.
inline ExperimentConfig parse_config(const std::string& text,
                                     ExperimentConfig base = ExperimentConfig{}) {
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw error("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
        apply_key(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return base;
}

inline ExperimentConfig load_config(const std::string& path,
                                    ExperimentConfig base = ExperimentConfig{}) {
    std::ifstream f(path);
    if (!f) throw error("config: cannot open " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_config(buf.str(), std::move(base));
}

/// Canonical echo: every key, fixed order, parse(echo(c)) == c.
inline std::string echo_config(const ExperimentConfig& c) {
    using detail::fmt_double;
    std::string out;
    auto kv = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
    kv("train_images", c.train_images);
    kv("train_labels", c.train_labels);
    kv("test_images", c.test_images);
    kv("test_labels", c.test_labels);
    kv("classes", std::to_string(c.classes[0]) + "," + std::to_string(c.classes[1]) + "," +
                      std::to_string(c.classes[2]) + "," + std::to_string(c.classes[3]));
    kv("max_per_class", std::to_string(c.max_per_class));
    kv("partition", c.partition);
    kv("epochs", std::to_string(c.epochs));
    kv("learning_rate", fmt_double(c.learning_rate));
    kv("batch_size", std::to_string(c.batch_size));
    kv("hidden1", std::to_string(c.hidden1));
    kv("hidden2", std::to_string(c.hidden2));
    kv("persist_optimizer", c.persist_optimizer ? "true" : "false");
    kv("tx_power_db", fmt_double(c.tx_power_db));
    kv("noise_floor_db", fmt_double(c.noise_floor_db));
    kv("channel", c.channel);
    kv("gap_policy", c.gap_policy);
    kv("sync_threshold_factor", fmt_double(c.sync_threshold_factor));
    kv("accuracy_threshold", fmt_double(c.accuracy_threshold));
    kv("max_rounds", std::to_string(c.max_rounds));
    kv("timing_mode", c.timing_mode);
    kv("control_latency_s", fmt_double(c.control_latency_s));
    kv("aggregate_seconds", fmt_double(c.aggregate_seconds));
    kv("seconds_per_epoch", fmt_double(c.seconds_per_epoch));
    kv("wallclock_scale", fmt_double(c.wallclock_scale));
    kv("serial_compute", c.serial_compute ? "true" : "false");
    kv("strict_sync", c.strict_sync ? "true" : "false");
    kv("seed", std::to_string(c.seed));
    kv("data_seed", std::to_string(c.data_seed));
    kv("init_seed", std::to_string(c.init_seed));
    kv("channel_seed", std::to_string(c.channel_seed));
    kv("output_dir", c.output_dir);
    return out;
}

struct CrossAccuracy {
    double client1 = 0.0; // global model on classes {2,3} (client 1 never saw them)
    double client2 = 0.0; // global model on classes {0,1}
    fl::Confusion confusion1{}, confusion2{};
};

/// Accuracy of the global model on the test subset of the classes the *other*
/// client holds. Only meaningful for non-IID partitions.
inline CrossAccuracy cross_accuracy(const fl::ModelParams& final_global,
                                    const std::vector<data::LabeledImage>& test,
                                    data::PartitionMode mode) {
    if (mode != data::PartitionMode::NonIID)
        throw error("cross_accuracy: defined only for non-IID partitions");
    std::vector<data::LabeledImage> unseen1, unseen2;
    for (const auto& s : test) {
        if (s.label >= 2) unseen1.push_back(s);
        else unseen2.push_back(s);
    }
    if (unseen1.empty() || unseen2.empty())
        throw error("cross_accuracy: test set lacks one client's class range");
    CrossAccuracy r;
    const auto e1 = fl::evaluate(final_global, unseen1);
    const auto e2 = fl::evaluate(final_global, unseen2);
    r.client1 = e1.accuracy;
    r.confusion1 = e1.confusion;
    r.client2 = e2.accuracy;
    r.confusion2 = e2.confusion;
    return r;
}

struct LoadedData {
    data::ClientDataset client1, client2;
    std::vector<data::LabeledImage> test;
};

inline LoadedData load_for(const ExperimentConfig& cfg) {
    if (cfg.train_images.empty() || cfg.train_labels.empty() || cfg.test_images.empty() ||
        cfg.test_labels.empty())
        throw error("config: dataset paths are not set (train_images/train_labels/test_images/test_labels)");
    const auto mnist =
        data::load_mnist(cfg.train_images, cfg.train_labels, cfg.test_images, cfg.test_labels,
                         cfg.classes, cfg.effective_data_seed(), cfg.max_per_class);
    auto [c1, c2] = data::partition(mnist.train, cfg.partition_mode(),
                                    derive_seed(cfg.effective_data_seed(), 0x5711));
    return {std::move(c1), std::move(c2), std::move(mnist.test)};
}

struct ResultBundle {
    ExperimentConfig config;
    ctrl::SessionResult session;
    fl::EvalResult final_eval;
    bool has_cross = false;
    CrossAccuracy cross;
    std::vector<std::string> files; // names written under config.output_dir
};

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream f(p);
    if (!f) throw error("cannot open for writing: " + p.string());
    f << content;
    if (!f) throw error("write failed: " + p.string());
}

inline std::string accuracy_csv(const ctrl::SessionResult& s) {
    std::string out = "round,acc,t_c1_c1,t_c2_c2,t_c1_s,t_c2_s,t_s_s,t_broadcast,total\n";
    char line[256];
    for (std::size_t i = 0; i < s.accuracy.size(); ++i) {
        const auto& t = s.traces[i].timings;
        std::snprintf(line, sizeof line, "%d,%.6f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n",
                      s.traces[i].round_index, s.accuracy[i], t.t_c1_c1, t.t_c2_c2, t.t_c1_s,
                      t.t_c2_s, t.t_s_s, t.t_s_broadcast, t.total);
        out += line;
    }
    return out;
}

inline std::string confusion_csv(const fl::Confusion& m) {
    std::string out = "true\\pred,0,1,2,3\n";
    for (int i = 0; i < data::kClasses; ++i) {
        out += std::to_string(i);
        for (int j = 0; j < data::kClasses; ++j) out += "," + std::to_string(m[i][j]);
        out += "\n";
    }
    return out;
}

inline std::string cross_csv(const CrossAccuracy& x) {
    char buf[80];
    std::string out = "client,cross_accuracy\n";
    std::snprintf(buf, sizeof buf, "1,%.6f\n2,%.6f\n", x.client1, x.client2);
    out += buf;
    return out;
}

inline std::string packet_stats_csv(const ctrl::SessionResult& s) {
    std::string out = "round,leg,failed,total,frames_lost\n";
    static const char* legs[4] = {"c1_uplink", "c2_uplink", "broadcast_c1", "broadcast_c2"};
    for (std::size_t i = 0; i < s.leg_stats.size(); ++i)
        for (int l = 0; l < 4; ++l) {
            const auto& st = s.leg_stats[i][l];
            out += std::to_string(s.traces[i].round_index);
            out += std::string(",") + legs[l] + "," + std::to_string(st.failed) + "," +
                   std::to_string(st.total) + "," + std::to_string(st.frames_lost) + "\n";
        }
    return out;
}

inline std::string timing_csv(const ctrl::TimingReport& rep) {
    std::string out = "# timing mode: ";
    out += rep.mode == ctrl::TimingMode::Analytic ? "analytic" : "measured";
    out += "\nround,t_c1_c1,t_c2_c2,t_c1_s,t_c2_s,t_s_s,t_broadcast,t_control,total\n";
    char line[256];
    auto row = [&](const std::string& tag, const ctrl::RoundTimings& t) {
        std::snprintf(line, sizeof line, "%s,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n",
                      tag.c_str(), t.t_c1_c1, t.t_c2_c2, t.t_c1_s, t.t_c2_s, t.t_s_s,
                      t.t_s_broadcast, t.t_control, t.total);
        out += line;
    };
    for (std::size_t i = 0; i < rep.per_round.size(); ++i)
        row(std::to_string(rep.round_index[i]), rep.per_round[i]);
    row("sum", rep.cumulative);
    return out;
}

} // namespace detail

/// Wire everything together: load + partition data, run the session, compute
/// final metrics, and (when output_dir is set) write the CSV bundle plus a
/// manifest listing every file produced.
inline ResultBundle run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ResultBundle bundle;
    bundle.config = cfg;
    const LoadedData d = load_for(cfg);
    bundle.session = ctrl::run_session(cfg.session_config(), d.client1, d.client2, d.test);
    bundle.final_eval = fl::evaluate(bundle.session.final_model, d.test);
    if (cfg.partition_mode() == data::PartitionMode::NonIID) {
        bundle.has_cross = true;
        bundle.cross = cross_accuracy(bundle.session.final_model, d.test, cfg.partition_mode());
    }

    if (!cfg.output_dir.empty()) {
        namespace fs = std::filesystem;
        const fs::path dir(cfg.output_dir);
        fs::create_directories(dir);
        auto emit = [&](const std::string& name, const std::string& content) {
            detail::write_file(dir / name, content);
            bundle.files.push_back(name);
        };
        emit("config.echo.txt", echo_config(cfg));
        emit("accuracy.csv", detail::accuracy_csv(bundle.session));
        emit("confusion.csv", detail::confusion_csv(bundle.final_eval.confusion));
        const auto rep = ctrl::timing_report(bundle.session.traces,
                                             cfg.timing_mode == "measured"
                                                 ? ctrl::TimingMode::Measured
                                                 : ctrl::TimingMode::Analytic);
        emit("timing.csv", detail::timing_csv(rep));
        emit("packet_stats.csv", detail::packet_stats_csv(bundle.session));
        if (bundle.has_cross) {
            emit("cross_accuracy.csv", detail::cross_csv(bundle.cross));
            emit("cross_confusion_client1.csv", detail::confusion_csv(bundle.cross.confusion1));
            emit("cross_confusion_client2.csv", detail::confusion_csv(bundle.cross.confusion2));
        }
        std::string trace;
        for (const auto& tr : bundle.session.traces) trace += ctrl::trace_to_text(tr);
        emit("trace.txt", trace);
        std::string manifest;
        for (const auto& f : bundle.files) manifest += f + "\n";
        manifest += "manifest.txt\n";
        detail::write_file(dir / "manifest.txt", manifest);
        bundle.files.push_back("manifest.txt");
    }
    return bundle;
}

/// No-aggregation ablation: client 1 trains alone for `rounds` rounds of
/// `cfg.epochs` each (fresh optimizer per round, like the FL loop) and never
/// hears about the other client's classes.
inline fl::ModelParams run_local_baseline(const ExperimentConfig& cfg, int rounds) {
    cfg.validate();
    const LoadedData d = load_for(cfg);
    fl::ModelParams model = fl::init_model(cfg.effective_init_seed(), cfg.hidden1, cfg.hidden2);
    fl::TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    for (int r = 1; r <= rounds; ++r) {
        tc.seed = derive_seed(derive_seed(cfg.effective_data_seed(), 0x7ea1), 2 * std::uint64_t(r));
        model = fl::train_local(model, d.client1, tc);
    }
    return model;
}

struct SweepRow {
    std::string name;
    std::string partition;
    int epochs = 0;
    double tx_power_db = 0.0;
    bool ok = false;
    std::string error_text;
    double accuracy = 0.0;
    int rounds = 0;
    double total_time_s = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
};

/// One session per config; failures are recorded in their row and do not
/// stop the remaining entries.
inline SweepResult run_sweep(const std::vector<std::pair<std::string, ExperimentConfig>>& entries) {
    if (entries.empty()) throw error("sweep: no configurations");
    SweepResult result;
    for (const auto& [name, cfg] : entries) {
        SweepRow row;
        row.name = name;
        row.partition = cfg.partition;
        row.epochs = cfg.epochs;
        row.tx_power_db = cfg.tx_power_db;
        try {
            const ResultBundle b = run_experiment(cfg);
            row.ok = true;
            row.accuracy = b.session.final_accuracy();
            row.rounds = b.session.rounds_executed;
            const auto rep = ctrl::timing_report(b.session.traces);
            row.total_time_s = rep.cumulative.total;
        } catch (const error& e) {
            row.ok = false;
            row.error_text = e.what();
        }
        result.rows.push_back(std::move(row));
    }
    return result;
}

/// Accuracy / rounds-to-converge / simulated time, one row per sweep entry.
inline std::string sweep_to_csv(const SweepResult& s) {
    std::string out = "name,partition,epochs,tx_power_db,accuracy,tx_rounds,time_taken_s,status\n";
    char line[512];
    for (const auto& r : s.rows) {
        if (r.ok) {
            std::snprintf(line, sizeof line, "%s,%s,%d,%.1f,%.6f,%d,%.2f,ok\n", r.name.c_str(),
                          r.partition.c_str(), r.epochs, r.tx_power_db, r.accuracy, r.rounds,
                          r.total_time_s);
        } else {
            std::snprintf(line, sizeof line, "%s,%s,%d,%.1f,,,,failed: %s\n", r.name.c_str(),
                          r.partition.c_str(), r.epochs, r.tx_power_db, r.error_text.c_str());
        }
        out += line;
    }
    return out;
}

/// Sweep spec format: `[name]` opens an entry (initialized from `base`);
/// following key=value lines override it. '#' comments allowed.
inline std::vector<std::pair<std::string, ExperimentConfig>> parse_sweep_spec(
    const std::string& text, const ExperimentConfig& base) {
    std::vector<std::pair<std::string, ExperimentConfig>> entries;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3)
                throw error("sweep spec line " + std::to_string(lineno) + ": bad section header");
            entries.emplace_back(line.substr(1, line.size() - 2), base);
            continue;
        }
        if (entries.empty())
            throw error("sweep spec line " + std::to_string(lineno) + ": key before any [section]");
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw error("sweep spec line " + std::to_string(lineno) + ": expected key=value");
        apply_key(entries.back().second, detail::trim(line.substr(0, eq)),
                  detail::trim(line.substr(eq + 1)));
    }
    if (entries.empty()) throw error("sweep spec: no [section] entries");
    return entries;
}

} // namespace fedair::exp
