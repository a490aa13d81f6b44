// fedair: command-line front end for the federated-learning-over-radio
// simulator. Subcommands: run one experiment, sweep a spec file, re-print a
// result directory, or generate a synthetic glyph dataset.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "fedair/experiment.hpp"
#include "fedair/synthgen.hpp"

namespace fs = std::filesystem;
using namespace fedair;

namespace {

struct RunFlags {
    std::string config_path;
    std::optional<std::string> partition, channel, gap_policy, timing_mode, classes;
    std::optional<std::string> train_images, train_labels, test_images, test_labels;
    std::optional<int> epochs, batch_size, max_rounds, max_per_class, hidden1, hidden2;
    std::optional<double> learning_rate, tx_power_db, noise_floor_db, threshold;
    std::optional<std::uint64_t> seed, data_seed, init_seed, channel_seed;
    bool serial_compute = false, strict_sync = false, persist_optimizer = false;
    std::string out_dir;
    std::string auto_data_dir = "fedair_data";
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
    cmd->add_option("--config", f.config_path, "key=value config file; flags override it");
    cmd->add_option("--partition", f.partition, "iid | noniid");
    cmd->add_option("--epochs", f.epochs, "local epochs per round");
    cmd->add_option("--lr", f.learning_rate, "Adam learning rate");
    cmd->add_option("--batch-size", f.batch_size, "mini-batch size");
    cmd->add_option("--tx-power", f.tx_power_db, "transmit power, dB");
    cmd->add_option("--noise-floor", f.noise_floor_db, "noise floor, dB");
    cmd->add_option("--channel", f.channel, "awgn | noiseless");
    cmd->add_option("--gap-policy", f.gap_policy, "hold-previous | zero-fill");
    cmd->add_option("--threshold", f.threshold, "accuracy stop threshold");
    cmd->add_option("--max-rounds", f.max_rounds, "round budget");
    cmd->add_option("--timing-mode", f.timing_mode, "analytic | measured");
    cmd->add_option("--classes", f.classes, "4 source labels, e.g. 0,1,2,3");
    cmd->add_option("--max-per-class", f.max_per_class, "cap training samples per class (0 = all)");
    cmd->add_option("--hidden1", f.hidden1, "first hidden layer width");
    cmd->add_option("--hidden2", f.hidden2, "second hidden layer width");
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--data-seed", f.data_seed, "data shuffling seed (0 = derive)");
    cmd->add_option("--init-seed", f.init_seed, "weight init seed (0 = derive)");
    cmd->add_option("--channel-seed", f.channel_seed, "noise seed (0 = derive)");
    cmd->add_option("--train-images", f.train_images, "IDX training images");
    cmd->add_option("--train-labels", f.train_labels, "IDX training labels");
    cmd->add_option("--test-images", f.test_images, "IDX test images");
    cmd->add_option("--test-labels", f.test_labels, "IDX test labels");
    cmd->add_flag("--serial-compute", f.serial_compute, "clients train one after another");
    cmd->add_flag("--strict-sync", f.strict_sync, "abort a round on any lost frame");
    cmd->add_flag("--persist-optimizer", f.persist_optimizer, "carry Adam moments across rounds");
    cmd->add_option("--data-dir", f.auto_data_dir,
                    "where to generate a synthetic dataset when no IDX paths are given");
}

exp::ExperimentConfig build_config(const RunFlags& f) {
    exp::ExperimentConfig c;
    if (!f.config_path.empty()) c = exp::load_config(f.config_path);
    auto set = [](auto& dst, const auto& src) {
        if (src) dst = *src;
    };
    set(c.partition, f.partition);
    set(c.epochs, f.epochs);
    set(c.learning_rate, f.learning_rate);
    set(c.batch_size, f.batch_size);
    set(c.tx_power_db, f.tx_power_db);
    set(c.noise_floor_db, f.noise_floor_db);
    set(c.channel, f.channel);
    set(c.gap_policy, f.gap_policy);
    set(c.accuracy_threshold, f.threshold);
    set(c.max_rounds, f.max_rounds);
    set(c.timing_mode, f.timing_mode);
    set(c.max_per_class, f.max_per_class);
    set(c.hidden1, f.hidden1);
    set(c.hidden2, f.hidden2);
    set(c.seed, f.seed);
    set(c.data_seed, f.data_seed);
    set(c.init_seed, f.init_seed);
    set(c.channel_seed, f.channel_seed);
    set(c.train_images, f.train_images);
    set(c.train_labels, f.train_labels);
    set(c.test_images, f.test_images);
    set(c.test_labels, f.test_labels);
    if (f.classes) exp::apply_key(c, "classes", *f.classes);
    if (f.serial_compute) c.serial_compute = true;
    if (f.strict_sync) c.strict_sync = true;
    if (f.persist_optimizer) c.persist_optimizer = true;
    return c;
}

// Point the config at a synthetic dataset, generating it on first use.
void ensure_dataset(exp::ExperimentConfig& c, const std::string& dir) {
    if (!c.train_images.empty()) return;
    data::SynthConfig synth;
    synth.seed = c.seed;
    const auto paths = data::generate_dataset(dir, synth);
    c.train_images = paths.train_images;
    c.train_labels = paths.train_labels;
    c.test_images = paths.test_images;
    c.test_labels = paths.test_labels;
    std::printf("# no IDX paths given; generated synthetic dataset under %s\n", dir.c_str());
}

int cmd_run(RunFlags& f) {
    exp::ExperimentConfig cfg = build_config(f);
    ensure_dataset(cfg, f.auto_data_dir);
    cfg.output_dir = f.out_dir;
    const auto bundle = exp::run_experiment(cfg);
    const auto& s = bundle.session;

    std::printf("partition=%s epochs=%d lr=%g channel=%s tx=%.1fdB floor=%.1fdB\n",
                cfg.partition.c_str(), cfg.epochs, cfg.learning_rate, cfg.channel.c_str(),
                cfg.tx_power_db, cfg.noise_floor_db);
    for (std::size_t i = 0; i < s.accuracy.size(); ++i)
        std::printf("round %2zu  accuracy %.4f\n", i + 1, s.accuracy[i]);
    std::printf("%s after %d rounds; final accuracy %.4f; packet failure fraction %.4f\n",
                s.converged ? "converged" : "stopped", s.rounds_executed, s.final_accuracy(),
                s.data_packet_failure_fraction());
    if (bundle.has_cross)
        std::printf("cross accuracy: client1 on unseen classes %.4f, client2 %.4f\n",
                    bundle.cross.client1, bundle.cross.client2);

    const auto rep = ctrl::timing_report(s.traces, cfg.timing_mode == "measured"
                                                       ? ctrl::TimingMode::Measured
                                                       : ctrl::TimingMode::Analytic);
    std::fputs(ctrl::format_timing_report(rep).c_str(), stdout);
    if (!cfg.output_dir.empty())
        std::printf("wrote %zu files to %s\n", bundle.files.size(), cfg.output_dir.c_str());
    return 0;
}

int cmd_sweep(RunFlags& f, const std::string& spec_path, const std::string& csv_out) {
    exp::ExperimentConfig base = build_config(f);
    ensure_dataset(base, f.auto_data_dir);
    std::ifstream in(spec_path);
    if (!in) throw error("sweep: cannot open spec " + spec_path);
    std::stringstream buf;
    buf << in.rdbuf();
    const auto entries = exp::parse_sweep_spec(buf.str(), base);
    std::printf("# %zu sweep entries\n", entries.size());
    const auto result = exp::run_sweep(entries);
    const auto csv = exp::sweep_to_csv(result);
    std::fputs(csv.c_str(), stdout);
    if (!csv_out.empty()) {
        std::ofstream out(csv_out);
        if (!out) throw error("sweep: cannot write " + csv_out);
        out << csv;
        std::printf("# wrote %s\n", csv_out.c_str());
    }
    return 0;
}

int cmd_report(const std::string& in_dir) {
    const fs::path dir(in_dir);
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw error("report: no manifest.txt under " + in_dir);
    std::string name;
    std::vector<std::string> names;
    while (std::getline(manifest, name))
        if (!name.empty()) names.push_back(name);
    for (const auto& n : names) {
        if (n == "trace.txt" || n == "manifest.txt") continue;
        std::ifstream f(dir / n);
        if (!f) throw error("report: manifest lists missing file " + n);
        std::printf("==> %s\n", n.c_str());
        std::string line;
        while (std::getline(f, line)) std::printf("%s\n", line.c_str());
        std::printf("\n");
    }
    std::printf("# %zu files (trace.txt omitted)\n", names.size());
    return 0;
}

int cmd_make_dataset(const std::string& out_dir, const data::SynthConfig& synth) {
    const auto paths = data::generate_dataset(out_dir, synth);
    std::printf("%s\n%s\n%s\n%s\n", paths.train_images.c_str(), paths.train_labels.c_str(),
                paths.test_images.c_str(), paths.test_labels.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-client federated learning over a simulated DBPSK radio link"};
    app.require_subcommand(1);

    RunFlags run_flags;
    auto* run = app.add_subcommand("run", "run one experiment");
    add_run_flags(run, run_flags);
    run->add_option("--out", run_flags.out_dir, "directory for CSV/trace outputs");

    RunFlags sweep_flags;
    std::string spec_path, sweep_csv;
    auto* sweep = app.add_subcommand("sweep", "run every entry of a sweep spec");
    add_run_flags(sweep, sweep_flags);
    sweep->add_option("--spec", spec_path, "sweep spec file: [name] sections with overrides")
        ->required();
    sweep->add_option("--out", sweep_csv, "also write the summary CSV here");

    std::string report_dir;
    auto* report = app.add_subcommand("report", "print the CSVs of a finished run directory");
    report->add_option("--in", report_dir, "directory produced by `run --out`")->required();

    std::string ds_dir = "fedair_data";
    data::SynthConfig synth;
    auto* make = app.add_subcommand("make-dataset", "write a synthetic IDX glyph dataset");
    make->add_option("--out", ds_dir, "output directory");
    make->add_option("--train-per-class", synth.train_per_class, "training images per class");
    make->add_option("--test-per-class", synth.test_per_class, "test images per class");
    make->add_option("--seed", synth.seed, "generator seed");
    make->add_option("--noise", synth.pixel_noise, "pixel noise stddev");
    make->add_option("--shift", synth.max_shift, "max translation, pixels");
    make->add_option("--min-amplitude", synth.min_amplitude, "lowest glyph intensity");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(run_flags);
        if (sweep->parsed()) return cmd_sweep(sweep_flags, spec_path, sweep_csv);
        if (report->parsed()) return cmd_report(report_dir);
        if (make->parsed()) return cmd_make_dataset(ds_dir, synth);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
