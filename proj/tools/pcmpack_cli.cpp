#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pcmpack/harness.hpp"
#include "pcmpack/oracle.hpp"

using namespace pcmpack;

namespace {

std::vector<double> parse_list(const std::string& s, const char* what) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw InvalidArgument(std::string("bad ") + what + " entry '" + item + "'");
        }
    }
    if (v.empty()) throw InvalidArgument(std::string(what) + " list is empty");
    return v;
}

struct Flags {
    std::string out;
    int threads = 0;
    std::string velocities;
    std::string grid_h;
    std::vector<std::string> configs;
    std::string mode;
    bool fields = false;
    bool quiet = false;
};

void apply(const Flags& f, ExperimentConfig& c) {
    if (!f.out.empty()) c.output_dir = f.out;
    if (f.threads > 0) c.threads = f.threads;
    if (!f.velocities.empty()) c.velocities = parse_list(f.velocities, "velocity");
    if (!f.grid_h.empty()) c.grid_h = parse_list(f.grid_h, "grid spacing");
    if (!f.configs.empty()) c.configurations = f.configs;
    if (!f.mode.empty()) c.mode = parse_mode(f.mode);
    if (f.fields) c.write_fields = true;
}

int run(ExperimentConfig c, const Flags& f) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto dir = prepare_output_dir(c.output_dir);
    const ExperimentResult e = run_experiment(std::move(c), f.quiet ? nullptr : &std::cerr);
    write_outputs(e, dir);
    std::map<std::string, int> counts;
    for (const auto& r : e.rows) ++counts[r.status];
    for (const auto& w : e.warnings) std::cerr << "warning: " << w << '\n';
    std::printf("%s: %zu cases in %.1f s ->", kind_name(e.config.kind), e.rows.size(),
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    for (const auto& [k, n] : counts) std::printf(" %s=%d", k.c_str(), n);
    std::printf("\noutputs in %s\n", dir.string().c_str());
    return e.all_ok() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pcmpack: 2D conjugate heat transfer for PCM-sheathed battery packs"};
    app.require_subcommand(1);
    app.fallthrough();
    Flags f;
    app.add_option("--out", f.out, "Output directory");
    app.add_option("--threads", f.threads, "Worker threads for sweeps")->check(CLI::PositiveNumber);
    app.add_option("--velocities", f.velocities, "Comma-separated inlet velocities (m/s)");
    app.add_option("--grid-h", f.grid_h, "Grid spacing in metres (comma list for mesh-study)");
    app.add_option("--config", f.configs, "Configuration id (repeatable), e.g. 4543 or single-capsule");
    app.add_option("--mode", f.mode, "Port sweep mode")->check(CLI::IsMember({"count", "position"}));
    app.add_flag("--fields", f.fields, "Write per-case field dumps under fields/");
    app.add_flag("-q,--quiet", f.quiet, "No per-case progress on stderr");

    std::string config_path, results_path;
    auto* sim = app.add_subcommand("simulate", "Run the experiment described by a config file");
    sim->add_option("config", config_path, "ExperimentConfig JSON")->required();
    auto* si = app.add_subcommand("sweep-inlets", "Diamond pack, one outlet, 1..5 inlets");
    auto* so = app.add_subcommand("sweep-outlets", "Diamond pack, one inlet, 1..5 outlets");
    auto* sc = app.add_subcommand("sweep-configs", "All eight configurations, 5 inlets / 1 outlet");
    auto* ms = app.add_subcommand("mesh-study", "Steady T_max over decreasing grid spacings");
    auto* orc = app.add_subcommand("oracle", "Write the reference-model fixtures file");
    auto* pl = app.add_subcommand("plot", "Render T_max vs V from a results.csv");
    pl->add_option("results", results_path, "results.csv")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*orc) {
            const auto t0 = std::chrono::steady_clock::now();
            const auto dir = prepare_output_dir(f.out.empty() ? "." : f.out);
            const nlohmann::json fx = oracle::fixtures();
            write_text(dir / "oracle_fixtures.json", fx.dump(2) + "\n");
            const auto& out = fx.at("cases").at(0).at("outputs");
            std::printf("latent_only_s %.17g\nmelt_window_s %.17g\nwritten %s (%.3f s)\n", out.at("latent_only_s").get<double>(),
                        out.at("melt_window_s").get<double>(), (dir / "oracle_fixtures.json").string().c_str(),
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
            return 0;
        }
        if (*pl) {
            const CsvTable t = read_results_csv(results_path);
            const auto dir = prepare_output_dir(f.out.empty() ? std::filesystem::path(results_path).parent_path().string() + "/."
                                                              : f.out);
            write_text(dir / "tmax_vs_v.svg", plot_results(t));
            std::printf("written %s\n", (dir / "tmax_vs_v.svg").string().c_str());
            return 0;
        }
        ExperimentConfig c;
        if (*sim) {
            c = load_config(config_path);
        } else if (*si) {
            c.kind = ExperimentKind::inlet_sweep;
        } else if (*so) {
            c.kind = ExperimentKind::outlet_sweep;
        } else if (*sc) {
            c.kind = ExperimentKind::config_sweep;
        } else if (*ms) {
            c.kind = ExperimentKind::mesh_study;
        }
        apply(f, c);
        return run(std::move(c), f);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
