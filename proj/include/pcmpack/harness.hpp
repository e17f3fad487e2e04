#pragma once

// Experiment driver: config ingestion, case enumeration for the sweeps and
// the mesh study, the geometry → grid → flow → thermal pipeline per case, and
// CSV / JSON / SVG persistence with a provenance header on every file.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pcmpack/discretization.hpp"
#include "pcmpack/error.hpp"
#include "pcmpack/flow.hpp"
#include "pcmpack/geometry.hpp"
#include "pcmpack/oracle.hpp"
#include "pcmpack/svg.hpp"
#include "pcmpack/thermal.hpp"

#ifndef PCMPACK_VERSION
#define PCMPACK_VERSION "0.0.0"
#endif

namespace pcmpack {

enum class ExperimentKind { single_case, inlet_sweep, outlet_sweep, config_sweep, mesh_study };
enum class SweepMode { count, position };
enum class ThermalMethod { steady, transient };

inline const char* kind_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::single_case: return "single-case";
        case ExperimentKind::inlet_sweep: return "inlet-sweep";
        case ExperimentKind::outlet_sweep: return "outlet-sweep";
        case ExperimentKind::config_sweep: return "config-sweep";
        case ExperimentKind::mesh_study: return "mesh-study";
    }
    return "?";
}

inline ExperimentKind parse_kind(const std::string& s) {
    for (ExperimentKind k : {ExperimentKind::single_case, ExperimentKind::inlet_sweep, ExperimentKind::outlet_sweep,
                             ExperimentKind::config_sweep, ExperimentKind::mesh_study})
        if (s == kind_name(k)) return k;
    throw InvalidArgument("unknown experiment kind '" + s + "'");
}

inline SweepMode parse_mode(const std::string& s) {
    if (s == "count") return SweepMode::count;
    if (s == "position") return SweepMode::position;
    throw InvalidArgument("unknown sweep mode '" + s + "' (count|position)");
}

inline ThermalMethod parse_method(const std::string& s) {
    if (s == "steady") return ThermalMethod::steady;
    if (s == "transient") return ThermalMethod::transient;
    throw InvalidArgument("unknown thermal method '" + s + "' (steady|transient)");
}

inline const std::vector<double>& default_velocities() {
    static const std::vector<double> v = {0, 1, 2, 3, 5, 8, 10, 12, 15};
    return v;
}

/// Reference full-pack phase-change duration (s) for the order-of-magnitude check.
inline constexpr double kReferencePhaseDuration = 750.0;

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::single_case;
    std::vector<std::string> configurations;  // empty: kind default
    std::vector<double> velocities;           // empty: kind default
    std::vector<double> grid_h;               // m; empty: kind default
    PortPlan ports{};
    SweepMode mode = SweepMode::count;
    LayoutOptions layout{};
    CapsuleSpec capsule{};
    nlohmann::json material_overrides = nlohmann::json::object();
    RunSettings run{};
    ThermalMethod method = ThermalMethod::steady;
    double no_flow_dt = 100.0;  // s, step and record interval of the V = 0 transient fallback
    FlowOptions flow{};
    std::string output_dir = "out";
    int threads = 1;
    std::uint64_t seed = 0;  // recorded only; the pipeline has no randomness
    bool write_fields = false;

    MaterialTable materials() const {
        MaterialTable t = MaterialTable::defaults();
        apply_overrides(t, material_overrides);
        t.validate();
        return t;
    }

    /// Fills kind defaults and checks invariants; returns warnings.
    std::vector<std::string> finalize() {
        std::vector<std::string> warn;
        if (configurations.empty()) {
            switch (kind) {
                case ExperimentKind::config_sweep:
                    for (auto id : configuration_ids()) configurations.emplace_back(id);
                    break;
                case ExperimentKind::inlet_sweep:
                case ExperimentKind::outlet_sweep: configurations = {"1234321"}; break;
                case ExperimentKind::mesh_study: configurations = {"single-capsule"}; break;
                case ExperimentKind::single_case: configurations = {"4543"}; break;
            }
        }
        if (velocities.empty()) velocities = kind == ExperimentKind::mesh_study ? std::vector<double>{5.0} : default_velocities();
        if (grid_h.empty()) {
            grid_h = kind == ExperimentKind::mesh_study ? std::vector<double>{0.004, 0.002, 0.001, 0.0005} : std::vector<double>{0.002};
        }
        for (double V : velocities) {
            if (!(V >= 0.0)) throw InvalidArgument("velocities must be >= 0");
            if (V > 15.0) warn.push_back("velocity " + std::to_string(V) + " m/s is beyond the studied 0-15 m/s range");
        }
        for (double h : grid_h)
            if (!(h > 0.0)) throw InvalidArgument("grid spacing must be > 0");
        if (kind == ExperimentKind::mesh_study) {
            if (grid_h.size() < 3) throw InvalidArgument("mesh study needs at least 3 spacings");
            for (std::size_t k = 1; k < grid_h.size(); ++k)
                if (!(grid_h[k] < grid_h[k - 1])) throw InvalidArgument("mesh study spacings must be strictly decreasing");
        } else if (grid_h.size() != 1) {
            throw InvalidArgument(std::string(kind_name(kind)) + " takes exactly one grid spacing");
        }
        if (kind == ExperimentKind::inlet_sweep || kind == ExperimentKind::outlet_sweep) {
            for (const auto& c : configurations)
                if (c != "1234321") throw InvalidArgument("port sweeps run on the diamond (1234321) configuration");
        }
        for (const auto& c : configurations)
            if (!is_pack_configuration(c) && c != "single-capsule" && c != "single-capsule-closed") throw UnknownConfiguration(c);
        if (threads < 1) throw InvalidArgument("threads must be >= 1");
        if (!(no_flow_dt > 0.0)) throw InvalidArgument("no_flow_dt must be > 0");
        capsule.validate();
        ports.validate();
        run.validate();
        flow.validate();
        (void)materials();
        return warn;
    }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw InvalidArgument(where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw InvalidArgument("unknown key '" + it.key() + "' in " + where);
    }
}

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::get_if;
    detail::check_keys(j,
                       {"kind", "configurations", "velocities", "grid_h", "ports", "mode", "layout", "capsule", "materials",
                        "run", "flow", "output_dir", "threads", "seed", "write_fields"},
                       "config");
    ExperimentConfig c;
    try {
        if (j.contains("kind")) c.kind = parse_kind(j.at("kind").get<std::string>());
        get_if(j, "configurations", c.configurations);
        get_if(j, "velocities", c.velocities);
        if (j.contains("grid_h")) {
            c.grid_h = j.at("grid_h").is_array() ? j.at("grid_h").get<std::vector<double>>()
                                                 : std::vector<double>{j.at("grid_h").get<double>()};
        }
        if (j.contains("ports")) {
            const auto& p = j.at("ports");
            detail::check_keys(p, {"n_inlets", "n_outlets", "inlet_width_mm", "outlet_width_mm", "inlet_positions", "outlet_positions"},
                               "ports");
            get_if(p, "n_inlets", c.ports.n_inlets);
            get_if(p, "n_outlets", c.ports.n_outlets);
            get_if(p, "inlet_width_mm", c.ports.inlet_width);
            get_if(p, "outlet_width_mm", c.ports.outlet_width);
            get_if(p, "inlet_positions", c.ports.inlet_positions);
            get_if(p, "outlet_positions", c.ports.outlet_positions);
        }
        if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
        if (j.contains("layout")) {
            const auto& l = j.at("layout");
            detail::check_keys(l, {"gap_mm", "clearance_mm", "port_standoff_mm"}, "layout");
            get_if(l, "gap_mm", c.layout.gap);
            get_if(l, "clearance_mm", c.layout.clearance);
            get_if(l, "port_standoff_mm", c.layout.port_standoff);
        }
        if (j.contains("capsule")) {
            const auto& k = j.at("capsule");
            detail::check_keys(k,
                               {"r_inner_sheath_in_mm", "r_inner_sheath_out_mm", "r_outer_sheath_in_mm", "r_outer_sheath_out_mm",
                                "depth_mm", "q_gen_W_m2"},
                               "capsule");
            get_if(k, "r_inner_sheath_in_mm", c.capsule.r_inner_sheath_in);
            get_if(k, "r_inner_sheath_out_mm", c.capsule.r_inner_sheath_out);
            get_if(k, "r_outer_sheath_in_mm", c.capsule.r_outer_sheath_in);
            get_if(k, "r_outer_sheath_out_mm", c.capsule.r_outer_sheath_out);
            get_if(k, "depth_mm", c.capsule.depth);
            get_if(k, "q_gen_W_m2", c.capsule.q_gen);
        }
        if (j.contains("materials")) c.material_overrides = j.at("materials");
        if (j.contains("run")) {
            const auto& r = j.at("run");
            detail::check_keys(r,
                               {"method", "inlet_C", "initial_C", "dt_s", "t_end_s", "steady_tolerance_K_s", "steady_records",
                                "record_interval_s", "no_flow_dt_s", "integrator", "T_ideal_C", "operating_range_C"},
                               "run");
            if (r.contains("method")) c.method = parse_method(r.at("method").get<std::string>());
            get_if(r, "inlet_C", c.run.inlet_temperature);
            get_if(r, "initial_C", c.run.initial_temperature);
            get_if(r, "dt_s", c.run.dt);
            get_if(r, "t_end_s", c.run.t_end);
            get_if(r, "steady_tolerance_K_s", c.run.steady_tolerance);
            get_if(r, "steady_records", c.run.steady_records);
            get_if(r, "record_interval_s", c.run.record_interval);
            get_if(r, "no_flow_dt_s", c.no_flow_dt);
            if (r.contains("integrator")) c.run.integrator = parse_integrator(r.at("integrator").get<std::string>());
            get_if(r, "T_ideal_C", c.run.T_ideal);
            get_if(r, "operating_range_C", c.run.operating_range);
        }
        if (j.contains("flow")) {
            const auto& f = j.at("flow");
            detail::check_keys(f, {"tolerance", "max_iterations", "momentum_relaxation", "pressure_relaxation"}, "flow");
            get_if(f, "tolerance", c.flow.tolerance);
            get_if(f, "max_iterations", c.flow.max_iterations);
            get_if(f, "momentum_relaxation", c.flow.momentum_relaxation);
            get_if(f, "pressure_relaxation", c.flow.pressure_relaxation);
        }
        get_if(j, "output_dir", c.output_dir);
        get_if(j, "threads", c.threads);
        get_if(j, "seed", c.seed);
        get_if(j, "write_fields", c.write_fields);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("bad config value: ") + e.what());
    }
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot read config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument(path + ": " + e.what());
    }
    return config_from_json(j);
}

/// Everything that affects results (output location and thread count excluded).
inline nlohmann::json results_relevant_json(const ExperimentConfig& c) {
    return {{"kind", kind_name(c.kind)},
            {"configurations", c.configurations},
            {"velocities", c.velocities},
            {"grid_h", c.grid_h},
            {"ports",
             {{"n_inlets", c.ports.n_inlets},
              {"n_outlets", c.ports.n_outlets},
              {"inlet_width_mm", c.ports.inlet_width},
              {"outlet_width_mm", c.ports.outlet_width},
              {"inlet_positions", c.ports.inlet_positions},
              {"outlet_positions", c.ports.outlet_positions}}},
            {"mode", c.mode == SweepMode::count ? "count" : "position"},
            {"layout", {{"gap_mm", c.layout.gap}, {"clearance_mm", c.layout.clearance}, {"port_standoff_mm", c.layout.port_standoff}}},
            {"capsule", oracle::capsule_inputs(c.capsule, c.materials())},
            {"run",
             {{"method", c.method == ThermalMethod::steady ? "steady" : "transient"},
              {"inlet_C", c.run.inlet_temperature},
              {"initial_C", c.run.initial_temperature},
              {"dt_s", c.run.dt},
              {"t_end_s", c.run.t_end},
              {"steady_tolerance_K_s", c.run.steady_tolerance},
              {"steady_records", c.run.steady_records},
              {"record_interval_s", c.run.record_interval},
              {"no_flow_dt_s", c.no_flow_dt},
              {"integrator", integrator_name(c.run.integrator)},
              {"T_ideal_C", c.run.T_ideal},
              {"operating_range_C", c.run.operating_range}}},
            {"flow",
             {{"tolerance", c.flow.tolerance},
              {"max_iterations", c.flow.max_iterations},
              {"momentum_relaxation", c.flow.momentum_relaxation},
              {"pressure_relaxation", c.flow.pressure_relaxation}}},
            {"seed", c.seed},
            {"write_fields", c.write_fields}};
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

struct Provenance {
    std::string version = PCMPACK_VERSION;
    std::string config_hash;
    nlohmann::json constants;

    std::vector<std::string> header_lines(const std::string& kind) const {
        return {"pcmpack " + version, "kind " + kind, "config_hash " + config_hash, "constants " + constants.dump()};
    }
    nlohmann::json to_json() const { return {{"version", version}, {"config_hash", config_hash}, {"constants", constants}}; }
};

inline Provenance provenance(const ExperimentConfig& c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(fnv1a64(results_relevant_json(c).dump())));
    return {PCMPACK_VERSION, buf, oracle::capsule_inputs(c.capsule, c.materials())};
}

// ---------------------------------------------------------------------------
// Cases

struct CaseSpec {
    std::size_t index = 0;
    std::string series;
    std::string configuration;
    PortPlan ports;
    double V = 0.0;
    double h = 0.0;
};

inline std::string join_slots(const std::vector<int>& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ";" : "") + std::to_string(v[k]);
    return s;
}

inline std::string mm_label(double h) {
    char b[32];
    std::snprintf(b, sizeof b, "h = %g mm", h * 1e3);
    return b;
}

/// Case list in canonical order: outer loop over the swept parameter, inner over velocities.
inline std::vector<CaseSpec> enumerate_cases(const ExperimentConfig& c) {
    std::vector<CaseSpec> cases;
    auto add = [&](const std::string& series, const std::string& conf, const PortPlan& p, double h) {
        for (double V : c.velocities) cases.push_back({cases.size(), series, conf, p, V, h});
    };
    switch (c.kind) {
        case ExperimentKind::single_case:
        case ExperimentKind::config_sweep:
            for (const auto& conf : c.configurations) add(conf, conf, c.ports, c.grid_h[0]);
            break;
        case ExperimentKind::inlet_sweep:
        case ExperimentKind::outlet_sweep: {
            const bool inl = c.kind == ExperimentKind::inlet_sweep;
            for (int k = 1; k <= PortPlan::kSlots; ++k) {
                PortPlan p = c.ports;
                p.n_inlets = 1;
                p.n_outlets = 1;
                p.inlet_positions.clear();
                p.outlet_positions.clear();
                std::string label;
                if (c.mode == SweepMode::count) {
                    (inl ? p.n_inlets : p.n_outlets) = k;
                    label = std::to_string(k) + (inl ? " inlet" : " outlet") + (k > 1 ? "s" : "");
                } else {
                    (inl ? p.inlet_positions : p.outlet_positions) = {k};
                    label = std::string(inl ? "inlet" : "outlet") + " slot " + std::to_string(k);
                }
                add(label, c.configurations[0], p, c.grid_h[0]);
            }
            break;
        }
        case ExperimentKind::mesh_study:
            for (double h : c.grid_h) add(mm_label(h), c.configurations[0], c.ports, h);
            break;
    }
    return cases;
}

inline PackLayout case_layout(const ExperimentConfig& c, const CaseSpec& k) {
    if (k.configuration == "single-capsule") return single_capsule_layout(c.capsule);
    if (k.configuration == "single-capsule-closed") return single_capsule_layout(c.capsule, 120.0, true);
    LayoutOptions lo = c.layout;
    lo.ports = k.ports;
    return build_configuration(k.configuration, c.capsule, lo);
}

/// 1-based rank (upstream first) of each capsule; capsules are stored rank by rank.
inline std::vector<int> capsule_ranks(const PackLayout& layout) {
    std::vector<int> r;
    if (layout.row_counts.empty()) return std::vector<int>(layout.cell_centers.size(), 1);
    for (std::size_t k = 0; k < layout.row_counts.size(); ++k)
        for (int n = 0; n < layout.row_counts[k]; ++n) r.push_back(static_cast<int>(k) + 1);
    return r;
}

struct CaseResult {
    CaseSpec spec;
    std::string status = "error";  // ok | not-steady | flow-not-converged | error
    std::string message;
    std::string method;
    std::size_t cells = 0;
    double T_max = std::nan("");
    int hottest_capsule = -1;
    int hottest_rank = 0;
    int n_ranks = 0;
    double steady_time = std::nan("");
    double lambda_final = std::nan("");
    double phase_duration = std::nan("");
    std::string phase_status = "n/a";
    double reynolds = std::nan("");
    std::size_t flow_iterations = 0;
    double flow_residual = std::nan("");
    double max_div = std::nan("");
    double flux_imbalance = std::nan("");
    double energy_residual = std::nan("");
    std::vector<std::string> warnings;
    nlohmann::json capsules;  // capsule report

    bool ok() const { return status == "ok"; }
    // Live objects for field export; not persisted in rows.
    std::optional<MaterialGrid> grid;
    std::optional<FlowField> flow;
    std::optional<ThermalState> state;
    std::optional<TimeSeries> series;
};

/// Runs one case through the full pipeline. Never throws for per-case
/// failures; they are recorded in the status column.
inline CaseResult run_case(const ExperimentConfig& c, const CaseSpec& k, bool keep_fields = false) {
    CaseResult r;
    r.spec = k;
    r.method = c.method == ThermalMethod::steady ? "steady" : "transient";
    try {
        const MaterialTable mats = c.materials();
        const PackLayout layout = case_layout(c, k);
        MaterialGrid g = rasterize(layout, c.capsule, mats, k.h);
        r.cells = g.cell_count();
        r.warnings.insert(r.warnings.end(), g.warnings.begin(), g.warnings.end());
        const std::vector<int> ranks = capsule_ranks(layout);
        r.n_ranks = ranks.empty() ? 0 : *std::max_element(ranks.begin(), ranks.end());

        FlowOptions fo = c.flow;
        fo.throw_on_nonconvergence = false;
        FlowField f = solve_steady_flow(g, k.V, fo);
        f.reynolds = reynolds_number(k.V, g, 2.0 * c.capsule.r_outer_sheath_out * 1e-3);
        r.warnings.insert(r.warnings.end(), f.warnings.begin(), f.warnings.end());
        r.reynolds = f.reynolds;
        r.flow_iterations = f.iterations;
        r.flow_residual = f.residual();
        r.max_div = divergence(f, g).max_abs;
        r.flux_imbalance = mass_flux_balance(f, g).imbalance;
        if (k.V > 0.0 && !f.converged) {
            r.status = "flow-not-converged";
            r.message = f.stalled ? "SIMPLE iterations stalled" : "SIMPLE iteration cap reached";
            if (keep_fields) {
                r.grid = std::move(g);
                r.flow = std::move(f);
            }
            return r;
        }

        ThermalState s;
        bool steady = false;
        if (c.method == ThermalMethod::steady && k.V > 0.0) {
            ThermalOperator op(g, f, c.run.inlet_temperature);
            s = op.steady_state();
            const double src = op.total_source();
            const double out = op.advective_outflow(op.gather_T(s));
            r.energy_residual = src > 0.0 ? std::abs(src - out) / src : std::abs(src - out);
            r.steady_time = std::numeric_limits<double>::infinity();
            steady = true;
        } else {
            RunSettings rs = c.run;
            if (c.method == ThermalMethod::steady) {
                // No advective sink: march to t_end instead.
                r.method = "transient-no-flow";
                rs.dt = c.no_flow_dt;
                rs.record_interval = c.no_flow_dt;
                rs.stop_when_steady = true;
            }
            TransientResult tr = run_transient(g, f, rs);
            s = std::move(tr.state);
            steady = tr.series.steady;
            r.steady_time = tr.series.steady_time;
            r.energy_residual = tr.series.energy_residual.back();
            const PhaseChangeDuration d = phase_change_duration(tr.series);
            r.phase_duration = d.duration;
            r.phase_status = melt_status_name(d.status);
            if (keep_fields) r.series = std::move(tr.series);
        }
        r.T_max = max_temperature(s, g);
        r.lambda_final = global_liquid_fraction(s, g);
        const CapsuleReport rep = capsule_report(s, g, c.run);
        r.capsules = to_json(rep).at("capsules");
        if (!rep.capsules.empty()) {
            r.hottest_capsule = static_cast<int>(rep.hottest);
            r.hottest_rank = ranks.at(rep.hottest);
        }
        r.status = steady ? "ok" : "not-steady";
        if (keep_fields) {
            r.grid = std::move(g);
            r.flow = std::move(f);
            r.state = std::move(s);
        }
    } catch (const std::exception& e) {
        r.status = "error";
        r.message = e.what();
    }
    return r;
}

/// Bounded worker pool; results come back in case-index order.
inline std::vector<CaseResult> run_cases(const ExperimentConfig& c, const std::vector<CaseSpec>& cases, int threads,
                                         std::ostream* log = nullptr, bool keep_fields = false) {
    std::vector<CaseResult> out(cases.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mu;
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cases.size()) return;
            const auto t0 = std::chrono::steady_clock::now();
            out[i] = run_case(c, cases[i], keep_fields);
            if (log) {
                const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                char b[256];
                std::snprintf(b, sizeof b, "[%zu/%zu] %s %s V=%g h=%g: %s T_max=%.3f (%.1f s)\n", i + 1, cases.size(),
                              cases[i].configuration.c_str(), cases[i].series.c_str(), cases[i].V, cases[i].h,
                              out[i].status.c_str(), out[i].T_max, dt);
                std::lock_guard<std::mutex> lk(log_mu);
                *log << b << std::flush;
            }
        }
    };
    const int n = std::max(1, std::min<int>(threads, static_cast<int>(cases.size())));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline const std::vector<std::string>& csv_columns() {
    static const std::vector<std::string> cols = {
        "case",          "series",       "configuration", "n_inlets",       "n_outlets",    "inlet_slots",    "outlet_slots",
        "V_m_s",         "h_m",          "cells",         "method",         "status",       "T_max_C",        "hottest_capsule",
        "hottest_rank",  "n_ranks",      "steady_time_s", "lambda_final",   "phase_duration_s", "phase_status", "Re",
        "flow_iterations", "flow_residual", "max_div_1_s", "flux_imbalance", "energy_residual"};
    return cols;
}

namespace detail {

inline std::string num(double v) {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char b[40];
    std::snprintf(b, sizeof b, "%.10g", v);
    return b;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string o = "\"";
    for (char ch : s) o += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return o + "\"";
}

inline nlohmann::json json_num(double v) {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

}  // namespace detail

inline std::vector<std::string> csv_row(const CaseResult& r) {
    using detail::num;
    const PortPlan& p = r.spec.ports;
    return {std::to_string(r.spec.index),
            r.spec.series,
            r.spec.configuration,
            std::to_string(p.n_inlets),
            std::to_string(p.n_outlets),
            join_slots(p.resolved_inlets()),
            join_slots(p.resolved_outlets()),
            num(r.spec.V),
            num(r.spec.h),
            std::to_string(r.cells),
            r.method,
            r.status,
            num(r.T_max),
            std::to_string(r.hottest_capsule),
            std::to_string(r.hottest_rank),
            std::to_string(r.n_ranks),
            num(r.steady_time),
            num(r.lambda_final),
            num(r.phase_duration),
            r.phase_status,
            num(r.reynolds),
            std::to_string(r.flow_iterations),
            num(r.flow_residual),
            num(r.max_div),
            num(r.flux_imbalance),
            num(r.energy_residual)};
}

inline std::string results_csv(const std::vector<CaseResult>& rows, const std::vector<std::string>& header) {
    std::ostringstream o;
    for (const auto& line : header) o << "# " << line << '\n';
    const auto& cols = csv_columns();
    for (std::size_t k = 0; k < cols.size(); ++k) o << (k ? "," : "") << cols[k];
    o << '\n';
    for (const auto& r : rows) {
        const auto f = csv_row(r);
        for (std::size_t k = 0; k < f.size(); ++k) o << (k ? "," : "") << detail::csv_field(f[k]);
        o << '\n';
    }
    return o.str();
}

inline nlohmann::json row_json(const CaseResult& r) {
    using detail::json_num;
    return {{"case", r.spec.index},
            {"series", r.spec.series},
            {"configuration", r.spec.configuration},
            {"n_inlets", r.spec.ports.n_inlets},
            {"n_outlets", r.spec.ports.n_outlets},
            {"inlet_slots", r.spec.ports.resolved_inlets()},
            {"outlet_slots", r.spec.ports.resolved_outlets()},
            {"V_m_s", r.spec.V},
            {"h_m", r.spec.h},
            {"cells", r.cells},
            {"method", r.method},
            {"status", r.status},
            {"message", r.message},
            {"T_max_C", json_num(r.T_max)},
            {"hottest_capsule", r.hottest_capsule},
            {"hottest_rank", r.hottest_rank},
            {"n_ranks", r.n_ranks},
            {"steady_time_s", json_num(r.steady_time)},
            {"lambda_final", json_num(r.lambda_final)},
            {"phase_duration_s", json_num(r.phase_duration)},
            {"phase_status", r.phase_status},
            {"Re", json_num(r.reynolds)},
            {"flow_iterations", r.flow_iterations},
            {"flow_residual", json_num(r.flow_residual)},
            {"max_div_1_s", json_num(r.max_div)},
            {"flux_imbalance", json_num(r.flux_imbalance)},
            {"energy_residual", json_num(r.energy_residual)},
            {"warnings", r.warnings},
            {"capsules", r.capsules.is_null() ? nlohmann::json::array() : r.capsules}};
}

// ---------------------------------------------------------------------------
// Derived checks

struct MeshLevel {
    double h = 0.0;
    std::size_t cells = 0;
    double T_max = std::nan("");
    double relative_change = std::nan("");  // vs the next finer level
};

struct MeshStudy {
    double V = 0.0;
    std::vector<MeshLevel> levels;
    bool monotone = false;
    bool pass = false;  // finest pair within 3 %
};

inline std::vector<MeshStudy> mesh_tables(const std::vector<CaseResult>& rows) {
    std::map<double, std::vector<const CaseResult*>> byV;
    std::vector<double> order;
    for (const auto& r : rows) {
        if (!byV.count(r.spec.V)) order.push_back(r.spec.V);
        byV[r.spec.V].push_back(&r);
    }
    std::vector<MeshStudy> out;
    for (double V : order) {
        MeshStudy m;
        m.V = V;
        for (const CaseResult* r : byV[V]) m.levels.push_back({r->spec.h, r->cells, r->ok() ? r->T_max : std::nan(""), std::nan("")});
        for (std::size_t k = 0; k + 1 < m.levels.size(); ++k)
            m.levels[k].relative_change = std::abs(m.levels[k].T_max - m.levels[k + 1].T_max) / std::abs(m.levels[k + 1].T_max);
        m.monotone = m.levels.size() >= 3;
        for (std::size_t k = 1; k + 1 < m.levels.size(); ++k)
            m.monotone = m.monotone && m.levels[k].relative_change < m.levels[k - 1].relative_change;
        m.pass = m.levels.size() >= 2 && m.levels[m.levels.size() - 2].relative_change <= 0.03;
        out.push_back(m);
    }
    return out;
}

inline nlohmann::json to_json(const MeshStudy& m) {
    nlohmann::json lv = nlohmann::json::array();
    for (const auto& l : m.levels)
        lv.push_back({{"h_m", l.h}, {"cells", l.cells}, {"T_max_C", detail::json_num(l.T_max)},
                      {"relative_change_vs_next_finer", detail::json_num(l.relative_change)}});
    return {{"V_m_s", m.V}, {"levels", lv}, {"monotone", m.monotone}, {"finest_pair_within_3pct", m.pass}};
}

inline const CaseResult* find_row(const std::vector<CaseResult>& rows, const std::string& series, double V) {
    for (const auto& r : rows)
        if (r.spec.series == series && r.spec.V == V) return &r;
    return nullptr;
}

/// Report-checks per experiment kind. Soft: recorded, never change the exit code.
inline nlohmann::json experiment_checks(const ExperimentConfig& c, const std::vector<CaseResult>& rows) {
    nlohmann::json j = nlohmann::json::object();
    auto T = [&](const std::string& s, double V) -> std::optional<double> {
        const CaseResult* r = find_row(rows, s, V);
        if (!r || !r->ok()) return std::nullopt;
        return r->T_max;
    };
    switch (c.kind) {
        case ExperimentKind::inlet_sweep:
        case ExperimentKind::outlet_sweep: {
            const bool inl = c.kind == ExperimentKind::inlet_sweep;
            if (c.mode != SweepMode::count) break;
            const std::string one = inl ? "1 inlet" : "1 outlet";
            const std::string other = inl ? "5 inlets" : "2 outlets";
            const double V = inl ? 1.0 : 5.0;
            const auto a = T(other, V), b = T(one, V);
            if (a && b)
                j[inl ? "T_max_5_inlets_le_1_inlet_at_V1" : "T_max_1_outlet_le_2_outlets_at_V5"] = {
                    {"T_other_C", *a}, {"T_one_C", *b}, {"holds", inl ? *a <= *b : *b <= *a}};
            break;
        }
        case ExperimentKind::config_sweep: {
            nlohmann::json trend = nlohmann::json::object();
            for (const auto& conf : c.configurations) {
                std::vector<double> seq;
                bool complete = true;
                for (double V : {1.0, 2.0, 5.0, 10.0, 15.0}) {
                    if (std::find(c.velocities.begin(), c.velocities.end(), V) == c.velocities.end()) continue;
                    const auto t = T(conf, V);
                    if (!t) complete = false;
                    else seq.push_back(*t);
                }
                bool mono = complete;
                for (std::size_t k = 1; k < seq.size(); ++k) mono = mono && seq[k] <= seq[k - 1];
                trend[conf] = {{"T_max_C", seq}, {"complete", complete}, {"non_increasing", mono}};
            }
            j["trend_non_increasing_in_V"] = trend;
            int tail = 0, counted = 0;
            nlohmann::json hot = nlohmann::json::object();
            for (const auto& conf : c.configurations) {
                const CaseResult* r = find_row(rows, conf, 5.0);
                if (!r || !r->ok()) continue;
                ++counted;
                const bool in_tail = r->hottest_rank == r->n_ranks;
                tail += in_tail;
                hot[conf] = {{"hottest_capsule", r->hottest_capsule}, {"rank", r->hottest_rank}, {"n_ranks", r->n_ranks}, {"tail", in_tail}};
            }
            j["hottest_in_tail_rank_at_V5"] = {{"count", tail}, {"of", counted}, {"per_configuration", hot}};
            // Ranking per velocity (1 = coolest).
            nlohmann::json ranks = nlohmann::json::object();
            int worst_4543 = 0;
            for (double V : c.velocities) {
                std::vector<std::pair<double, std::string>> v;
                for (const auto& conf : c.configurations)
                    if (const auto t = T(conf, V)) v.emplace_back(*t, conf);
                std::stable_sort(v.begin(), v.end());
                nlohmann::json order = nlohmann::json::array();
                for (std::size_t k = 0; k < v.size(); ++k) {
                    order.push_back(v[k].second);
                    if (v[k].second == "4543" && V > 0.0) worst_4543 = std::max(worst_4543, static_cast<int>(k) + 1);
                }
                ranks[detail::num(V)] = order;
                if (V == 1.0 && !v.empty()) {
                    if (const auto t = T("54322", 1.0))
                        j["funnel_54322_at_V1"] = {{"T_max_C", *t}, {"minimum_C", v.front().first},
                                                   {"gap_K", *t - v.front().first}, {"within_1K", *t - v.front().first <= 1.0}};
                    const auto f = T("54322", 1.0), b = T("4543", 1.0);
                    if (f && b) j["gap_54322_minus_4543_at_V1_K"] = *f - *b;
                }
            }
            j["ranking_coolest_first"] = ranks;
            if (worst_4543 > 0) j["worst_rank_4543_over_V_gt_0"] = worst_4543;
            break;
        }
        case ExperimentKind::mesh_study: {
            nlohmann::json t = nlohmann::json::array();
            for (const auto& m : mesh_tables(rows)) t.push_back(to_json(m));
            j["mesh_study"] = t;
            break;
        }
        case ExperimentKind::single_case: break;
    }
    nlohmann::json dur = nlohmann::json::array();
    for (const auto& r : rows) {
        if (r.phase_status != "complete") continue;
        const double ratio = r.phase_duration / kReferencePhaseDuration;
        dur.push_back({{"case", r.spec.index}, {"configuration", r.spec.configuration}, {"V_m_s", r.spec.V},
                       {"phase_duration_s", r.phase_duration}, {"reference_s", kReferencePhaseDuration}, {"ratio", ratio},
                       {"within_0.3x_to_3x", ratio >= 0.3 && ratio <= 3.0}});
    }
    if (!dur.empty()) j["phase_duration_vs_reference"] = dur;
    return j;
}

struct ExperimentResult {
    ExperimentConfig config;
    Provenance prov;
    std::vector<std::string> warnings;
    std::vector<CaseResult> rows;

    bool all_ok() const {
        return std::all_of(rows.begin(), rows.end(), [](const CaseResult& r) { return r.ok(); });
    }
};

inline nlohmann::json summary_json(const ExperimentResult& e) {
    std::map<std::string, int> counts;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : e.rows) {
        ++counts[r.status];
        rows.push_back(row_json(r));
    }
    return {{"provenance", e.prov.to_json()},
            {"config", results_relevant_json(e.config)},
            {"kind", kind_name(e.config.kind)},
            {"cases", e.rows.size()},
            {"status_counts", counts},
            {"all_ok", e.all_ok()},
            {"warnings", e.warnings},
            {"checks", experiment_checks(e.config, e.rows)},
            {"rows", rows}};
}

inline PlotSpec plot_from_rows(const std::string& title, const std::vector<std::string>& series, const std::vector<double>& V,
                               const std::vector<double>& T) {
    PlotSpec p;
    p.title = title;
    for (std::size_t k = 0; k < series.size(); ++k) {
        auto it = std::find_if(p.series.begin(), p.series.end(), [&](const PlotSeries& s) { return s.label == series[k]; });
        if (it == p.series.end()) {
            p.series.push_back({series[k], {}, {}});
            it = p.series.end() - 1;
        }
        it->x.push_back(V[k]);
        it->y.push_back(T[k]);
    }
    return p;
}

inline std::string plot_title(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::inlet_sweep: return "Steady T_max vs inlet velocity: inlet sweep";
        case ExperimentKind::outlet_sweep: return "Steady T_max vs inlet velocity: outlet sweep";
        case ExperimentKind::config_sweep: return "Steady T_max vs inlet velocity: configurations";
        case ExperimentKind::mesh_study: return "Steady T_max vs inlet velocity: mesh study";
        case ExperimentKind::single_case: return "Steady T_max vs inlet velocity";
    }
    return "";
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot open " + p.string());
    out << s;
    if (!out) throw Error("write failed: " + p.string());
}

inline std::string svg_with_header(const PlotSpec& spec, const std::vector<std::string>& header) {
    std::string s = render_svg(spec);
    std::string comment = "<!--\n";
    for (const auto& line : header) {
        std::string l = line;
        for (std::size_t p = l.find("--"); p != std::string::npos; p = l.find("--")) l.replace(p, 2, "- -");
        comment += "  " + l + "\n";
    }
    comment += "-->\n";
    const std::size_t at = s.find('\n') + 1;  // after the <svg> open tag
    return s.substr(0, at) + comment + s.substr(at);
}

inline std::filesystem::path prepare_output_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec || !fs::is_directory(p)) throw InvalidArgument("cannot create output directory " + dir);
    const fs::path probe = p / ".pcmpack_write_probe";
    {
        std::ofstream t(probe);
        if (!t) throw InvalidArgument("output directory " + dir + " is not writable");
    }
    fs::remove(probe, ec);
    return p;
}

inline std::string case_stem(const CaseResult& r) {
    char b[128];
    std::snprintf(b, sizeof b, "case_%03zu_%s_V%g_h%g", r.spec.index, r.spec.configuration.c_str(), r.spec.V, r.spec.h * 1e3);
    return b;
}

/// results.csv, summary.json, tmax_vs_v.svg and (optionally) fields/.
inline void write_outputs(const ExperimentResult& e, const std::filesystem::path& dir) {
    const std::vector<std::string> header = e.prov.header_lines(kind_name(e.config.kind));
    write_text(dir / "results.csv", results_csv(e.rows, header));
    write_text(dir / "summary.json", summary_json(e).dump(2) + "\n");
    std::vector<std::string> series;
    std::vector<double> V, T;
    for (const auto& r : e.rows) {
        if (!r.ok()) continue;
        series.push_back(r.spec.series);
        V.push_back(r.spec.V);
        T.push_back(r.T_max);
    }
    if (!series.empty()) write_text(dir / "tmax_vs_v.svg", svg_with_header(plot_from_rows(plot_title(e.config.kind), series, V, T), header));
    if (!e.config.write_fields) return;
    const auto fdir = dir / "fields";
    std::filesystem::create_directories(fdir);
    for (const auto& r : e.rows) {
        if (!r.grid || !r.flow) continue;
        std::vector<std::string> h = header;
        h.push_back("case " + std::to_string(r.spec.index) + " " + r.spec.configuration + " V=" + detail::num(r.spec.V) +
                    " h=" + detail::num(r.spec.h) + " status " + r.status);
        const std::string stem = case_stem(r);
        if (r.state) {
            write_field_csv(*r.state, *r.flow, *r.grid, (fdir / (stem + "_field.csv")).string(), h);
        } else {
            write_flow_csv(*r.flow, *r.grid, (fdir / (stem + "_flow.csv")).string(), {}, h);
        }
        write_text(fdir / (stem + "_flow.json"), flow_summary(*r.flow, *r.grid).dump(2) + "\n");
        if (r.series) r.series->write_csv((fdir / (stem + "_series.csv")).string(), h);
    }
}

/// Runs the experiment; `threads` overrides the config when > 0.
inline ExperimentResult run_experiment(ExperimentConfig cfg, std::ostream* log = nullptr) {
    ExperimentResult e;
    e.warnings = cfg.finalize();
    e.prov = provenance(cfg);
    const std::vector<CaseSpec> cases = enumerate_cases(cfg);
    e.rows = run_cases(cfg, cases, cfg.threads, log, cfg.write_fields);
    e.config = std::move(cfg);
    return e;
}

// ---------------------------------------------------------------------------
// Reading results back (for `plot`)

struct CsvTable {
    std::vector<std::string> header_lines;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    std::size_t col(const std::string& name) const {
        const auto it = std::find(columns.begin(), columns.end(), name);
        if (it == columns.end()) throw InvalidArgument("results file has no column '" + name + "'");
        return static_cast<std::size_t>(it - columns.begin());
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> f;
    std::string cur;
    bool q = false;
    for (std::size_t k = 0; k < line.size(); ++k) {
        const char ch = line[k];
        if (q) {
            if (ch == '"' && k + 1 < line.size() && line[k + 1] == '"') {
                cur += '"';
                ++k;
            } else if (ch == '"') {
                q = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            q = true;
        } else if (ch == ',') {
            f.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    f.push_back(cur);
    return f;
}

inline CsvTable read_results_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot read " + path);
    CsvTable t;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            t.header_lines.push_back(line.size() > 2 ? line.substr(2) : "");
            continue;
        }
        if (t.columns.empty()) {
            t.columns = split_csv_line(line);
            continue;
        }
        auto f = split_csv_line(line);
        if (f.size() != t.columns.size()) throw InvalidArgument(path + ": row with " + std::to_string(f.size()) + " fields");
        t.rows.push_back(std::move(f));
    }
    if (t.columns.empty()) throw InvalidArgument(path + " has no column header");
    return t;
}

/// SVG for a results.csv (ok rows only). Throws on empty input.
inline std::string plot_results(const CsvTable& t) {
    const std::size_t cs = t.col("series"), cv = t.col("V_m_s"), ct = t.col("T_max_C"), cst = t.col("status");
    std::vector<std::string> series;
    std::vector<double> V, T;
    for (const auto& r : t.rows) {
        if (r[cst] != "ok" || r[ct].empty()) continue;
        series.push_back(r[cs]);
        V.push_back(std::stod(r[cv]));
        T.push_back(std::stod(r[ct]));
    }
    if (series.empty()) throw InvalidArgument("no ok rows to plot");
    std::string title = "Steady T_max vs inlet velocity";
    for (const auto& h : t.header_lines)
        if (h.rfind("kind ", 0) == 0) {
            try {
                title = plot_title(parse_kind(h.substr(5)));
            } catch (const InvalidArgument&) {
            }
        }
    return svg_with_header(plot_from_rows(title, series, V, T), t.header_lines);
}

}  // namespace pcmpack
