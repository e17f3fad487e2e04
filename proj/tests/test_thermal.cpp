#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "pcmpack/thermal.hpp"

using namespace pcmpack;

namespace {

const CapsuleSpec kCapsule{};
const MaterialTable kMaterials = MaterialTable::defaults();

MaterialGrid closed_box(double h, const CapsuleSpec& cap = kCapsule) {
    return rasterize(single_capsule_layout(cap, 120, true), cap, kMaterials, h);
}

MaterialGrid open_box(double h, const CapsuleSpec& cap = kCapsule) {
    return rasterize(single_capsule_layout(cap), cap, kMaterials, h);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b, const MaterialGrid& g) {
    double m = 0.0;
    for (std::size_t c = 0; c < g.cell_count(); ++c)
        if (g.in_duct(static_cast<int>(c))) m = std::max(m, std::abs(a[c] - b[c]));
    return m;
}

}  // namespace

TEST(Thermal, UniformStateWithoutSourceStaysPut) {
    CapsuleSpec cap;
    cap.q_gen = 0.0;
    const MaterialGrid g = open_box(0.004, cap);
    const FlowField f = solve_steady_flow(g, 2.0);
    RunSettings rs;
    const ThermalState s0 = uniform_state(g, 25.0);
    for (Integrator m : {Integrator::implicit, Integrator::explicit_euler}) {
        rs.integrator = m;
        ThermalOperator op(g, f, 25.0);
        const ThermalState s = step(s0, f, g, rs, m == Integrator::implicit ? 10.0 : 0.5 * op.explicit_stability_limit());
        EXPECT_LT(max_abs_diff(s.T, s0.T, g), 1e-9) << integrator_name(m);
    }
}

TEST(Thermal, ClosedBoxConservesEnergy) {
    const MaterialGrid g = closed_box(0.004);
    const FlowField f = solve_steady_flow(g, 0.0);
    RunSettings rs;
    rs.dt = 5.0;
    rs.t_end = 2000.0;
    rs.record_interval = 50.0;
    const TransientResult r = run_transient(g, f, rs);
    ASSERT_GT(r.series.size(), 10u);
    for (std::size_t k = 1; k < r.series.size(); ++k) ASSERT_LT(r.series.energy_residual[k], 1e-3) << r.series.t[k];
    // Heat input went somewhere.
    EXPECT_GT(r.series.T_max.back(), 40.0);
}

TEST(Thermal, OpenDuctEnergyBudgetCloses) {
    const MaterialGrid g = open_box(0.004);
    const FlowField f = solve_steady_flow(g, 2.0);
    RunSettings rs;
    rs.dt = 2.0;
    rs.t_end = 600.0;
    rs.record_interval = 20.0;
    const TransientResult r = run_transient(g, f, rs);
    for (std::size_t k = 1; k < r.series.size(); ++k) ASSERT_LT(r.series.energy_residual[k], 1e-2) << r.series.t[k];
}

TEST(Thermal, NoSteadyStateWithoutSink) {
    const MaterialGrid g = closed_box(0.004);
    const FlowField f = solve_steady_flow(g, 0.0);
    EXPECT_THROW(solve_steady_state(g, f, RunSettings{}), NoSteadyState);
}

TEST(Thermal, PureAdvectionMovesBlobAtFlowSpeed) {
    MaterialTable m = kMaterials;
    m[Material::air].conductivity = 1e-12;
    const MaterialGrid g = rasterize(channel_layout(200, 20), kCapsule, m, 0.002);
    FlowField f = solve_steady_flow(g, 0.0);
    const double V = 0.1;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i <= g.nx; ++i)
            if (g.is_air(i - 1, j) || g.is_air(i, j)) f.u[static_cast<std::size_t>(g.xface(i, j))] = V;
    ASSERT_EQ(divergence(f, g).max_abs, 0.0);

    ThermalState s = uniform_state(g, 25.0);
    auto excess_centroid = [&](const ThermalState& st) {
        double w = 0.0, wx = 0.0;
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                const auto c = static_cast<std::size_t>(g.cell(i, j));
                if (!g.is_air(g.cell(i, j))) continue;
                w += st.T[c] - 25.0;
                wx += (st.T[c] - 25.0) * g.cell_center(i, j).x;
            }
        return std::pair{wx / w, w};
    };
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            if (!g.is_air(g.cell(i, j))) continue;
            const double x = g.cell_center(i, j).x;
            const auto c = static_cast<std::size_t>(g.cell(i, j));
            s.H[c] = temperature_to_enthalpy(25.0 + 10.0 * std::exp(-std::pow((x - 0.04) / 0.008, 2)), g.props(g.cell(i, j)));
        }
    ThermalOperator op(g, f, 25.0);
    op.derive(s);
    const auto [x0, w0] = excess_centroid(s);
    RunSettings rs;
    rs.integrator = Integrator::explicit_euler;
    rs.t_end = 1.0;
    rs.record_interval = 0.5;
    rs.stop_when_steady = false;
    const TransientResult r = run_transient(g, f, rs, s);
    const auto [x1, w1] = excess_centroid(r.state);
    EXPECT_NEAR((x1 - x0) / (V * 1.0), 1.0, 0.05);
    EXPECT_NEAR(w1 / w0, 1.0, 0.05);  // blob has not reached the outlet
}

TEST(Thermal, MaximumPrincipleWithoutSource) {
    CapsuleSpec cap;
    cap.q_gen = 0.0;
    const MaterialGrid g = open_box(0.004, cap);
    const FlowField f = solve_steady_flow(g, 1.0);
    RunSettings rs;
    rs.initial_temperature = 30.0;
    rs.inlet_temperature = 20.0;
    rs.dt = 5.0;
    rs.t_end = 500.0;
    rs.record_interval = 25.0;
    bool inside = true;
    run_transient(g, f, rs, std::nullopt, [&](const ThermalState& s) {
        for (std::size_t c = 0; c < g.cell_count(); ++c)
            if (g.in_duct(static_cast<int>(c)) && (s.T[c] < 20.0 - 1e-9 || s.T[c] > 30.0 + 1e-9)) inside = false;
    });
    EXPECT_TRUE(inside);
}

TEST(Thermal, LiquidFractionRisesMonotonicallyWhenHeated) {
    const MaterialGrid g = closed_box(0.004);
    const FlowField f = solve_steady_flow(g, 0.0);
    RunSettings rs;
    rs.dt = 5.0;
    rs.t_end = 2500.0;
    rs.record_interval = 25.0;
    const TransientResult r = run_transient(g, f, rs);
    for (std::size_t k = 1; k < r.series.size(); ++k) ASSERT_GE(r.series.lambda_global[k], r.series.lambda_global[k - 1]);
    EXPECT_EQ(phase_change_duration(r.series).status, MeltStatus::complete);
}

TEST(Thermal, MushyCellsStayInsideMeltingRange) {
    const MaterialGrid g = closed_box(0.004);
    const FlowField f = solve_steady_flow(g, 0.0);
    RunSettings rs;
    rs.dt = 5.0;
    rs.t_end = 2500.0;
    rs.record_interval = 10.0;
    std::size_t mushy = 0, bad = 0, records = 0;
    const TransientResult r = run_transient(g, f, rs, std::nullopt, [&](const ThermalState& s) {
        ++records;
        for (std::size_t c = 0; c < g.cell_count(); ++c) {
            if (g.material[c] != Material::pcm || !(s.lambda[c] > 0.0 && s.lambda[c] < 1.0)) continue;
            ++mushy;
            if (s.T[c] < 39.5 || s.T[c] > 40.5) ++bad;
        }
    });
    EXPECT_EQ(records, r.series.size());
    EXPECT_GT(mushy, 0u);
    EXPECT_EQ(bad, 0u);
}

TEST(Thermal, ExplicitAndImplicitAgreeOverShortRun) {
    const MaterialGrid g = open_box(0.004);
    const FlowField f = solve_steady_flow(g, 1.0);
    RunSettings rs;
    rs.t_end = 60.0;
    rs.record_interval = 10.0;
    rs.stop_when_steady = false;
    rs.dt = 0.25;
    const TransientResult imp = run_transient(g, f, rs);
    rs.integrator = Integrator::explicit_euler;
    rs.dt = 0.0;
    const TransientResult exp = run_transient(g, f, rs);
    EXPECT_GT(exp.series.steps, imp.series.steps);
    EXPECT_LT(max_abs_diff(imp.state.T, exp.state.T, g), 0.1);
}

TEST(Thermal, DirectSteadyMatchesLongTransient) {
    const MaterialGrid g = open_box(0.004);
    const FlowField f = solve_steady_flow(g, 5.0);
    RunSettings rs;
    const ThermalState direct = solve_steady_state(g, f, rs);
    rs.dt = 20.0;
    rs.record_interval = 20.0;
    rs.t_end = 1e6;
    rs.steady_tolerance = 1e-6;
    const TransientResult r = run_transient(g, f, rs);
    ASSERT_TRUE(r.series.steady);
    EXPECT_LT(max_abs_diff(direct.T, r.state.T, g), 0.05);
    // All PCM molten at this load: the direct solve reports λ = 1.
    EXPECT_DOUBLE_EQ(global_liquid_fraction(direct, g), 1.0);
}

TEST(Thermal, ExplicitStepAboveLimitRejected) {
    const MaterialGrid g = open_box(0.004);
    const FlowField f = solve_steady_flow(g, 2.0);
    ThermalOperator op(g, f, 25.0);
    RunSettings rs;
    rs.integrator = Integrator::explicit_euler;
    rs.dt = 2.0 * op.explicit_stability_limit();
    EXPECT_THROW(run_transient(g, f, rs), StabilityViolation);
    EXPECT_THROW(step(uniform_state(g, 25.0), f, g, rs, rs.dt), StabilityViolation);
    ThermalState bad = uniform_state(g, 25.0);
    bad.H[static_cast<std::size_t>(op.cells().front())] = std::nan("");
    EXPECT_THROW(op.derive(bad), StabilityViolation);
}

TEST(Thermal, SettingsValidated) {
    RunSettings rs;
    rs.t_end = 0.0;
    EXPECT_THROW(rs.validate(), InvalidArgument);
    rs = {};
    rs.operating_range = {55.0, 10.0};
    EXPECT_THROW(rs.validate(), InvalidArgument);
    EXPECT_EQ(parse_integrator("explicit"), Integrator::explicit_euler);
    EXPECT_THROW(parse_integrator("rk4"), InvalidArgument);
}

TEST(CapsuleReport, TieGoesToLowestIndexAndFlags) {
    const MaterialGrid g = rasterize(build_configuration("4444", kCapsule), kCapsule, kMaterials, 0.004);
    ASSERT_EQ(g.capsule_count(), 16u);
    ThermalState s = uniform_state(g, 50.0);
    CapsuleReport r = capsule_report(s, g);
    EXPECT_EQ(r.hottest, 0u);
    for (const auto& c : r.capsules) {
        EXPECT_TRUE(c.exceed_ideal);
        EXPECT_FALSE(c.exceed_range);
        EXPECT_NEAR(c.max_surface_temperature, 50.0, 1e-12);
    }
    for (std::size_t c = 0; c < g.cell_count(); ++c)
        if (g.capsule_of_cell[c] == 7) s.T[c] = 60.0;
    r = capsule_report(s, g);
    EXPECT_EQ(r.hottest, 7u);
    EXPECT_TRUE(r.capsules[7].exceed_range);
    EXPECT_FALSE(r.capsules[6].exceed_range);
    s = uniform_state(g, 5.0);
    EXPECT_TRUE(capsule_report(s, g).capsules[0].exceed_range);  // too cold
    EXPECT_EQ(to_json(r).at("hottest"), 7);
}

TEST(PhaseChange, DurationStatuses) {
    TimeSeries ts;
    ts.t = {0, 10, 20, 30};
    ts.lambda_global = {0, 0, 0, 0};
    EXPECT_EQ(phase_change_duration(ts).status, MeltStatus::no_melting);
    EXPECT_TRUE(std::isnan(phase_change_duration(ts).duration));
    ts.lambda_global = {0, 0.2, 0.7, 0.9};
    const PhaseChangeDuration inc = phase_change_duration(ts);
    EXPECT_EQ(inc.status, MeltStatus::incomplete);
    EXPECT_EQ(inc.t_start, 10.0);
    ts.lambda_global = {0, 0.2, 1.0, 1.0};
    const PhaseChangeDuration done = phase_change_duration(ts);
    EXPECT_EQ(done.status, MeltStatus::complete);
    EXPECT_EQ(done.duration, 10.0);
    EXPECT_THROW(phase_change_duration(TimeSeries{}), InvalidArgument);
}

TEST(TimeSeries, CsvLayout) {
    const MaterialGrid g = closed_box(0.004);
    const FlowField f = solve_steady_flow(g, 0.0);
    RunSettings rs;
    rs.dt = 5.0;
    rs.t_end = 20.0;
    rs.record_interval = 10.0;
    const TransientResult r = run_transient(g, f, rs);
    const std::string path = testing::TempDir() + "series.csv";
    r.series.write_csv(path, {"case: test"});
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "# case: test");
    std::getline(in, line);
    EXPECT_EQ(line, "t_s,T_max_C,T_capsule_00_C,lambda_global,energy_residual_frac");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 3);
}
