#pragma once

// Closed-form and lumped-network reference models for one sheathed capsule,
// plus the plane Poiseuille profile. Nothing here touches the grid solvers;
// the PCM state relation is re-derived on a per-kilogram basis below.

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pcmpack/error.hpp"
#include "pcmpack/geometry.hpp"
#include "pcmpack/materials.hpp"

namespace pcmpack::oracle {

/// Source power cannot outrun the film loss at the melt temperature.
class NeverMelts : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// PCM state relation in specific enthalpy e (J/kg) measured from 0 °C.

struct PcmCurve {
    double c;       // J/(kg·K)
    double L;       // J/kg
    double t_sol;   // °C
    double t_liq;   // °C

    static PcmCurve from(const MaterialProperties& m) {
        return {m.specific_heat, m.latent_heat, m.melt_temperature - m.melt_halfwidth,
                m.melt_temperature + m.melt_halfwidth};
    }
    double e_sol() const { return c * t_sol; }
    double e_liq() const { return c * t_sol + L; }

    double temperature(double e) const {
        if (L <= 0.0 || e <= e_sol()) return e / c;
        if (e >= e_liq()) return t_liq + (e - e_liq()) / c;
        return t_sol + (t_liq - t_sol) * (e - e_sol()) / L;
    }
    double liquid_fraction(double e) const {
        if (L <= 0.0 || e <= e_sol()) return 0.0;
        if (e >= e_liq()) return 1.0;
        return (e - e_sol()) / L;
    }
    double enthalpy(double T) const {
        if (L <= 0.0 || T <= t_sol) return c * T;
        if (T >= t_liq) return e_liq() + c * (T - t_liq);
        return e_sol() + L * (T - t_sol) / (t_liq - t_sol);
    }
};

// ---------------------------------------------------------------------------
// Cylinder-in-crossflow film coefficient (Hilpert), Nu = C Re^m Pr^(1/3).

struct HilpertBand {
    double re_lo;
    double re_hi;
    double C;
    double m;
};

inline constexpr std::array<HilpertBand, 5> kHilpert = {{
    {0.4, 4.0, 0.989, 0.330},
    {4.0, 40.0, 0.911, 0.385},
    {40.0, 4000.0, 0.683, 0.466},
    {4000.0, 40000.0, 0.193, 0.618},
    {40000.0, 400000.0, 0.027, 0.805},
}};

/// Film coefficient (W/(m²·K)) for air at speed V (m/s) across a cylinder of
/// diameter D (m). Properties are the (constant) table values for air.
/// Below Re = 0.4 the first band is extrapolated.
inline double hilpert_film_coefficient(double V, double D, const MaterialTable& mats) {
    if (!(V >= 0.0) || !(D > 0.0)) throw InvalidArgument("hilpert: need V >= 0 and D > 0");
    if (V == 0.0) return 0.0;
    const MaterialProperties& air = mats[Material::air];
    const double re = air.density * V * D / mats.air_viscosity;
    const double pr = mats.air_viscosity * air.specific_heat / air.conductivity;
    HilpertBand band = kHilpert.front();
    for (const HilpertBand& b : kHilpert) {
        if (re >= b.re_lo) band = b;
    }
    const double nu = band.C * std::pow(re, band.m) * std::cbrt(pr);
    return nu * air.conductivity / D;
}

// ---------------------------------------------------------------------------
// Four-node network: core, inner sheath, PCM, outer sheath. The source sits
// on a zero-capacity node at the battery surface between core and inner sheath.

struct LumpedCapsule {
    std::array<double, 4> mass{};      // kg/m
    std::array<double, 4> capacity{};  // J/(K·m), sensible
    double source_power = 0.0;         // W/m
    double film = 0.0;                 // W/(m²·K)
    double ambient = 25.0;             // °C
    double outer_perimeter = 0.0;      // m
    PcmCurve pcm{};
    // Thermal resistances per depth (K·m/W).
    double r_core = 0.0;       // core node to battery surface
    double r_surface_is = 0.0; // battery surface to inner-sheath node
    double r_is_pcm = 0.0;
    double r_pcm_os = 0.0;
    double r_os_wall = 0.0;    // outer-sheath node to its outer surface
    double r_film() const {
        return film > 0.0 ? 1.0 / (film * outer_perimeter) : std::numeric_limits<double>::infinity();
    }
    double g_ambient() const { return 1.0 / (r_os_wall + r_film()); }
    double total_capacity() const { return capacity[0] + capacity[1] + capacity[2] + capacity[3]; }

    void validate() const {
        for (double c : capacity)
            if (!(c > 0.0)) throw InvalidArgument("lumped capsule: capacities must be > 0");
        if (!(source_power >= 0.0)) throw InvalidArgument("lumped capsule: source power must be >= 0");
        if (!(film >= 0.0)) throw InvalidArgument("lumped capsule: film coefficient must be >= 0");
    }
};

inline LumpedCapsule make_lumped_capsule(const CapsuleSpec& cap, const MaterialTable& mats, double film = 0.0,
                                         double ambient = 25.0) {
    cap.validate();
    mats.validate();
    const double pi = std::numbers::pi;
    const double r0 = cap.r_inner_sheath_in * 1e-3;
    const double r1 = cap.r_inner_sheath_out * 1e-3;
    const double r2 = cap.r_outer_sheath_in * 1e-3;
    const double r3 = cap.r_outer_sheath_out * 1e-3;
    const std::array<double, 4> area = {pi * r0 * r0, pi * (r1 * r1 - r0 * r0), pi * (r2 * r2 - r1 * r1),
                                        pi * (r3 * r3 - r2 * r2)};
    const std::array<Material, 4> mat = {Material::battery_core, Material::inner_sheath, Material::pcm,
                                         Material::outer_sheath};
    LumpedCapsule lc;
    for (std::size_t k = 0; k < 4; ++k) {
        lc.mass[k] = mats[mat[k]].density * area[k];
        lc.capacity[k] = lc.mass[k] * mats[mat[k]].specific_heat;
    }
    lc.source_power = cap.source_power_per_depth();
    lc.film = film;
    lc.ambient = ambient;
    lc.outer_perimeter = 2.0 * pi * r3;
    lc.pcm = PcmCurve::from(mats[Material::pcm]);

    // Annulus nodes sit at the radius that halves their area.
    auto mid = [](double a, double b) { return std::sqrt(0.5 * (a * a + b * b)); };
    auto ring = [pi](double a, double b, double k) { return std::log(b / a) / (2.0 * pi * k); };
    const double ks = mats[Material::inner_sheath].conductivity;
    const double kso = mats[Material::outer_sheath].conductivity;
    const double kp = mats[Material::pcm].conductivity;
    const double m1 = mid(r0, r1);
    const double m2 = mid(r1, r2);
    const double m3 = mid(r2, r3);
    // Mean temperature of a uniformly surface-heated solid cylinder sits
    // q/(8πk) below its surface.
    lc.r_core = 1.0 / (8.0 * pi * mats[Material::battery_core].conductivity);
    lc.r_surface_is = ring(r0, m1, ks);
    lc.r_is_pcm = ring(m1, r1, ks) + ring(r1, m2, kp);
    lc.r_pcm_os = ring(m2, r2, kp) + ring(r2, m3, kso);
    lc.r_os_wall = ring(m3, r3, kso);
    return lc;
}

// ---------------------------------------------------------------------------
// Melt-time estimates

struct MeltTimeEstimate {
    double latent_only = 0.0;   // m·ΔH / (P − P_loss(T_PCM))
    double melt_window = 0.0;   // λ: 0 → 1, including sensible storage shifts of the network
    double with_preheat = 0.0;  // from a uniform initial temperature to λ = 1
    double onset = 0.0;         // estimated time of λ leaving 0
};

namespace detail {

struct QuasiSteady {
    std::array<double, 4> T{};  // core, inner sheath, PCM, outer sheath
    double surface = 0.0;
    double rate = 0.0;          // common heating rate of the sensible nodes (K/s)
    double loss = 0.0;          // W/m to ambient
};

/// Network state with the PCM node pinned at Tp and every other node
/// warming at `rate`. If solve_rate, the PCM node also warms at the common
/// rate with its sensible capacity and the rate is an unknown.
inline QuasiSteady quasi_steady(const LumpedCapsule& lc, double Tp, double rate, bool solve_rate) {
    const double g1 = 1.0 / lc.r_core;
    const double g2 = 1.0 / lc.r_surface_is;
    const double g3 = 1.0 / lc.r_is_pcm;
    const double g4 = 1.0 / lc.r_pcm_os;
    const double g5 = lc.film > 0.0 ? lc.g_ambient() : 0.0;
    const auto& C = lc.capacity;
    // Unknowns: Tc, Ts, Tis, Tos, r
    Eigen::Matrix<double, 5, 5> A = Eigen::Matrix<double, 5, 5>::Zero();
    Eigen::Matrix<double, 5, 1> b = Eigen::Matrix<double, 5, 1>::Zero();
    // surface: g1 (Ts - Tc) + g2 (Ts - Tis) = P
    A(0, 1) = g1 + g2; A(0, 0) = -g1; A(0, 2) = -g2; b(0) = lc.source_power;
    // core: C0 r = g1 (Ts - Tc)
    A(1, 4) = C[0]; A(1, 1) = -g1; A(1, 0) = g1;
    // inner sheath: C1 r = g2 (Ts - Tis) - g3 (Tis - Tp)
    A(2, 4) = C[1]; A(2, 1) = -g2; A(2, 2) = g2 + g3; b(2) = g3 * Tp;
    // outer sheath: C3 r = g4 (Tp - Tos) - g5 (Tos - Ta)
    A(3, 4) = C[3]; A(3, 3) = g4 + g5; b(3) = g4 * Tp + g5 * lc.ambient;
    if (solve_rate) {
        // PCM: C2 r = g3 (Tis - Tp) - g4 (Tp - Tos)
        A(4, 4) = C[2]; A(4, 2) = -g3; A(4, 3) = -g4; b(4) = -(g3 + g4) * Tp;
    } else {
        A(4, 4) = 1.0; b(4) = rate;
    }
    const Eigen::Matrix<double, 5, 1> x = A.fullPivLu().solve(b);
    QuasiSteady q;
    q.T = {x(0), x(2), Tp, x(3)};
    q.surface = x(1);
    q.rate = x(4);
    q.loss = g5 * (x(3) - lc.ambient);
    return q;
}

}  // namespace detail

inline MeltTimeEstimate lumped_melt_time(const LumpedCapsule& lc, double initial_temperature = 25.0) {
    lc.validate();
    MeltTimeEstimate out;
    const double latent = lc.mass[2] * lc.pcm.L;
    const double t_pcm = 0.5 * (lc.pcm.t_sol + lc.pcm.t_liq);
    const double p_loss = lc.film * lc.outer_perimeter * (t_pcm - lc.ambient);
    const double net = lc.source_power - p_loss;
    if (!(net > 0.0)) {
        throw NeverMelts("source power " + std::to_string(lc.source_power) + " W/m does not exceed the loss " +
                         std::to_string(p_loss) + " W/m at the melt temperature");
    }
    out.latent_only = latent / net;
    if (latent == 0.0) return out;

    // Onset: uniform-rate profile with the PCM node at solidus.
    const detail::QuasiSteady start = detail::quasi_steady(lc, lc.pcm.t_sol, 0.0, true);
    // End: PCM node at liquidus; upstream nodes track the slow melt-window
    // rate, iterated to consistency with the duration.
    double rate = 0.0;
    double duration = out.latent_only;
    for (int it = 0; it < 20; ++it) {
        const detail::QuasiSteady end = detail::quasi_steady(lc, lc.pcm.t_liq, rate, false);
        double stored = latent;
        for (std::size_t k : {0u, 1u, 3u}) stored += lc.capacity[k] * (end.T[k] - start.T[k]);
        const double p_net = lc.source_power - 0.5 * (start.loss + end.loss);
        if (!(p_net > 0.0)) throw NeverMelts("network losses reach the source power inside the melt window");
        const double next = stored / p_net;
        rate = (lc.pcm.t_liq - lc.pcm.t_sol) / next;
        if (std::abs(next - duration) <= 1e-12 * next) {
            duration = next;
            break;
        }
        duration = next;
    }
    out.melt_window = duration;

    double preheat = 0.0;
    for (std::size_t k = 0; k < 4; ++k) preheat += lc.capacity[k] * (start.T[k] - initial_temperature);
    const double g5 = lc.film > 0.0 ? lc.g_ambient() : 0.0;
    const double p_pre = lc.source_power - 0.5 * (start.loss + g5 * (initial_temperature - lc.ambient));
    if (!(p_pre > 0.0)) throw NeverMelts("losses reach the source power before melting starts");
    out.onset = std::max(0.0, preheat / p_pre);
    out.with_preheat = out.onset + out.melt_window;
    return out;
}

inline MeltTimeEstimate lumped_melt_time(const CapsuleSpec& cap, const MaterialTable& mats, double film = 0.0,
                                         double ambient = 25.0) {
    return lumped_melt_time(make_lumped_capsule(cap, mats, film, ambient), ambient);
}

// ---------------------------------------------------------------------------
// Network ODE, RK4

struct LumpedTrajectory {
    std::vector<double> t;
    std::vector<std::array<double, 4>> T;  // core, inner sheath, PCM, outer sheath
    std::vector<double> lambda;
    std::vector<double> source_energy;  // ∫P dt, J/m
    std::vector<double> loss_energy;    // ∫P_loss dt, J/m
    std::vector<double> stored_energy;  // Σ C ΔT + m Δe, J/m (relative to start)
};

/// Time from first λ > 0 to first λ = 1; negative when either never happens.
inline double plateau_duration(const LumpedTrajectory& tr) {
    double t0 = -1.0;
    for (std::size_t k = 0; k < tr.t.size(); ++k) {
        if (t0 < 0.0 && tr.lambda[k] > 0.0) t0 = tr.t[k];
        if (t0 >= 0.0 && tr.lambda[k] >= 1.0) return tr.t[k] - t0;
    }
    return -1.0;
}

inline LumpedTrajectory lumped_trajectory(const LumpedCapsule& lc, double t_end, double dt,
                                          double initial_temperature = 25.0, std::size_t record_every = 1) {
    lc.validate();
    if (!(dt > 0.0)) throw InvalidArgument("lumped_trajectory: dt must be > 0");
    if (!(t_end >= 0.0)) throw InvalidArgument("lumped_trajectory: t_end must be >= 0");
    if (record_every == 0) record_every = 1;
    const double g1 = 1.0 / lc.r_core;
    const double g2 = 1.0 / lc.r_surface_is;
    const double g3 = 1.0 / lc.r_is_pcm;
    const double g4 = 1.0 / lc.r_pcm_os;
    const double g5 = lc.film > 0.0 ? lc.g_ambient() : 0.0;
    const auto& C = lc.capacity;

    // RK4 on a linear decay mode exp(-k t) is stable for k·dt < 2.785.
    const double g12 = g1 * g2 / (g1 + g2);
    const double k_max = std::max({g12 / C[0], (g12 + g3) / C[1], (g3 + g4) / C[2], (g4 + g5) / C[3]});
    if (k_max * dt > 2.785) {
        throw StabilityViolation("lumped_trajectory: dt = " + std::to_string(dt) + " s exceeds the RK4 limit " +
                                 std::to_string(2.785 / k_max) + " s");
    }

    using State = std::array<double, 4>;  // E_core, E_is, e_pcm·m, E_os (J/m)
    auto temps = [&](const State& s) {
        return State{s[0] / C[0], s[1] / C[1], lc.pcm.temperature(s[2] / lc.mass[2]), s[3] / C[3]};
    };
    auto rhs = [&](const State& s, double* loss) {
        const State T = temps(s);
        const double Ts = (lc.source_power + g1 * T[0] + g2 * T[1]) / (g1 + g2);
        const double q1 = g1 * (Ts - T[0]);
        const double q2 = g2 * (Ts - T[1]);
        const double q3 = g3 * (T[1] - T[2]);
        const double q4 = g4 * (T[2] - T[3]);
        const double q5 = g5 * (T[3] - lc.ambient);
        if (loss) *loss = q5;
        return State{q1, q2 - q3, q3 - q4, q4 - q5};
    };

    State s{C[0] * initial_temperature, C[1] * initial_temperature, lc.mass[2] * lc.pcm.enthalpy(initial_temperature),
            C[3] * initial_temperature};
    const State s0 = s;
    LumpedTrajectory tr;
    double src = 0.0;
    double lost = 0.0;
    auto record = [&](double t) {
        tr.t.push_back(t);
        tr.T.push_back(temps(s));
        tr.lambda.push_back(lc.pcm.liquid_fraction(s[2] / lc.mass[2]));
        tr.source_energy.push_back(src);
        tr.loss_energy.push_back(lost);
        double stored = 0.0;
        for (std::size_t k = 0; k < 4; ++k) stored += s[k] - s0[k];
        tr.stored_energy.push_back(stored);
    };
    record(0.0);
    const auto n = static_cast<std::size_t>(std::llround(std::ceil(t_end / dt - 1e-9)));
    for (std::size_t step = 1; step <= n; ++step) {
        double l1 = 0, l2 = 0, l3 = 0, l4 = 0;
        const State k1 = rhs(s, &l1);
        State a;
        for (std::size_t k = 0; k < 4; ++k) a[k] = s[k] + 0.5 * dt * k1[k];
        const State k2 = rhs(a, &l2);
        for (std::size_t k = 0; k < 4; ++k) a[k] = s[k] + 0.5 * dt * k2[k];
        const State k3 = rhs(a, &l3);
        for (std::size_t k = 0; k < 4; ++k) a[k] = s[k] + dt * k3[k];
        const State k4 = rhs(a, &l4);
        for (std::size_t k = 0; k < 4; ++k) s[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        src += lc.source_power * dt;
        lost += dt / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
        for (double v : s)
            if (!std::isfinite(v)) throw StabilityViolation("lumped_trajectory: non-finite state");
        if (step % record_every == 0 || step == n) record(static_cast<double>(step) * dt);
    }
    return tr;
}

// ---------------------------------------------------------------------------
// Plane Poiseuille

struct PoiseuilleProfile {
    double height;  // m
    double mean;    // m/s

    PoiseuilleProfile(double channel_height, double v_mean) : height(channel_height), mean(v_mean) {
        if (!(channel_height > 0.0)) throw InvalidArgument("poiseuille: channel height must be > 0");
    }
    double operator()(double y) const {
        const double s = y / height;
        return 6.0 * mean * s * (1.0 - s);
    }
    double centerline() const { return 1.5 * mean; }
};

inline PoiseuilleProfile poiseuille_profile(double channel_height, double v_mean) {
    return {channel_height, v_mean};
}

// ---------------------------------------------------------------------------
// Fixtures

inline nlohmann::json capsule_inputs(const CapsuleSpec& cap, const MaterialTable& mats) {
    return {{"r_inner_sheath_in_mm", cap.r_inner_sheath_in},
            {"r_inner_sheath_out_mm", cap.r_inner_sheath_out},
            {"r_outer_sheath_in_mm", cap.r_outer_sheath_in},
            {"r_outer_sheath_out_mm", cap.r_outer_sheath_out},
            {"q_gen_W_m2", cap.q_gen},
            {"materials", to_json(mats)}};
}

inline nlohmann::json melt_outputs(const LumpedCapsule& lc, const MeltTimeEstimate& m) {
    return {{"source_power_W_per_m", lc.source_power},
            {"pcm_mass_kg_per_m", lc.mass[2]},
            {"latent_energy_J_per_m", lc.mass[2] * lc.pcm.L},
            {"total_capacity_J_per_K_m", lc.total_capacity()},
            {"adiabatic_heating_rate_K_per_s", lc.source_power / lc.total_capacity()},
            {"latent_only_s", m.latent_only},
            {"melt_window_s", m.melt_window},
            {"onset_s", m.onset},
            {"with_preheat_s", m.with_preheat}};
}

/// Reference cases with their complete inputs.
inline nlohmann::json fixtures(const CapsuleSpec& cap = {}, const MaterialTable& mats = MaterialTable::defaults()) {
    nlohmann::json cases = nlohmann::json::array();

    const LumpedCapsule adiabatic = make_lumped_capsule(cap, mats, 0.0, 25.0);
    cases.push_back({{"case_id", "adiabatic_single_capsule_melt"},
                     {"inputs", {{"capsule", capsule_inputs(cap, mats)}, {"film_W_m2K", 0.0}, {"initial_C", 25.0}}},
                     {"outputs", melt_outputs(adiabatic, lumped_melt_time(adiabatic, 25.0))}});

    for (double V : {5.0, 15.0}) {
        const double D = 2.0 * cap.r_outer_sheath_out * 1e-3;
        const double film = hilpert_film_coefficient(V, D, mats);
        const LumpedCapsule lc = make_lumped_capsule(cap, mats, film, 25.0);
        nlohmann::json out;
        try {
            out = melt_outputs(lc, lumped_melt_time(lc, 25.0));
        } catch (const NeverMelts& e) {
            out = {{"never_melts", e.what()}};
        }
        out["film_W_m2K"] = film;
        out["reynolds"] = mats[Material::air].density * V * D / mats.air_viscosity;
        cases.push_back({{"case_id", "convective_single_capsule_melt_V" + std::to_string(static_cast<int>(V))},
                         {"inputs",
                          {{"capsule", capsule_inputs(cap, mats)}, {"V_m_s", V}, {"ambient_C", 25.0}, {"initial_C", 25.0},
                           {"correlation", "hilpert"}}},
                         {"outputs", out}});
    }

    const PoiseuilleProfile pp(0.04, 1.0);
    cases.push_back({{"case_id", "poiseuille_channel"},
                     {"inputs", {{"height_m", 0.04}, {"mean_m_s", 1.0}}},
                     {"outputs", {{"centerline_m_s", pp.centerline()}, {"ratio", pp.centerline() / pp.mean}}}});
    return nlohmann::json{{"cases", cases}};
}

}  // namespace pcmpack::oracle
