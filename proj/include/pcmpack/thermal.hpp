#pragma once

// Transient conjugate heat transfer on a MaterialGrid with a frozen FlowField.
// Finite volumes on in-duct cells, per metre of depth:
//
//   h² dH/dt = Σ G_f (T_nb − T) − (upwind advective outflow) + S
//
// G_f are the face conductances of the grid, advection uses the staggered face
// velocities (air only), S the battery-surface sources. Walls are adiabatic,
// inlets bring air at the inlet temperature, outlets carry T out with no
// diffusive flux. Time stepping is backward Euler with a linearized enthalpy
// update (default) or forward Euler under its positivity bound.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <json.hpp>

#include "pcmpack/discretization.hpp"
#include "pcmpack/enthalpy.hpp"
#include "pcmpack/error.hpp"
#include "pcmpack/flow.hpp"

namespace pcmpack {

enum class Integrator { implicit, explicit_euler };

inline const char* integrator_name(Integrator i) { return i == Integrator::implicit ? "implicit" : "explicit"; }

inline Integrator parse_integrator(const std::string& s) {
    if (s == "implicit") return Integrator::implicit;
    if (s == "explicit") return Integrator::explicit_euler;
    throw InvalidArgument("unknown integrator '" + s + "' (implicit|explicit)");
}

struct RunSettings {
    double inlet_temperature = 25.0;    // °C
    double initial_temperature = 25.0;  // °C
    double dt = 0.0;                    // s, 0 = auto
    double t_end = 20000.0;             // s
    double steady_tolerance = 1e-3;     // K/s
    int steady_records = 10;            // consecutive records below tolerance
    double record_interval = 5.0;       // s
    std::array<double, 2> operating_range{10.0, 55.0};
    double T_ideal = 45.0;
    Integrator integrator = Integrator::implicit;
    bool stop_when_steady = true;
    int max_nonlinear_iterations = 50;
    double nonlinear_tolerance = 1e-6;  // K, enthalpy linearization
    double linear_tolerance = 1e-11;    // relative residual of the iterative solve

    void validate() const {
        if (!(t_end > 0.0)) throw InvalidArgument("t_end must be > 0");
        if (!(steady_tolerance > 0.0)) throw InvalidArgument("steady_tolerance must be > 0");
        if (!(operating_range[0] < operating_range[1])) throw InvalidArgument("operating range must be low < high");
        if (!(record_interval > 0.0)) throw InvalidArgument("record_interval must be > 0");
        if (!(dt >= 0.0)) throw InvalidArgument("dt must be >= 0");
        if (steady_records < 1) throw InvalidArgument("steady_records must be >= 1");
        if (max_nonlinear_iterations < 1) throw InvalidArgument("max_nonlinear_iterations must be >= 1");
    }
};

struct ThermalState {
    std::vector<double> H;       // J/m³, every cell (0 outside the duct)
    std::vector<double> T;       // °C
    std::vector<double> lambda;  // liquid fraction, 0 on non-PCM cells
    double t = 0.0;
};

inline ThermalState uniform_state(const MaterialGrid& g, double T0) {
    ThermalState s;
    s.H.assign(g.cell_count(), 0.0);
    s.T.assign(g.cell_count(), T0);
    s.lambda.assign(g.cell_count(), 0.0);
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
        if (!g.in_duct(static_cast<int>(c))) continue;
        s.H[c] = temperature_to_enthalpy(T0, g.props(static_cast<int>(c)));
        s.lambda[c] = enthalpy_to_temperature(s.H[c], g.props(static_cast<int>(c))).liquid_fraction;
    }
    return s;
}

struct TimeSeries {
    std::vector<double> t;
    std::vector<double> T_max;
    std::vector<std::vector<double>> T_capsule;  // per record, per capsule max temperature
    std::vector<double> lambda_global;
    std::vector<double> energy_residual;  // cumulative, fraction of cumulative source input
    bool steady = false;
    double steady_time = std::numeric_limits<double>::quiet_NaN();
    std::size_t steps = 0;

    bool empty() const { return t.empty(); }
    std::size_t size() const { return t.size(); }

    /// `header` lines are written as "# ..." before the column row.
    void write_csv(const std::string& path, const std::vector<std::string>& header = {}) const {
        std::ofstream out(path);
        if (!out) throw Error("cannot open " + path);
        for (const auto& line : header) out << "# " << line << '\n';
        out << "t_s,T_max_C";
        const std::size_t nc = T_capsule.empty() ? 0 : T_capsule.front().size();
        char buf[64];
        for (std::size_t k = 0; k < nc; ++k) {
            std::snprintf(buf, sizeof buf, ",T_capsule_%02zu_C", k);
            out << buf;
        }
        out << ",lambda_global,energy_residual_frac\n";
        for (std::size_t r = 0; r < t.size(); ++r) {
            std::snprintf(buf, sizeof buf, "%.6f,%.9f", t[r], T_max[r]);
            out << buf;
            for (double v : T_capsule[r]) {
                std::snprintf(buf, sizeof buf, ",%.9f", v);
                out << buf;
            }
            std::snprintf(buf, sizeof buf, ",%.9f,%.6e\n", lambda_global[r], energy_residual[r]);
            out << buf;
        }
    }
};

/// Thrown when a steady state is asked for but no heat leaves the domain.
class NoSteadyState : public Error {
public:
    using Error::Error;
};

namespace detail {

/// Sparse-LU factorization reused as the preconditioner of BiCGSTAB.
class CachedLuPreconditioner {
public:
    using Matrix = Eigen::SparseMatrix<double>;
    CachedLuPreconditioner() = default;
    template <typename M>
    CachedLuPreconditioner& analyzePattern(const M&) { return *this; }
    template <typename M>
    CachedLuPreconditioner& factorize(const M&) { return *this; }
    template <typename M>
    CachedLuPreconditioner& compute(const M&) { return *this; }
    void set(const Eigen::SparseLU<Matrix>* lu) { lu_ = lu; }
    template <typename Rhs>
    Eigen::VectorXd solve(const Rhs& b) const { return lu_ ? Eigen::VectorXd(lu_->solve(b)) : Eigen::VectorXd(b); }
    Eigen::ComputationInfo info() const { return Eigen::Success; }

private:
    const Eigen::SparseLU<Matrix>* lu_ = nullptr;
};

}  // namespace detail

/// Discrete energy operator for one (grid, flow, inlet temperature) triple.
class ThermalOperator {
public:
    using Matrix = Eigen::SparseMatrix<double>;

    ThermalOperator(const MaterialGrid& g, const FlowField& f, double inlet_temperature) : g_(&g) {
        if (f.nx != g.nx || f.ny != g.ny) throw InvalidArgument("flow field does not match the grid");
        unknown_of_.assign(g.cell_count(), -1);
        for (std::size_t c = 0; c < g.cell_count(); ++c) {
            if (g.in_duct(static_cast<int>(c))) {
                unknown_of_[c] = static_cast<int>(cells_.size());
                cells_.push_back(static_cast<int>(c));
            }
        }
        if (cells_.empty()) throw EmptyDuct("no in-duct cells");
        const auto n = static_cast<Eigen::Index>(cells_.size());
        area_ = g.h * g.h;
        const MaterialProperties& air = g.properties[Material::air];
        const double rc_air = air.volumetric_heat_capacity();

        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(cells_.size() * 5);
        for (Eigen::Index q = 0; q < n; ++q) trip.emplace_back(q, q, 0.0);
        source_ = Eigen::VectorXd::Zero(n);
        inflow_ = Eigen::VectorXd::Zero(n);
        outlet_coef_ = Eigen::VectorXd::Zero(n);

        auto couple = [&](int a, int b, double G, double F) {
            // a → b positive direction; G conductance, F = ρc·u·h advective capacity rate.
            const int ua = unknown_of_[static_cast<std::size_t>(a)];
            const int ub = unknown_of_[static_cast<std::size_t>(b)];
            if (G > 0.0) {
                trip.emplace_back(ua, ua, G);
                trip.emplace_back(ub, ub, G);
                trip.emplace_back(ua, ub, -G);
                trip.emplace_back(ub, ua, -G);
            }
            if (F > 0.0) {
                trip.emplace_back(ua, ua, F);
                trip.emplace_back(ub, ua, -F);
            } else if (F < 0.0) {
                trip.emplace_back(ub, ub, -F);
                trip.emplace_back(ua, ub, F);
            }
        };
        for (int j = 0; j < g.ny; ++j) {
            for (int i = 0; i <= g.nx; ++i) {
                const auto fidx = static_cast<std::size_t>(g.xface(i, j));
                const bool l = i > 0 && g.in_duct(g.cell(i - 1, j));
                const bool r = i < g.nx && g.in_duct(g.cell(i, j));
                const double F = rc_air * f.u[fidx] * g.h;
                if (l && r) {
                    const double adv = (g.is_air(i - 1, j) && g.is_air(i, j)) ? F : 0.0;
                    couple(g.cell(i - 1, j), g.cell(i, j), g.kx[fidx], adv);
                    continue;
                }
                const PortTag tag = g.xface_port[fidx];
                if (tag == PortTag::inlet && r && f.u[fidx] != 0.0) {
                    const int ur = unknown_of_[static_cast<std::size_t>(g.cell(i, j))];
                    inflow_(ur) += F;  // times inlet temperature
                } else if (tag == PortTag::outlet && l && f.u[fidx] != 0.0) {
                    const int ul = unknown_of_[static_cast<std::size_t>(g.cell(i - 1, j))];
                    outlet_coef_(ul) += F;
                    trip.emplace_back(ul, ul, F);
                }
            }
        }
        for (int j = 1; j < g.ny; ++j) {
            for (int i = 0; i < g.nx; ++i) {
                if (!g.in_duct(g.cell(i, j - 1)) || !g.in_duct(g.cell(i, j))) continue;
                const auto fidx = static_cast<std::size_t>(g.yface(i, j));
                const double adv = (g.is_air(i, j - 1) && g.is_air(i, j)) ? rc_air * f.v[fidx] * g.h : 0.0;
                couple(g.cell(i, j - 1), g.cell(i, j), g.ky[fidx], adv);
            }
        }
        for (std::size_t k = 0; k < g.capsule_count(); ++k) {
            const auto& faces = g.capsule_surface_faces[k];
            if (faces.empty()) continue;
            const double per_cell = 0.5 * g.capsule_power[k] / static_cast<double>(faces.size());
            for (const SurfaceFace& sf : faces) {
                const int a = sf.x_normal ? g.cell(sf.i - 1, sf.j) : g.cell(sf.i, sf.j - 1);
                const int b = g.cell(sf.i, sf.j);
                source_(unknown_of_[static_cast<std::size_t>(a)]) += per_cell;
                source_(unknown_of_[static_cast<std::size_t>(b)]) += per_cell;
            }
        }
        A_.resize(n, n);
        A_.setFromTriplets(trip.begin(), trip.end());
        A_.makeCompressed();
        diag_pos_.resize(cells_.size());
        for (Eigen::Index col = 0; col < n; ++col) {
            for (Eigen::Index p = A_.outerIndexPtr()[col]; p < A_.outerIndexPtr()[col + 1]; ++p) {
                if (A_.innerIndexPtr()[p] == col) diag_pos_[static_cast<std::size_t>(col)] = p;
            }
        }
        set_inlet_temperature(inlet_temperature);
    }

    void set_inlet_temperature(double T_in) {
        inlet_temperature_ = T_in;
        b_ = source_ + inflow_ * T_in;
    }

    const MaterialGrid& grid() const { return *g_; }
    std::size_t unknowns() const { return cells_.size(); }
    const std::vector<int>& cells() const { return cells_; }
    const Matrix& matrix() const { return A_; }
    const Eigen::VectorXd& rhs() const { return b_; }
    double total_source() const { return source_.sum(); }
    double inflow_capacity_rate() const { return inflow_.sum(); }
    double outflow_capacity_rate() const { return outlet_coef_.sum(); }

    /// Net advective enthalpy leaving through the ports (W/m) for unknown temperatures Tq.
    double advective_outflow(const Eigen::VectorXd& Tq) const {
        return outlet_coef_.dot(Tq) - inflow_.sum() * inlet_temperature_;
    }

    Eigen::VectorXd gather_T(const ThermalState& s) const {
        Eigen::VectorXd v(static_cast<Eigen::Index>(cells_.size()));
        for (std::size_t q = 0; q < cells_.size(); ++q) v(static_cast<Eigen::Index>(q)) = s.T[static_cast<std::size_t>(cells_[q])];
        return v;
    }

    double stored_energy(const ThermalState& s) const {
        double e = 0.0;
        for (int c : cells_) e += s.H[static_cast<std::size_t>(c)];
        return e * area_;
    }

    /// Largest forward-Euler step keeping every update a convex combination.
    double explicit_stability_limit() const {
        double dt = std::numeric_limits<double>::infinity();
        for (std::size_t q = 0; q < cells_.size(); ++q) {
            const double app = A_.valuePtr()[diag_pos_[q]];
            if (app <= 0.0) continue;
            const double rc = g_->props(cells_[q]).volumetric_heat_capacity();
            dt = std::min(dt, area_ * rc / app);
        }
        return dt;
    }

    /// Auto explicit step: advective CFL 0.5, diffusion number 0.25, positivity.
    double auto_explicit_dt(const FlowField& f) const {
        const MaterialGrid& g = *g_;
        double umax = 0.0;
        for (double u : f.u) umax = std::max(umax, std::abs(u));
        for (double v : f.v) umax = std::max(umax, std::abs(v));
        double amax = 0.0;
        for (Material m : kAllMaterials) {
            if (m == Material::outside) continue;
            const auto& p = g.properties[m];
            amax = std::max(amax, p.conductivity / p.volumetric_heat_capacity());
        }
        double dt = explicit_stability_limit();
        if (umax > 0.0) dt = std::min(dt, 0.5 * g.h / umax);
        if (amax > 0.0) dt = std::min(dt, 0.25 * g.h * g.h / amax);
        return dt;
    }

    struct StepInfo {
        double source_energy = 0.0;     // J/m over the step
        double outflow_energy = 0.0;    // J/m over the step
        int nonlinear_iterations = 0;
        int linear_iterations = 0;
    };

    StepInfo step_explicit(ThermalState& s, double dt) const {
        const double limit = explicit_stability_limit();
        if (dt > limit * (1.0 + 1e-12)) {
            throw StabilityViolation("explicit dt " + std::to_string(dt) + " s exceeds the stability limit " +
                                     std::to_string(limit) + " s");
        }
        const Eigen::VectorXd Tq = gather_T(s);
        const Eigen::VectorXd dH = (b_ - A_ * Tq) * (dt / area_);
        for (std::size_t q = 0; q < cells_.size(); ++q) s.H[static_cast<std::size_t>(cells_[q])] += dH(static_cast<Eigen::Index>(q));
        derive(s);
        s.t += dt;
        return {dt * total_source(), dt * advective_outflow(Tq), 1, 0};
    }

    StepInfo step_implicit(ThermalState& s, double dt, const RunSettings& rs) {
        const auto n = static_cast<Eigen::Index>(cells_.size());
        Eigen::VectorXd Hn(n);
        Eigen::VectorXd Hk(n);
        Eigen::VectorXd Tk(n);
        for (Eigen::Index q = 0; q < n; ++q) {
            const auto c = static_cast<std::size_t>(cells_[static_cast<std::size_t>(q)]);
            Hn(q) = s.H[c];
            Tk(q) = s.T[c];
        }
        Hk = Hn;
        StepInfo info;
        Eigen::VectorXd C(n);
        Eigen::VectorXd Tnew = Tk;
        const double w = area_ / dt;
        bool done = false;
        for (int it = 0; it < rs.max_nonlinear_iterations; ++it) {
            bool changed = !M_valid_ || std::abs(dt - M_dt_) > 0.0;
            for (Eigen::Index q = 0; q < n; ++q) {
                const double cq = apparent_heat_capacity(Hk(q), g_->props(cells_[static_cast<std::size_t>(q)]));
                C(q) = cq;
                if (!M_valid_ || cq != Ccur_(q)) changed = true;
            }
            if (changed) assemble(C, dt);
            const Eigen::VectorXd r = b_ + w * (Hn - Hk + C.cwiseProduct(Tk));
            info.linear_iterations += solve(r, Tnew, rs.linear_tolerance);
            const Eigen::VectorXd Hnext = Hk + C.cwiseProduct(Tnew - Tk);
            double err = 0.0;
            Eigen::VectorXd Tnext(n);
            for (Eigen::Index q = 0; q < n; ++q) {
                Tnext(q) = enthalpy_to_temperature(Hnext(q), g_->props(cells_[static_cast<std::size_t>(q)])).temperature;
                err = std::max(err, std::abs(Tnext(q) - Tnew(q)));
            }
            Hk = Hnext;
            Tk = Tnext;
            info.nonlinear_iterations = it + 1;
            if (err < rs.nonlinear_tolerance) {
                done = true;
                break;
            }
        }
        if (!done) {
            throw NonConvergence("enthalpy linearization at t = " + std::to_string(s.t), static_cast<std::size_t>(info.nonlinear_iterations),
                                 0.0);
        }
        for (Eigen::Index q = 0; q < n; ++q) s.H[static_cast<std::size_t>(cells_[static_cast<std::size_t>(q)])] = Hk(q);
        derive(s);
        s.t += dt;
        info.source_energy = dt * total_source();
        info.outflow_energy = dt * advective_outflow(Tnew);
        return info;
    }

    /// Steady temperatures A·T = b (needs a heat sink: some outflow).
    ThermalState steady_state() {
        if (!(outflow_capacity_rate() > 0.0)) throw NoSteadyState("no advective heat sink: the domain has no steady state");
        Eigen::SparseLU<Matrix> lu;
        lu.analyzePattern(A_);
        lu.factorize(A_);
        if (lu.info() != Eigen::Success) throw Error("steady thermal factorization failed");
        const Eigen::VectorXd Tq = lu.solve(b_);
        ThermalState s = uniform_state(*g_, inlet_temperature_);
        for (std::size_t q = 0; q < cells_.size(); ++q) {
            const auto c = static_cast<std::size_t>(cells_[q]);
            s.H[c] = temperature_to_enthalpy(Tq(static_cast<Eigen::Index>(q)), g_->props(cells_[q]));
        }
        derive(s);
        s.t = std::numeric_limits<double>::infinity();
        return s;
    }

    void derive(ThermalState& s) const {
        for (int c : cells_) {
            const auto k = static_cast<std::size_t>(c);
            if (!std::isfinite(s.H[k])) throw StabilityViolation("non-finite enthalpy in cell " + std::to_string(c), c);
            const PhaseState p = enthalpy_to_temperature(s.H[k], g_->props(c));
            s.T[k] = p.temperature;
            s.lambda[k] = p.liquid_fraction;
        }
    }

private:
    const MaterialGrid* g_;
    std::vector<int> unknown_of_;
    std::vector<int> cells_;
    double area_ = 0.0;
    double inlet_temperature_ = 25.0;
    Matrix A_;
    std::vector<Eigen::Index> diag_pos_;
    Eigen::VectorXd source_, inflow_, outlet_coef_, b_;

    // Implicit system M = A + diag(h²·C/dt) and its cached factorization.
    Matrix M_;
    Eigen::VectorXd Ccur_;
    double M_dt_ = 0.0;
    bool M_valid_ = false;
    Eigen::SparseLU<Matrix> lu_;
    bool lu_valid_ = false;
    bool lu_analyzed_ = false;

    void assemble(const Eigen::VectorXd& C, double dt) {
        if (!M_valid_) M_ = A_;
        std::copy(A_.valuePtr(), A_.valuePtr() + A_.nonZeros(), M_.valuePtr());
        const double w = area_ / dt;
        for (std::size_t q = 0; q < cells_.size(); ++q) M_.valuePtr()[diag_pos_[q]] += w * C(static_cast<Eigen::Index>(q));
        Ccur_ = C;
        M_dt_ = dt;
        M_valid_ = true;
    }

    void refactor() {
        if (!lu_analyzed_) {
            lu_.analyzePattern(M_);
            lu_analyzed_ = true;
        }
        lu_.factorize(M_);
        if (lu_.info() != Eigen::Success) throw Error("thermal factorization failed");
        lu_valid_ = true;
    }

    int solve(const Eigen::VectorXd& r, Eigen::VectorXd& x, double tol) {
        if (!lu_valid_) {
            refactor();
            x = lu_.solve(r);
            return 0;
        }
        Eigen::BiCGSTAB<Matrix, detail::CachedLuPreconditioner> it;
        it.preconditioner().set(&lu_);
        it.setTolerance(tol);
        it.setMaxIterations(8);
        it.compute(M_);
        Eigen::VectorXd guess = x;
        x = it.solveWithGuess(r, guess);
        if (it.info() == Eigen::Success && it.iterations() <= 6) return static_cast<int>(it.iterations());
        refactor();
        x = lu_.solve(r);
        return static_cast<int>(it.iterations());
    }
};

// ---------------------------------------------------------------------------
// Reports

/// Area-weighted liquid fraction over all PCM cells (0 without PCM).
inline double global_liquid_fraction(const ThermalState& s, const MaterialGrid& g) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
        if (g.material[c] != Material::pcm) continue;
        sum += s.lambda[c];
        ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

inline double max_temperature(const ThermalState& s, const MaterialGrid& g) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < g.cell_count(); ++c)
        if (g.in_duct(static_cast<int>(c))) m = std::max(m, s.T[c]);
    return m;
}

inline std::vector<double> capsule_max_temperatures(const ThermalState& s, const MaterialGrid& g) {
    std::vector<double> m(g.capsule_count(), -std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
        const int k = g.capsule_of_cell[c];
        if (k >= 0 && g.in_duct(static_cast<int>(c))) m[static_cast<std::size_t>(k)] = std::max(m[static_cast<std::size_t>(k)], s.T[c]);
    }
    return m;
}

struct CapsuleRecord {
    std::size_t index = 0;
    double max_surface_temperature = 0.0;  // °C, battery surface (core boundary)
    double mean_core_temperature = 0.0;    // °C
    double max_temperature = 0.0;          // °C, any cell of the capsule
    double pcm_liquid_fraction = 0.0;
    bool exceed_ideal = false;
    bool exceed_range = false;
};

struct CapsuleReport {
    std::vector<CapsuleRecord> capsules;
    std::size_t hottest = 0;  // by max surface temperature, tie → lowest index
};

inline CapsuleReport capsule_report(const ThermalState& s, const MaterialGrid& g, const RunSettings& rs = {}) {
    if (s.T.size() != g.cell_count()) throw InvalidArgument("state does not match the grid");
    const std::size_t nc = g.capsule_count();
    CapsuleReport r;
    r.capsules.resize(nc);
    std::vector<double> core_sum(nc, 0.0), pcm_sum(nc, 0.0);
    std::vector<std::size_t> core_n(nc, 0), pcm_n(nc, 0);
    for (std::size_t k = 0; k < nc; ++k) {
        r.capsules[k].index = k;
        r.capsules[k].max_surface_temperature = -std::numeric_limits<double>::infinity();
        r.capsules[k].max_temperature = -std::numeric_limits<double>::infinity();
    }
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
        const int k = g.capsule_of_cell[c];
        if (k < 0 || !g.in_duct(static_cast<int>(c))) continue;
        auto& rec = r.capsules[static_cast<std::size_t>(k)];
        rec.max_temperature = std::max(rec.max_temperature, s.T[c]);
        if (g.material[c] == Material::battery_core) {
            core_sum[static_cast<std::size_t>(k)] += s.T[c];
            ++core_n[static_cast<std::size_t>(k)];
        } else if (g.material[c] == Material::pcm) {
            pcm_sum[static_cast<std::size_t>(k)] += s.lambda[c];
            ++pcm_n[static_cast<std::size_t>(k)];
        }
    }
    for (std::size_t k = 0; k < nc; ++k) {
        auto& rec = r.capsules[k];
        for (const SurfaceFace& sf : g.capsule_surface_faces[k]) {
            const int a = sf.x_normal ? g.cell(sf.i - 1, sf.j) : g.cell(sf.i, sf.j - 1);
            const int b = g.cell(sf.i, sf.j);
            const double Ts = 0.5 * (s.T[static_cast<std::size_t>(a)] + s.T[static_cast<std::size_t>(b)]);
            rec.max_surface_temperature = std::max(rec.max_surface_temperature, Ts);
        }
        if (g.capsule_surface_faces[k].empty()) rec.max_surface_temperature = rec.max_temperature;
        rec.mean_core_temperature = core_n[k] ? core_sum[k] / static_cast<double>(core_n[k]) : rec.max_temperature;
        rec.pcm_liquid_fraction = pcm_n[k] ? pcm_sum[k] / static_cast<double>(pcm_n[k]) : 0.0;
        rec.exceed_ideal = rec.max_surface_temperature > rs.T_ideal;
        rec.exceed_range = rec.max_surface_temperature > rs.operating_range[1] ||
                           rec.mean_core_temperature < rs.operating_range[0];
        if (rec.max_surface_temperature > r.capsules[r.hottest].max_surface_temperature) r.hottest = k;
    }
    return r;
}

inline nlohmann::json to_json(const CapsuleReport& r) {
    nlohmann::json caps = nlohmann::json::array();
    for (const auto& c : r.capsules) {
        caps.push_back({{"index", c.index},
                        {"max_surface_temperature_C", c.max_surface_temperature},
                        {"mean_core_temperature_C", c.mean_core_temperature},
                        {"max_temperature_C", c.max_temperature},
                        {"pcm_liquid_fraction", c.pcm_liquid_fraction},
                        {"exceed_ideal", c.exceed_ideal},
                        {"exceed_range", c.exceed_range}});
    }
    return {{"capsules", caps}, {"hottest", r.hottest}};
}

enum class MeltStatus { complete, incomplete, no_melting };

inline const char* melt_status_name(MeltStatus m) {
    switch (m) {
        case MeltStatus::complete: return "complete";
        case MeltStatus::incomplete: return "incomplete";
        case MeltStatus::no_melting: return "no-melting";
    }
    return "?";
}

struct PhaseChangeDuration {
    double t_start = std::numeric_limits<double>::quiet_NaN();
    double t_end = std::numeric_limits<double>::quiet_NaN();
    double duration = std::numeric_limits<double>::quiet_NaN();
    MeltStatus status = MeltStatus::no_melting;
};

inline PhaseChangeDuration phase_change_duration(const TimeSeries& ts) {
    if (ts.empty()) throw InvalidArgument("empty time series");
    PhaseChangeDuration d;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        if (std::isnan(d.t_start) && ts.lambda_global[k] > 0.0) d.t_start = ts.t[k];
        if (ts.lambda_global[k] >= 1.0) {
            d.t_end = ts.t[k];
            break;
        }
    }
    if (std::isnan(d.t_start)) return d;
    if (std::isnan(d.t_end)) {
        d.status = MeltStatus::incomplete;
        return d;
    }
    d.status = MeltStatus::complete;
    d.duration = d.t_end - d.t_start;
    return d;
}

// ---------------------------------------------------------------------------
// Drivers

struct TransientResult {
    ThermalState state;
    TimeSeries series;
};

/// Called after every record with the state at that time.
using RecordHook = std::function<void(const ThermalState&)>;

namespace detail {

inline double auto_dt(const ThermalOperator& op, const FlowField& f, const RunSettings& rs) {
    if (rs.integrator == Integrator::explicit_euler) return op.auto_explicit_dt(f);
    return std::min(rs.record_interval, rs.t_end);
}

}  // namespace detail

inline TransientResult run_transient(const MaterialGrid& g, const FlowField& f, const RunSettings& rs,
                                     std::optional<ThermalState> initial = std::nullopt, const RecordHook& on_record = {}) {
    rs.validate();
    ThermalOperator op(g, f, rs.inlet_temperature);
    TransientResult res;
    res.state = initial ? std::move(*initial) : uniform_state(g, rs.initial_temperature);
    if (initial) op.derive(res.state);
    ThermalState& s = res.state;
    TimeSeries& ts = res.series;
    const double dt = rs.dt > 0.0 ? rs.dt : detail::auto_dt(op, f, rs);
    if (rs.integrator == Integrator::explicit_euler && dt > op.explicit_stability_limit() * (1.0 + 1e-12)) {
        throw StabilityViolation("explicit dt " + std::to_string(dt) + " s exceeds the stability limit " +
                                 std::to_string(op.explicit_stability_limit()) + " s");
    }
    const double t0 = s.t;
    const double E0 = op.stored_energy(s);
    double source_cum = 0.0;
    double outflow_cum = 0.0;

    auto record = [&]() {
        ts.t.push_back(s.t);
        ts.T_max.push_back(max_temperature(s, g));
        ts.T_capsule.push_back(capsule_max_temperatures(s, g));
        ts.lambda_global.push_back(global_liquid_fraction(s, g));
        const double resid = op.stored_energy(s) - E0 - source_cum + outflow_cum;
        const double scale = std::max({source_cum, std::abs(outflow_cum), 1e-300});
        ts.energy_residual.push_back(source_cum == 0.0 && outflow_cum == 0.0 ? std::abs(resid) : std::abs(resid) / scale);
        if (on_record) on_record(s);
    };
    record();
    std::vector<double> T_prev = s.T;
    double t_prev = s.t;
    int calm = 0;
    double next_record = t0 + rs.record_interval;
    const double t_stop = t0 + rs.t_end;
    while (s.t < t_stop - 1e-9 * rs.t_end) {
        const double h_step = std::min({dt, t_stop - s.t, next_record - s.t});
        ThermalOperator::StepInfo info = rs.integrator == Integrator::implicit ? op.step_implicit(s, h_step, rs)
                                                                               : op.step_explicit(s, h_step);
        source_cum += info.source_energy;
        outflow_cum += info.outflow_energy;
        ++ts.steps;
        if (s.t >= next_record - 1e-9 * rs.record_interval) {
            s.t = next_record;  // absorb round-off
            next_record += rs.record_interval;
            record();
            double rate = 0.0;
            for (int c : op.cells()) {
                const auto k = static_cast<std::size_t>(c);
                rate = std::max(rate, std::abs(s.T[k] - T_prev[k]));
            }
            rate /= (s.t - t_prev);
            T_prev = s.T;
            t_prev = s.t;
            // A latent plateau is not a steady state.
            bool melting = false;
            for (int c : op.cells()) {
                const double l = s.lambda[static_cast<std::size_t>(c)];
                if (l > 0.0 && l < 1.0) {
                    melting = true;
                    break;
                }
            }
            calm = (rate < rs.steady_tolerance && !melting) ? calm + 1 : 0;
            if (calm >= rs.steady_records && !ts.steady) {
                ts.steady = true;
                ts.steady_time = s.t;
                if (rs.stop_when_steady) break;
            }
        }
    }
    if (ts.t.back() != s.t) record();
    return res;
}

/// One time step from `state` (builds the operator; use ThermalOperator for loops).
inline ThermalState step(const ThermalState& state, const FlowField& f, const MaterialGrid& g, const RunSettings& rs,
                         double dt) {
    rs.validate();
    if (!(dt > 0.0)) throw InvalidArgument("dt must be > 0");
    ThermalOperator op(g, f, rs.inlet_temperature);
    ThermalState s = state;
    if (rs.integrator == Integrator::implicit) {
        op.step_implicit(s, dt, rs);
    } else {
        op.step_explicit(s, dt);
    }
    return s;
}

/// Infinite-time limit of run_transient: the steady linear energy balance.
inline ThermalState solve_steady_state(const MaterialGrid& g, const FlowField& f, const RunSettings& rs) {
    rs.validate();
    ThermalOperator op(g, f, rs.inlet_temperature);
    return op.steady_state();
}

inline void write_field_csv(const ThermalState& s, const FlowField& f, const MaterialGrid& g, const std::string& path,
                            const std::vector<std::string>& header = {}) {
    write_flow_csv(f, g, path, {{"T_C", &s.T}, {"lambda", &s.lambda}}, header);
}

}  // namespace pcmpack
