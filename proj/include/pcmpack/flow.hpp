#pragma once

// Steady incompressible laminar flow on the staggered grid of a MaterialGrid:
// SIMPLE pressure-velocity coupling, first-order upwind convection,
// Gauss-Seidel momentum sweeps and a sparse LDLT pressure correction.
// u lives on x-faces, v on y-faces, p at cell centres (gauge, outlet = 0).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <tuple>
#include <string>
#include <vector>

#include <Eigen/SparseCholesky>
#include <Eigen/Sparse>
#include <json.hpp>

#include "pcmpack/discretization.hpp"
#include "pcmpack/error.hpp"

namespace pcmpack {

struct FlowOptions {
    double momentum_relaxation = 0.7;
    double pressure_relaxation = 0.3;
    double tolerance = 1e-6;            // on normalized momentum and continuity residuals
    std::size_t max_iterations = 50000;
    int momentum_sweeps = 2;            // Gauss-Seidel sweeps per outer iteration
    int refactor_interval = 20;         // outer iterations between pressure-matrix refreshes
    double d_drift_tolerance = 0.05;    // refresh earlier once any d moved by this fraction
    bool throw_on_nonconvergence = true;
    // Stall handling: every `stall_window` iterations the best residual of the
    // window is compared to the previous window's; less than a factor
    // `stall_factor` improvement moves to the next (stronger) relaxation pair,
    // or ends the solve when none is left. 0 disables.
    std::size_t stall_window = 1000;
    double stall_factor = 0.5;
    std::vector<std::pair<double, double>> fallback_relaxation = {{0.5, 0.2}, {0.3, 0.1}};

    void validate() const {
        if (!(momentum_relaxation > 0.0 && momentum_relaxation <= 1.0)) {
            throw InvalidArgument("momentum relaxation must be in (0, 1]");
        }
        if (!(pressure_relaxation > 0.0 && pressure_relaxation <= 1.0)) {
            throw InvalidArgument("pressure relaxation must be in (0, 1]");
        }
        if (!(tolerance > 0.0)) throw InvalidArgument("flow tolerance must be > 0");
        if (max_iterations == 0) throw InvalidArgument("flow max_iterations must be > 0");
        if (momentum_sweeps < 1 || refactor_interval < 1) throw InvalidArgument("flow sweep counts must be >= 1");
        if (!(stall_factor > 0.0 && stall_factor < 1.0)) throw InvalidArgument("stall_factor must be in (0, 1)");
        for (const auto& [a, b] : fallback_relaxation) {
            if (!(a > 0.0 && a <= 1.0 && b > 0.0 && b <= 1.0)) throw InvalidArgument("fallback relaxation out of range");
        }
    }
};

enum class FaceKind : std::uint8_t { wall = 0, interior, inlet, outlet };

struct FlowField {
    int nx = 0;
    int ny = 0;
    double h = 0.0;
    std::vector<double> u;  // x-faces, (nx+1)·ny
    std::vector<double> v;  // y-faces, nx·(ny+1)
    std::vector<double> p;  // cells
    std::vector<FaceKind> xkind;
    std::vector<FaceKind> ykind;
    double inlet_speed = 0.0;
    double reynolds = 0.0;
    std::size_t iterations = 0;
    int relaxation_stage = 0;  // 0 = primary pair, k = k-th fallback
    bool stalled = false;
    double momentum_residual = 0.0;
    double continuity_residual = 0.0;
    bool converged = true;
    std::vector<std::string> warnings;

    double residual() const { return std::max(momentum_residual, continuity_residual); }
};

namespace detail {

using PressureSolver = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower>;

struct FlowTopology {
    std::vector<std::uint8_t> live;  // air cell connected to an outlet
    std::vector<FaceKind> xk;
    std::vector<FaceKind> yk;
    std::size_t n_inlet = 0;
    std::size_t n_outlet = 0;
};

inline FlowTopology flow_topology(const MaterialGrid& g) {
    FlowTopology t;
    const int nx = g.nx;
    const int ny = g.ny;
    t.live.assign(g.cell_count(), 0);
    t.xk.assign(static_cast<std::size_t>(nx + 1) * static_cast<std::size_t>(ny), FaceKind::wall);
    t.yk.assign(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny + 1), FaceKind::wall);

    // Air cells reachable from an outlet through air-air faces.
    std::deque<int> queue;
    for (int j = 0; j < ny; ++j) {
        for (int i = 1; i <= nx; ++i) {
            if (g.xface_port[static_cast<std::size_t>(g.xface(i, j))] == PortTag::outlet && g.is_air(i - 1, j)) {
                const int c = g.cell(i - 1, j);
                if (!t.live[static_cast<std::size_t>(c)]) {
                    t.live[static_cast<std::size_t>(c)] = 1;
                    queue.push_back(c);
                }
            }
        }
    }
    while (!queue.empty()) {
        const int c = queue.front();
        queue.pop_front();
        const int i = c % nx;
        const int j = c / nx;
        const int di[4] = {1, -1, 0, 0};
        const int dj[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
            const int a = i + di[k];
            const int b = j + dj[k];
            if (!g.is_air(a, b)) continue;
            const int n = g.cell(a, b);
            if (!t.live[static_cast<std::size_t>(n)]) {
                t.live[static_cast<std::size_t>(n)] = 1;
                queue.push_back(n);
            }
        }
    }
    auto live = [&](int i, int j) {
        return i >= 0 && j >= 0 && i < nx && j < ny && t.live[static_cast<std::size_t>(g.cell(i, j))] != 0;
    };
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i <= nx; ++i) {
            const auto f = static_cast<std::size_t>(g.xface(i, j));
            const PortTag tag = g.xface_port[f];
            if (tag == PortTag::inlet) {
                if (!live(i, j)) throw MissingPort("an inlet face is not connected to any outlet");
                t.xk[f] = FaceKind::inlet;
                ++t.n_inlet;
            } else if (tag == PortTag::outlet) {
                t.xk[f] = FaceKind::outlet;
                ++t.n_outlet;
            } else if (live(i - 1, j) && live(i, j)) {
                t.xk[f] = FaceKind::interior;
            }
        }
    }
    for (int j = 0; j <= ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            if (live(i, j - 1) && live(i, j)) t.yk[static_cast<std::size_t>(g.yface(i, j))] = FaceKind::interior;
        }
    }
    return t;
}

// Neighbour codes in the momentum stencil.
inline constexpr int kWallGhost = -1;  // mirrored velocity, wall at h/2
inline constexpr int kZeroGrad = -2;   // outflow, zero gradient

struct MomentumStencil {
    std::vector<int> face;            // unknown -> face index in its array
    std::vector<std::array<int, 4>> nb;     // E, W, N, S (face index or ghost code)
    std::vector<std::array<int, 4>> flux_a; // faces whose mean gives the CV-face mass flux (−1: zero)
    std::vector<std::array<int, 4>> flux_b;
};

class SimpleSolver {
public:
    SimpleSolver(const MaterialGrid& g, const FlowTopology& t, double V, const FlowOptions& opt)
        : g_(g), t_(t), V_(V), opt_(opt) {
        nx_ = g.nx;
        ny_ = g.ny;
        h_ = g.h;
        rho_ = g.properties[Material::air].density;
        mu_ = g.properties.air_viscosity;
        build_stencils();
        build_pressure_pattern();
    }

    void run(FlowField& f) {
        u_.assign(t_.xk.size(), 0.0);
        v_.assign(t_.yk.size(), 0.0);
        p_.assign(g_.cell_count(), 0.0);
        for (std::size_t k = 0; k < t_.xk.size(); ++k)
            if (t_.xk[k] == FaceKind::inlet) u_[k] = V_;
        inlet_flux_ = V_ * h_ * static_cast<double>(t_.n_inlet);

        // Potential-flow start: project the inlet plug with unit d.
        du_.assign(ustencil_.face.size(), h_ * h_ / mu_);
        dv_.assign(vstencil_.face.size(), h_ * h_ / mu_);
        refactor();
        project(0.0);

        std::size_t it = 0;
        double rm = 1.0;
        double rc = 1.0;
        alpha_u_ = opt_.momentum_relaxation;
        alpha_p_ = opt_.pressure_relaxation;
        int stage = 0;
        bool stalled = false;
        double best_prev = std::numeric_limits<double>::infinity();
        double best_cur = std::numeric_limits<double>::infinity();
        std::size_t window_start = 0;
        for (; it < opt_.max_iterations; ++it) {
            rm = momentum();
            rc = continuity_residual();
            if (it % static_cast<std::size_t>(opt_.refactor_interval) == 0 || d_drift() > opt_.d_drift_tolerance) refactor();
            project(alpha_p_);
            if (rm < opt_.tolerance && rc < opt_.tolerance) {
                ++it;
                break;
            }
            if (opt_.stall_window == 0) continue;
            best_cur = std::min(best_cur, std::max(rm, rc));
            if (it + 1 - window_start < opt_.stall_window) continue;
            if (best_cur > opt_.stall_factor * best_prev) {
                if (static_cast<std::size_t>(stage) >= opt_.fallback_relaxation.size()) {
                    stalled = true;
                    ++it;
                    break;
                }
                std::tie(alpha_u_, alpha_p_) = opt_.fallback_relaxation[static_cast<std::size_t>(stage)];
                ++stage;
                best_prev = std::numeric_limits<double>::infinity();
            } else {
                best_prev = best_cur;
            }
            best_cur = std::numeric_limits<double>::infinity();
            window_start = it + 1;
        }
        f.relaxation_stage = stage;
        f.stalled = stalled;
        // Exact final projection with current coefficients.
        refactor();
        project(1.0);

        f.iterations = it;
        f.momentum_residual = rm;
        f.continuity_residual = rc;
        f.converged = rm < opt_.tolerance && rc < opt_.tolerance;
        f.u = std::move(u_);
        f.v = std::move(v_);
        f.p = std::move(p_);
        for (std::size_t c = 0; c < f.p.size(); ++c)
            if (!t_.live[c]) f.p[c] = 0.0;
    }

private:
    const MaterialGrid& g_;
    const FlowTopology& t_;
    double V_;
    FlowOptions opt_;
    double alpha_u_ = 0.7, alpha_p_ = 0.3;
    int nx_ = 0, ny_ = 0;
    double h_ = 0.0, rho_ = 0.0, mu_ = 0.0, inlet_flux_ = 0.0;

    std::vector<double> u_, v_, p_;
    MomentumStencil ustencil_, vstencil_;
    std::vector<double> du_, dv_;        // current d = h / a_P(relaxed)
    std::vector<double> du_lag_, dv_lag_; // d used by the factorized matrix
    std::vector<int> pidx_;               // cell -> pressure unknown
    std::vector<int> pcell_;              // pressure unknown -> cell
    Eigen::SparseMatrix<double> M_;
    PressureSolver chol_;
    bool analyzed_ = false;

    // Per-unknown coefficients of the current outer iteration.
    std::vector<std::array<double, 4>> anb_;
    std::vector<double> ap_, b_;

    std::size_t xf(int i, int j) const { return static_cast<std::size_t>(j * (nx_ + 1) + i); }
    std::size_t yf(int i, int j) const { return static_cast<std::size_t>(j * nx_ + i); }
    bool live(int i, int j) const {
        return i >= 0 && j >= 0 && i < nx_ && j < ny_ && t_.live[static_cast<std::size_t>(j * nx_ + i)] != 0;
    }

    void build_stencils() {
        // u unknowns: interior and outlet x-faces.
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i <= nx_; ++i) {
                const FaceKind k = t_.xk[xf(i, j)];
                if (k != FaceKind::interior && k != FaceKind::outlet) continue;
                std::array<int, 4> nb{};
                std::array<int, 4> fa{};
                std::array<int, 4> fb{};
                const int self = static_cast<int>(xf(i, j));
                nb[0] = k == FaceKind::outlet ? kZeroGrad : static_cast<int>(xf(i + 1, j));
                nb[1] = static_cast<int>(xf(i - 1, j));
                auto tangential = [&](int jj) {
                    if (jj < 0 || jj >= ny_) return kWallGhost;
                    const FaceKind nk = t_.xk[xf(i, jj)];
                    if (nk != FaceKind::wall) return static_cast<int>(xf(i, jj));
                    if (!live(i - 1, jj) && !live(i, jj)) return kWallGhost;
                    return static_cast<int>(xf(i, jj));
                };
                nb[2] = tangential(j + 1);
                nb[3] = tangential(j - 1);
                // Mass fluxes: E/W from u (means with self), N/S from v at the CV top/bottom.
                fa[0] = self;
                fb[0] = k == FaceKind::outlet ? self : nb[0];
                fa[1] = nb[1];
                fb[1] = self;
                fa[2] = static_cast<int>(yf(i - 1, j + 1));
                fb[2] = i < nx_ ? static_cast<int>(yf(i, j + 1)) : -1;
                fa[3] = static_cast<int>(yf(i - 1, j));
                fb[3] = i < nx_ ? static_cast<int>(yf(i, j)) : -1;
                ustencil_.face.push_back(self);
                ustencil_.nb.push_back(nb);
                ustencil_.flux_a.push_back(fa);
                ustencil_.flux_b.push_back(fb);
            }
        }
        // v unknowns: interior y-faces.
        for (int j = 0; j <= ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                if (t_.yk[yf(i, j)] != FaceKind::interior) continue;
                std::array<int, 4> nb{};
                std::array<int, 4> fa{};
                std::array<int, 4> fb{};
                const int self = static_cast<int>(yf(i, j));
                auto lateral = [&](int ii, int xi) {
                    // ii: column of the neighbouring y-face; xi: x-face column between.
                    const FaceKind a = t_.xk[xf(xi, j - 1)];
                    const FaceKind b = t_.xk[xf(xi, j)];
                    if (ii >= 0 && ii < nx_) {
                        if (t_.yk[yf(ii, j)] != FaceKind::wall) return static_cast<int>(yf(ii, j));
                        if (live(ii, j - 1) || live(ii, j)) return static_cast<int>(yf(ii, j));
                    }
                    if (a == FaceKind::outlet || b == FaceKind::outlet) return kZeroGrad;
                    return kWallGhost;
                };
                nb[0] = lateral(i + 1, i + 1);
                nb[1] = lateral(i - 1, i);
                nb[2] = static_cast<int>(yf(i, j + 1));
                nb[3] = static_cast<int>(yf(i, j - 1));
                fa[0] = static_cast<int>(xf(i + 1, j - 1));
                fb[0] = static_cast<int>(xf(i + 1, j));
                fa[1] = static_cast<int>(xf(i, j - 1));
                fb[1] = static_cast<int>(xf(i, j));
                fa[2] = self;
                fb[2] = nb[2];
                fa[3] = nb[3];
                fb[3] = self;
                vstencil_.face.push_back(self);
                vstencil_.nb.push_back(nb);
                vstencil_.flux_a.push_back(fa);
                vstencil_.flux_b.push_back(fb);
            }
        }
    }

    void build_pressure_pattern() {
        pidx_.assign(g_.cell_count(), -1);
        for (std::size_t c = 0; c < g_.cell_count(); ++c) {
            if (t_.live[c]) {
                pidx_[c] = static_cast<int>(pcell_.size());
                pcell_.push_back(static_cast<int>(c));
            }
        }
    }

    // Momentum for one component. `along` is the array holding the unknowns,
    // `cross` the other component (supplies lateral mass fluxes).
    double momentum_component(const MomentumStencil& s, std::vector<double>& along, const std::vector<double>& cross,
                              bool is_u, std::vector<double>& d) {
        const std::size_t n = s.face.size();
        anb_.resize(n);
        ap_.resize(n);
        b_.resize(n);
        const double alpha = alpha_u_;
        const double rh = 0.5 * rho_ * h_;
        double res = 0.0;
        double norm = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const auto& nb = s.nb[k];
            const auto& fa = s.flux_a[k];
            const auto& fb = s.flux_b[k];
            auto val = [](const std::vector<double>& a, int idx) { return idx >= 0 ? a[static_cast<std::size_t>(idx)] : 0.0; };
            double F[4];
            for (int q = 0; q < 4; ++q) {
                const bool own = is_u ? (q < 2) : (q >= 2);
                const std::vector<double>& src = own ? along : cross;
                F[q] = rh * (val(src, fa[q]) + val(src, fb[q]));
            }
            // Outward fluxes: E and N as computed, W and S reversed.
            const double out[4] = {F[0], -F[1], F[2], -F[3]};
            double ap = 0.0;
            std::array<double, 4> a{};
            for (int q = 0; q < 4; ++q) {
                double D = mu_;
                if (nb[q] == kWallGhost) D = 2.0 * mu_;
                if (nb[q] == kZeroGrad) D = 0.0;
                ap += D + std::max(out[q], 0.0);
                a[q] = nb[q] >= 0 ? D + std::max(-out[q], 0.0) : 0.0;
            }
            const int face = s.face[k];
            double bsrc;
            if (is_u) {
                const int i = face % (nx_ + 1);
                const int j = face / (nx_ + 1);
                const double pl = p_[static_cast<std::size_t>(j * nx_ + i - 1)];
                const double pr = (i < nx_ && t_.live[static_cast<std::size_t>(j * nx_ + i)]) ? p_[static_cast<std::size_t>(j * nx_ + i)] : 0.0;
                bsrc = (pl - pr) * h_;
            } else {
                const int i = face % nx_;
                const int j = face / nx_;
                bsrc = (p_[static_cast<std::size_t>((j - 1) * nx_ + i)] - p_[static_cast<std::size_t>(j * nx_ + i)]) * h_;
            }
            double sum = bsrc;
            for (int q = 0; q < 4; ++q)
                if (nb[q] >= 0) sum += a[q] * along[static_cast<std::size_t>(nb[q])];
            const double up = along[static_cast<std::size_t>(face)];
            res += std::abs(ap * up - sum);
            norm += std::abs(ap * up);
            anb_[k] = a;
            ap_[k] = ap / alpha;
            b_[k] = bsrc + (1.0 - alpha) * ap_[k] * up;
            d[k] = h_ / ap_[k];
        }
        for (int sweep = 0; sweep < opt_.momentum_sweeps; ++sweep) {
            const bool forward = sweep % 2 == 0;
            for (std::size_t m = 0; m < n; ++m) {
                const std::size_t k = forward ? m : n - 1 - m;
                const auto& nb = s.nb[k];
                double sum = b_[k];
                for (int q = 0; q < 4; ++q)
                    if (nb[q] >= 0) sum += anb_[k][q] * along[static_cast<std::size_t>(nb[q])];
                along[static_cast<std::size_t>(s.face[k])] = sum / ap_[k];
            }
        }
        return norm > 0.0 ? res / norm : res;
    }

    double momentum() {
        const double ru = momentum_component(ustencil_, u_, v_, true, du_);
        const double rv = momentum_component(vstencil_, v_, u_, false, dv_);
        return std::max(ru, rv);
    }

    // Net outflow (m²/s) of the current field per pressure unknown.
    Eigen::VectorXd imbalance() const {
        Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pcell_.size()));
        for (std::size_t q = 0; q < pcell_.size(); ++q) {
            const int c = pcell_[q];
            const int i = c % nx_;
            const int j = c / nx_;
            r(static_cast<Eigen::Index>(q)) =
                (u_[xf(i + 1, j)] - u_[xf(i, j)] + v_[yf(i, j + 1)] - v_[yf(i, j)]) * h_;
        }
        return r;
    }

    double continuity_residual() const {
        const Eigen::VectorXd r = imbalance();
        const double scale = inlet_flux_ > 0.0 ? inlet_flux_ : 1.0;
        return r.cwiseAbs().sum() / scale;
    }

    double d_drift() const {
        double m = 0.0;
        for (std::size_t k = 0; k < du_.size(); ++k) m = std::max(m, std::abs(du_[k] / du_lag_[k] - 1.0));
        for (std::size_t k = 0; k < dv_.size(); ++k) m = std::max(m, std::abs(dv_[k] / dv_lag_[k] - 1.0));
        return m;
    }

    void refactor() {
        du_lag_ = du_;
        dv_lag_ = dv_;
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(pcell_.size() * 3);
        std::vector<double> diag(pcell_.size(), 0.0);
        for (std::size_t k = 0; k < ustencil_.face.size(); ++k) {
            const int face = ustencil_.face[k];
            const int i = face % (nx_ + 1);
            const int j = face / (nx_ + 1);
            const double c = du_lag_[k] * h_;
            const int L = pidx_[static_cast<std::size_t>(j * nx_ + i - 1)];
            diag[static_cast<std::size_t>(L)] += c;
            if (t_.xk[static_cast<std::size_t>(face)] == FaceKind::interior) {
                const int R = pidx_[static_cast<std::size_t>(j * nx_ + i)];
                diag[static_cast<std::size_t>(R)] += c;
                trip.emplace_back(std::max(L, R), std::min(L, R), -c);
            }
        }
        for (std::size_t k = 0; k < vstencil_.face.size(); ++k) {
            const int face = vstencil_.face[k];
            const int i = face % nx_;
            const int j = face / nx_;
            const double c = dv_lag_[k] * h_;
            const int B = pidx_[static_cast<std::size_t>((j - 1) * nx_ + i)];
            const int T = pidx_[static_cast<std::size_t>(j * nx_ + i)];
            diag[static_cast<std::size_t>(B)] += c;
            diag[static_cast<std::size_t>(T)] += c;
            trip.emplace_back(std::max(B, T), std::min(B, T), -c);
        }
        for (std::size_t q = 0; q < diag.size(); ++q) trip.emplace_back(static_cast<int>(q), static_cast<int>(q), diag[q]);
        const auto n = static_cast<Eigen::Index>(pcell_.size());
        M_.resize(n, n);
        M_.setFromTriplets(trip.begin(), trip.end());
        if (!analyzed_) {
            chol_.analyzePattern(M_);
            analyzed_ = true;
        }
        chol_.factorize(M_);
        if (chol_.info() != Eigen::Success) throw Error("pressure-correction factorization failed");
    }

    void project(double pressure_relax) {
        const Eigen::VectorXd rhs = -imbalance();
        const Eigen::VectorXd pc = chol_.solve(rhs);
        for (std::size_t k = 0; k < ustencil_.face.size(); ++k) {
            const int face = ustencil_.face[k];
            const int i = face % (nx_ + 1);
            const int j = face / (nx_ + 1);
            const double pl = pc(pidx_[static_cast<std::size_t>(j * nx_ + i - 1)]);
            const double pr = t_.xk[static_cast<std::size_t>(face)] == FaceKind::interior
                                  ? pc(pidx_[static_cast<std::size_t>(j * nx_ + i)])
                                  : 0.0;
            u_[static_cast<std::size_t>(face)] += du_lag_[k] * (pl - pr);
        }
        for (std::size_t k = 0; k < vstencil_.face.size(); ++k) {
            const int face = vstencil_.face[k];
            const int i = face % nx_;
            const int j = face / nx_;
            const double pb = pc(pidx_[static_cast<std::size_t>((j - 1) * nx_ + i)]);
            const double pt = pc(pidx_[static_cast<std::size_t>(j * nx_ + i)]);
            v_[static_cast<std::size_t>(face)] += dv_lag_[k] * (pb - pt);
        }
        for (std::size_t q = 0; q < pcell_.size(); ++q)
            p_[static_cast<std::size_t>(pcell_[q])] += pressure_relax * pc(static_cast<Eigen::Index>(q));
    }
};

}  // namespace detail

inline FlowField solve_steady_flow(const MaterialGrid& g, double V, const FlowOptions& opt = {}) {
    opt.validate();
    if (!(V >= 0.0)) throw InvalidArgument("inlet speed must be >= 0");
    FlowField f;
    f.nx = g.nx;
    f.ny = g.ny;
    f.h = g.h;
    f.inlet_speed = V;
    f.u.assign(static_cast<std::size_t>(g.nx + 1) * static_cast<std::size_t>(g.ny), 0.0);
    f.v.assign(static_cast<std::size_t>(g.nx) * static_cast<std::size_t>(g.ny + 1), 0.0);
    f.p.assign(g.cell_count(), 0.0);
    if (V > 15.0) f.warnings.push_back("inlet speed " + std::to_string(V) + " m/s is outside the studied 0-15 m/s range");

    if (V == 0.0) {
        f.xkind.assign(f.u.size(), FaceKind::wall);
        f.ykind.assign(f.v.size(), FaceKind::wall);
        try {
            const detail::FlowTopology t = detail::flow_topology(g);
            f.xkind = t.xk;
            f.ykind = t.yk;
        } catch (const MissingPort&) {
            // No forcing: connectivity is irrelevant.
        }
        return f;
    }
    const detail::FlowTopology t = detail::flow_topology(g);
    if (t.n_inlet == 0) throw MissingPort("V > 0 but the grid has no inlet face");
    if (t.n_outlet == 0) throw MissingPort("V > 0 but the grid has no outlet face");
    f.xkind = t.xk;
    f.ykind = t.yk;

    detail::SimpleSolver solver(g, t, V, opt);
    solver.run(f);
    if (!f.converged && opt.throw_on_nonconvergence) {
        throw NonConvergence("steady flow did not converge at V = " + std::to_string(V) + " m/s", f.iterations,
                             f.residual());
    }
    return f;
}

/// Capsule Reynolds number ρ V D / μ.
inline double reynolds_number(double V, const MaterialGrid& g, double diameter_m) {
    return g.properties[Material::air].density * V * diameter_m / g.properties.air_viscosity;
}

struct DivergenceReport {
    std::vector<double> per_cell;  // 1/s, zero on non-air cells
    double max_abs = 0.0;
};

inline DivergenceReport divergence(const FlowField& f, const MaterialGrid& g) {
    if (f.nx != g.nx || f.ny != g.ny) throw InvalidArgument("flow field does not match the grid");
    DivergenceReport r;
    r.per_cell.assign(g.cell_count(), 0.0);
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            const int c = g.cell(i, j);
            if (!g.is_air(c)) continue;
            const double d = (f.u[static_cast<std::size_t>(g.xface(i + 1, j))] - f.u[static_cast<std::size_t>(g.xface(i, j))] +
                              f.v[static_cast<std::size_t>(g.yface(i, j + 1))] - f.v[static_cast<std::size_t>(g.yface(i, j))]) /
                             g.h;
            r.per_cell[static_cast<std::size_t>(c)] = d;
            r.max_abs = std::max(r.max_abs, std::abs(d));
        }
    }
    return r;
}

inline double divergence_tolerance(double V, double h) { return 1e-8 * std::max(V, 1.0) / h; }

struct FluxBalance {
    double inflow = 0.0;   // m²/s
    double outflow = 0.0;  // m²/s
    double imbalance = 0.0;
    bool absolute = false;  // true when inflow = 0: imbalance is |in − out| in m²/s
};

inline FluxBalance mass_flux_balance(const FlowField& f, const MaterialGrid& g) {
    if (f.nx != g.nx || f.ny != g.ny) throw InvalidArgument("flow field does not match the grid");
    FluxBalance b;
    for (std::size_t k = 0; k < g.xface_port.size(); ++k) {
        if (g.xface_port[k] == PortTag::inlet) b.inflow += f.u[k] * g.h;
        if (g.xface_port[k] == PortTag::outlet) b.outflow += f.u[k] * g.h;
    }
    if (b.inflow == 0.0) {
        b.absolute = true;
        b.imbalance = std::abs(b.inflow - b.outflow);
    } else {
        b.imbalance = std::abs(b.inflow - b.outflow) / std::abs(b.inflow);
    }
    return b;
}

inline nlohmann::json flow_summary(const FlowField& f, const MaterialGrid& g) {
    const FluxBalance fb = mass_flux_balance(f, g);
    return {{"V", f.inlet_speed},
            {"Re", f.reynolds},
            {"iterations", f.iterations},
            {"residual", f.residual()},
            {"converged", f.converged},
            {"max_div", divergence(f, g).max_abs},
            {"flux_imbalance", fb.imbalance},
            {"flux_imbalance_absolute", fb.absolute}};
}

/// Cell-centred CSV: x, y (m), u, v (face averages, m/s), p (Pa). In-duct cells only.
inline void write_flow_csv(const FlowField& f, const MaterialGrid& g, const std::string& path,
                           const std::vector<std::pair<std::string, const std::vector<double>*>>& extra = {},
                           const std::vector<std::string>& header = {}) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path);
    for (const auto& line : header) out << "# " << line << '\n';
    out << "x_m,y_m,u_m_s,v_m_s,p_Pa";
    for (const auto& [name, col] : extra) out << ',' << name;
    out << '\n';
    char buf[64];
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            const int c = g.cell(i, j);
            if (!g.in_duct(c)) continue;
            const Vec2 x = g.cell_center(i, j);
            const double u = 0.5 * (f.u[static_cast<std::size_t>(g.xface(i, j))] + f.u[static_cast<std::size_t>(g.xface(i + 1, j))]);
            const double v = 0.5 * (f.v[static_cast<std::size_t>(g.yface(i, j))] + f.v[static_cast<std::size_t>(g.yface(i, j + 1))]);
            std::snprintf(buf, sizeof buf, "%.6e,%.6e", x.x, x.y);
            out << buf;
            for (double val : {u, v, f.p[static_cast<std::size_t>(c)]}) {
                std::snprintf(buf, sizeof buf, ",%.9e", val);
                out << buf;
            }
            for (const auto& [name, col] : extra) {
                std::snprintf(buf, sizeof buf, ",%.9e", (*col)[static_cast<std::size_t>(c)]);
                out << buf;
            }
            out << '\n';
        }
    }
}

}  // namespace pcmpack
