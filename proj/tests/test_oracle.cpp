#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "pcmpack/enthalpy.hpp"
#include "pcmpack/oracle.hpp"

using namespace pcmpack;
using namespace pcmpack::oracle;

namespace {

const CapsuleSpec kCapsule{};
const MaterialTable kMaterials = MaterialTable::defaults();

// Pinned adiabatic latent-only melt duration (s); see fixtures.
constexpr double kPinnedLatentOnly = 0x1.1d6dc9eb1c477p+10;  // 1141.7154491211093

}  // namespace

TEST(MeltTime, LatentOnlyIsPinned) {
    const MeltTimeEstimate m = lumped_melt_time(kCapsule, kMaterials);
    EXPECT_EQ(m.latent_only, kPinnedLatentOnly);
}

TEST(MeltTime, LatentOnlyMatchesHandFormula) {
    const double pi = std::numbers::pi;
    const double area = pi * (0.028 * 0.028 - 0.0198 * 0.0198);
    const double latent = 800.0 * area * 173400.0;
    const double power = 1322.88 * 2.0 * pi * 0.018;
    EXPECT_NEAR(kPinnedLatentOnly / (latent / power), 1.0, 1e-12);
    EXPECT_NEAR(kPinnedLatentOnly, 1141.7154491211, 1e-9);
}

TEST(MeltTime, ZeroLatentHeatGivesZero) {
    MaterialTable m = kMaterials;
    m[Material::pcm].latent_heat = 0.0;
    const MeltTimeEstimate e = lumped_melt_time(kCapsule, m);
    EXPECT_EQ(e.latent_only, 0.0);
    EXPECT_EQ(e.melt_window, 0.0);
}

TEST(MeltTime, LossEqualToSourceNeverMelts) {
    const LumpedCapsule probe = make_lumped_capsule(kCapsule, kMaterials);
    const double film = probe.source_power / (probe.outer_perimeter * (40.0 - 25.0));
    EXPECT_THROW(lumped_melt_time(kCapsule, kMaterials, film, 25.0), NeverMelts);
    EXPECT_NO_THROW(lumped_melt_time(kCapsule, kMaterials, 0.5 * film, 25.0));
}

TEST(MeltTime, WindowExceedsLatentOnlyWhenAdiabatic) {
    // Upstream layers keep storing sensible heat while the PCM melts.
    const MeltTimeEstimate m = lumped_melt_time(kCapsule, kMaterials);
    EXPECT_GT(m.melt_window, m.latent_only);
    EXPECT_GT(m.with_preheat, m.melt_window);
}

TEST(Capsule, LayerMassesMatchAnnuli) {
    const LumpedCapsule lc = make_lumped_capsule(kCapsule, kMaterials);
    const double pi = std::numbers::pi;
    EXPECT_NEAR(lc.mass[0], 2700.0 * pi * 0.018 * 0.018, 1e-12);
    EXPECT_NEAR(lc.mass[1], 1380.0 * pi * (0.0198 * 0.0198 - 0.018 * 0.018), 1e-12);
    EXPECT_NEAR(lc.mass[2], 800.0 * pi * (0.028 * 0.028 - 0.0198 * 0.0198), 1e-12);
    EXPECT_NEAR(lc.mass[3], 1380.0 * pi * (0.0298 * 0.0298 - 0.028 * 0.028), 1e-12);
    EXPECT_NEAR(lc.capacity[2], lc.mass[2] * 2890.0, 1e-9);
}

TEST(Trajectory, NoSourceAtAmbientIsConstant) {
    CapsuleSpec cap;
    cap.q_gen = 0.0;
    const LumpedCapsule lc = make_lumped_capsule(cap, kMaterials, 10.0, 25.0);
    const LumpedTrajectory tr = lumped_trajectory(lc, 500.0, 1.0);
    for (const auto& T : tr.T)
        for (double x : T) EXPECT_DOUBLE_EQ(x, 25.0);
}

TEST(Trajectory, PreMeltSlopeMatchesTotalCapacity) {
    const LumpedCapsule lc = make_lumped_capsule(kCapsule, kMaterials);
    const double rate = lc.source_power / lc.total_capacity();
    {
        // Capacity-weighted mean temperature before melt onset.
        const LumpedTrajectory tr = lumped_trajectory(lc, 700.0, 0.5, 25.0);
        const std::size_t b = tr.t.size() - 1;
        ASSERT_EQ(tr.lambda[b], 0.0);
        auto mean = [&](std::size_t k) {
            double s = 0.0;
            for (std::size_t n = 0; n < 4; ++n) s += lc.capacity[n] * tr.T[k][n];
            return s / lc.total_capacity();
        };
        EXPECT_NEAR((mean(b) - mean(0)) / tr.t[b] / rate, 1.0, 0.01);
    }
    {
        // Every node once the start-up transient has decayed; latent heat off
        // to keep the sensible regime long enough.
        MaterialTable m = kMaterials;
        m[Material::pcm].latent_heat = 0.0;
        const LumpedCapsule sens = make_lumped_capsule(kCapsule, m);
        const LumpedTrajectory tr = lumped_trajectory(sens, 4000.0, 0.5, 25.0);
        const std::size_t a = tr.t.size() * 3 / 4;
        const std::size_t b = tr.t.size() - 1;
        for (std::size_t n = 0; n < 4; ++n) {
            EXPECT_NEAR((tr.T[b][n] - tr.T[a][n]) / (tr.t[b] - tr.t[a]) / rate, 1.0, 0.01) << n;
        }
    }
}

TEST(Trajectory, PlateauMatchesMeltWindow) {
    const LumpedCapsule lc = make_lumped_capsule(kCapsule, kMaterials);
    const MeltTimeEstimate m = lumped_melt_time(lc);
    const LumpedTrajectory tr = lumped_trajectory(lc, 2600.0, 0.25);
    const double d = plateau_duration(tr);
    ASSERT_GT(d, 0.0);
    EXPECT_NEAR(d / m.melt_window, 1.0, 0.01);
    EXPECT_NEAR(tr.t[static_cast<std::size_t>(std::find_if(tr.lambda.begin(), tr.lambda.end(),
                                                            [](double l) { return l > 0.0; }) -
                                               tr.lambda.begin())] /
                    m.onset,
                1.0, 0.01);
}

TEST(Trajectory, AdiabaticEnergyAudit) {
    const LumpedCapsule lc = make_lumped_capsule(kCapsule, kMaterials);
    const LumpedTrajectory tr = lumped_trajectory(lc, 2500.0, 0.5);
    for (std::size_t k = 1; k < tr.t.size(); ++k) {
        const double err = std::abs(tr.stored_energy[k] - tr.source_energy[k]);
        ASSERT_LE(err, 1e-3 * tr.source_energy[k]) << tr.t[k];
    }
}

TEST(Trajectory, LambdaMonotoneWhenAdiabatic) {
    const LumpedTrajectory tr = lumped_trajectory(make_lumped_capsule(kCapsule, kMaterials), 2500.0, 0.5);
    for (std::size_t k = 1; k < tr.lambda.size(); ++k) ASSERT_GE(tr.lambda[k], tr.lambda[k - 1]);
}

TEST(Trajectory, LossesBalanceWithFilm) {
    const double film = hilpert_film_coefficient(5.0, 0.0596, kMaterials);
    const LumpedCapsule lc = make_lumped_capsule(kCapsule, kMaterials, film, 25.0);
    const LumpedTrajectory tr = lumped_trajectory(lc, 4000.0, 0.5);
    const std::size_t k = tr.t.size() - 1;
    EXPECT_NEAR(tr.stored_energy[k], tr.source_energy[k] - tr.loss_energy[k], 1e-3 * tr.source_energy[k]);
}

TEST(Trajectory, OversizedStepRejected) {
    const LumpedCapsule lc = make_lumped_capsule(kCapsule, kMaterials);
    EXPECT_THROW(lumped_trajectory(lc, 100.0, 100.0), StabilityViolation);
    EXPECT_THROW(lumped_trajectory(lc, 100.0, 0.0), InvalidArgument);
}

TEST(Hilpert, BandFormula) {
    const double V = 5.0;
    const double D = 0.0596;
    const double re = 1.184 * V * D / 1.849e-5;
    const double pr = 1.849e-5 * 1005.0 / 0.0262;
    ASSERT_GT(re, 4000.0);
    ASSERT_LT(re, 40000.0);
    const double expect = 0.193 * std::pow(re, 0.618) * std::cbrt(pr) * 0.0262 / D;
    EXPECT_NEAR(hilpert_film_coefficient(V, D, kMaterials), expect, 1e-12 * expect);
    EXPECT_EQ(hilpert_film_coefficient(0.0, D, kMaterials), 0.0);
}

TEST(Poiseuille, WallsAndCentre) {
    const PoiseuilleProfile p = poiseuille_profile(0.04, 2.0);
    EXPECT_EQ(p(0.0), 0.0);
    EXPECT_EQ(p(0.04), 0.0);
    EXPECT_NEAR(p(0.02), 3.0, 1e-12);
    EXPECT_EQ(p.centerline(), 3.0);
    EXPECT_THROW(poiseuille_profile(0.0, 1.0), InvalidArgument);
}

TEST(Poiseuille, MeanByQuadrature) {
    const PoiseuilleProfile p(0.04, 1.3);
    // Simpson's rule is exact for the quadratic profile.
    const int n = 10;
    const double dy = p.height / n;
    double s = p(0.0) + p(p.height);
    for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * p(k * dy);
    EXPECT_NEAR(s * dy / 3.0 / p.height, 1.3, 1e-12);
}

TEST(EnthalpyContract, CrossValidatesWithGridRelation) {
    const MaterialProperties& pcm = kMaterials[Material::pcm];
    const PcmCurve curve = PcmCurve::from(pcm);
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> T(0.0, 80.0);
    for (int k = 0; k < 10000; ++k) {
        const double t = T(rng);
        const double H = temperature_to_enthalpy(t, pcm);
        const double e = curve.enthalpy(t);
        ASSERT_NEAR(H, pcm.density * e, 1e-9 * std::abs(H));
        const PhaseState s = enthalpy_to_temperature(H, pcm);
        ASSERT_NEAR(s.temperature, curve.temperature(e), 1e-9);
        ASSERT_NEAR(s.liquid_fraction, curve.liquid_fraction(e), 1e-9);
    }
}

TEST(Fixtures, CheckedInFileMatches) {
    std::ifstream in(std::string(PCMPACK_SOURCE_DIR) + "/tests/fixtures/oracle_fixtures.json");
    ASSERT_TRUE(in) << "fixtures file missing";
    const nlohmann::json stored = nlohmann::json::parse(in);
    const nlohmann::json fresh = fixtures();
    EXPECT_EQ(stored.at("cases"), fresh.at("cases"));
    EXPECT_EQ(stored.at("cases").at(0).at("outputs").at("latent_only_s").get<double>(), kPinnedLatentOnly);
}

TEST(Fixtures, BitStableAcrossCalls) {
    EXPECT_EQ(fixtures().dump(), fixtures().dump());
}
