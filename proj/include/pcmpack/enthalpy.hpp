#pragma once

// Enthalpy-method state relation. Volumetric enthalpy H (J/m^3) is measured
// from 0 °C. A latent-heat material is sensible below T_m - δ, absorbs its
// full latent heat ρ·ΔH linearly while T crosses [T_m - δ, T_m + δ], and is
// sensible again above.

#include <algorithm>

#include "pcmpack/materials.hpp"

namespace pcmpack {

struct PhaseState {
    double temperature;      // °C
    double liquid_fraction;  // 0 for materials without latent heat
};

inline double solidus_enthalpy(const MaterialProperties& m) {
    return m.volumetric_heat_capacity() * (m.melt_temperature - m.melt_halfwidth);
}

inline double liquidus_enthalpy(const MaterialProperties& m) {
    return solidus_enthalpy(m) + m.density * m.latent_heat;
}

inline PhaseState enthalpy_to_temperature(double H, const MaterialProperties& m) {
    const double rc = m.volumetric_heat_capacity();
    if (!m.has_latent_heat()) return {H / rc, 0.0};
    const double hs = solidus_enthalpy(m);
    const double latent = m.density * m.latent_heat;
    if (H <= hs) return {H / rc, 0.0};
    if (H >= hs + latent) {
        return {m.melt_temperature + m.melt_halfwidth + (H - hs - latent) / rc, 1.0};
    }
    const double lambda = (H - hs) / latent;
    return {m.melt_temperature - m.melt_halfwidth + 2.0 * m.melt_halfwidth * lambda, lambda};
}

inline double temperature_to_enthalpy(double T, const MaterialProperties& m) {
    const double rc = m.volumetric_heat_capacity();
    if (!m.has_latent_heat()) return rc * T;
    const double ts = m.melt_temperature - m.melt_halfwidth;
    const double tl = m.melt_temperature + m.melt_halfwidth;
    const double latent = m.density * m.latent_heat;
    if (T <= ts) return rc * T;
    if (T >= tl) return rc * ts + latent + rc * (T - tl);
    return rc * ts + latent * (T - ts) / (tl - ts);
}

/// dH/dT on the branch H sits on; at a kink the branch entered from below.
inline double apparent_heat_capacity(double H, const MaterialProperties& m) {
    const double rc = m.volumetric_heat_capacity();
    if (!m.has_latent_heat()) return rc;
    const double hs = solidus_enthalpy(m);
    const double hl = hs + m.density * m.latent_heat;
    if (H < hs || H >= hl) return rc;
    return m.density * m.latent_heat / (2.0 * m.melt_halfwidth);
}

/// True when H is strictly inside the melt window.
inline bool is_mushy(double H, const MaterialProperties& m) {
    return m.has_latent_heat() && H > solidus_enthalpy(m) && H < liquidus_enthalpy(m);
}

}  // namespace pcmpack
