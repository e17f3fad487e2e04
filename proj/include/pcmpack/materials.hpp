#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "pcmpack/error.hpp"

namespace pcmpack {

enum class Material : std::uint8_t { outside = 0, air, battery_core, inner_sheath, pcm, outer_sheath };

inline constexpr std::size_t kMaterialCount = 6;

inline constexpr std::array<Material, kMaterialCount> kAllMaterials = {
    Material::outside, Material::air, Material::battery_core, Material::inner_sheath, Material::pcm,
    Material::outer_sheath};

constexpr std::string_view material_name(Material m) {
    switch (m) {
        case Material::outside: return "outside";
        case Material::air: return "air";
        case Material::battery_core: return "battery_core";
        case Material::inner_sheath: return "inner_sheath";
        case Material::pcm: return "pcm";
        case Material::outer_sheath: return "outer_sheath";
    }
    return "?";
}

/// Thermophysical properties of one zone. SI units; temperatures in °C.
/// A zone with latent_heat > 0 melts over [melt_temperature ± melt_halfwidth].
struct MaterialProperties {
    double density = 1.0;
    double specific_heat = 1.0;
    double conductivity = 1.0;
    double latent_heat = 0.0;
    double melt_temperature = 0.0;
    double melt_halfwidth = 0.0;

    bool has_latent_heat() const { return latent_heat > 0.0; }
    double volumetric_heat_capacity() const { return density * specific_heat; }

    void validate(std::string_view what) const {
        const std::string w(what);
        if (!(density > 0.0)) throw InvalidArgument(w + ": density must be > 0");
        if (!(specific_heat > 0.0)) throw InvalidArgument(w + ": specific heat must be > 0");
        if (!(conductivity > 0.0)) throw InvalidArgument(w + ": conductivity must be > 0");
        if (!(latent_heat >= 0.0)) throw InvalidArgument(w + ": latent heat must be >= 0");
        if (latent_heat > 0.0 && !(melt_halfwidth > 0.0)) {
            throw InvalidArgument(w + ": melt half-width must be > 0 for a latent-heat material");
        }
    }
};

/// Property table indexed by Material, plus the air viscosity the flow
/// solver needs. Defaults: sheath, PCM and heat-flux values from the pack
/// study; dry air at 25 °C; radial-effective 18650 core values.
struct MaterialTable {
    std::array<MaterialProperties, kMaterialCount> props{};
    double air_viscosity = 1.849e-5;  // Pa·s

    const MaterialProperties& operator[](Material m) const { return props[static_cast<std::size_t>(m)]; }
    MaterialProperties& operator[](Material m) { return props[static_cast<std::size_t>(m)]; }

    static MaterialTable defaults() {
        MaterialTable t;
        t[Material::outside] = {1.0, 1.0, 1.0, 0.0, 0.0, 0.0};
        t[Material::air] = {1.184, 1005.0, 0.0262, 0.0, 0.0, 0.0};
        t[Material::battery_core] = {2700.0, 900.0, 3.0, 0.0, 0.0, 0.0};
        const MaterialProperties onyx{1380.0, 1420.0, 0.13, 0.0, 0.0, 0.0};
        t[Material::inner_sheath] = onyx;
        t[Material::outer_sheath] = onyx;
        t[Material::pcm] = {800.0, 2890.0, 16.6, 173400.0, 40.0, 0.5};
        return t;
    }

    void validate() const {
        for (Material m : kAllMaterials) {
            if (m != Material::outside) (*this)[m].validate(material_name(m));
        }
        if (!(air_viscosity > 0.0)) throw InvalidArgument("air viscosity must be > 0");
    }
};

inline nlohmann::json to_json(const MaterialProperties& p) {
    return {{"density", p.density},
            {"specific_heat", p.specific_heat},
            {"conductivity", p.conductivity},
            {"latent_heat", p.latent_heat},
            {"melt_temperature", p.melt_temperature},
            {"melt_halfwidth", p.melt_halfwidth}};
}

inline nlohmann::json to_json(const MaterialTable& t) {
    nlohmann::json j = nlohmann::json::object();
    for (Material m : kAllMaterials) {
        if (m != Material::outside) j[std::string(material_name(m))] = to_json(t[m]);
    }
    j["air_viscosity"] = t.air_viscosity;
    return j;
}

/// Apply field-wise overrides, e.g. {"pcm": {"latent_heat": 0}, "air_viscosity": 2e-5}.
inline void apply_overrides(MaterialTable& t, const nlohmann::json& j) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "air_viscosity") {
            t.air_viscosity = it.value().get<double>();
            continue;
        }
        bool found = false;
        for (Material m : kAllMaterials) {
            if (m == Material::outside || it.key() != material_name(m)) continue;
            found = true;
            MaterialProperties& p = t[m];
            const nlohmann::json& o = it.value();
            p.density = o.value("density", p.density);
            p.specific_heat = o.value("specific_heat", p.specific_heat);
            p.conductivity = o.value("conductivity", p.conductivity);
            p.latent_heat = o.value("latent_heat", p.latent_heat);
            p.melt_temperature = o.value("melt_temperature", p.melt_temperature);
            p.melt_halfwidth = o.value("melt_halfwidth", p.melt_halfwidth);
        }
        if (!found) throw InvalidArgument("unknown material override '" + it.key() + "'");
    }
    t.validate();
}

}  // namespace pcmpack
