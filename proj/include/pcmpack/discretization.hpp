#pragma once

// Cartesian rasterization of a PackLayout. Geometry arrives in mm; everything
// on the grid is SI (m). Cell (i, j) spans [x0 + i·h, x0 + (i+1)·h] × [y0 + j·h, ...].
// x-face (i, j) sits at x0 + i·h between cells (i-1, j) and (i, j); y-face
// (i, j) sits at y0 + j·h between cells (i, j-1) and (i, j).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pcmpack/error.hpp"
#include "pcmpack/geometry.hpp"
#include "pcmpack/materials.hpp"

namespace pcmpack {

enum class PortTag : std::uint8_t { none = 0, inlet, outlet };

struct SurfaceFace {
    bool x_normal;  // true: x-face index, false: y-face index
    int i;
    int j;
};

/// Physical extent of a grid (m). Fixing it before rasterizing keeps grid
/// lines of nested spacings aligned.
struct GridFrame {
    Vec2 origin;
    double width = 0.0;
    double height = 0.0;
};

struct MaterialGrid {
    double h = 0.0;
    int nx = 0;
    int ny = 0;
    Vec2 origin;  // m
    std::vector<Material> material;
    std::vector<int> capsule_of_cell;  // -1 outside every capsule disk
    MaterialTable properties;
    std::vector<PortTag> xface_port;   // (nx+1)·ny
    std::vector<double> kx;            // x-face conductance, W/(m·K); 0 unless both sides in-duct
    std::vector<double> ky;            // y-face conductance, nx·(ny+1)
    std::vector<std::vector<SurfaceFace>> capsule_surface_faces;
    std::vector<double> capsule_power;  // W per metre of depth
    std::vector<std::string> warnings;

    std::size_t cell_count() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
    std::size_t capsule_count() const { return capsule_power.size(); }
    int cell(int i, int j) const { return j * nx + i; }
    int xface(int i, int j) const { return j * (nx + 1) + i; }
    int yface(int i, int j) const { return j * nx + i; }
    bool in_duct(int c) const { return material[static_cast<std::size_t>(c)] != Material::outside; }
    bool is_air(int c) const { return material[static_cast<std::size_t>(c)] == Material::air; }
    bool is_air(int i, int j) const { return i >= 0 && j >= 0 && i < nx && j < ny && is_air(cell(i, j)); }
    Vec2 cell_center(int i, int j) const { return {origin.x + (i + 0.5) * h, origin.y + (j + 0.5) * h}; }
    const MaterialProperties& props(int c) const { return properties[material[static_cast<std::size_t>(c)]]; }
    GridFrame frame() const { return {origin, nx * h, ny * h}; }
};

inline GridFrame default_frame(const PackLayout& layout, double h) {
    if (!(h > 0.0)) throw InvalidArgument("grid spacing h must be > 0");
    if (layout.duct.size() < 3) throw InvalidArgument("layout has no duct polygon");
    const Box b = bounding_box(layout.duct);
    const Vec2 lo{b.lo.x * 1e-3, b.lo.y * 1e-3};
    const double ex = (b.hi.x - b.lo.x) * 1e-3;
    const double ey = (b.hi.y - b.lo.y) * 1e-3;
    const double nx = std::ceil(ex / h - 1e-9) + 2.0;
    const double ny = std::ceil(ey / h - 1e-9) + 2.0;
    return {{lo.x - h, lo.y - h}, nx * h, ny * h};
}

namespace detail {

inline Material material_at(Vec2 p_mm, const PackLayout& layout, const CapsuleSpec& cap, int* capsule_index) {
    int best = -1;
    double best_r = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < layout.cell_centers.size(); ++k) {
        const double r = distance(p_mm, layout.cell_centers[k]);
        if (r < best_r) {
            best_r = r;
            best = static_cast<int>(k);
        }
    }
    if (best >= 0 && best_r < cap.r_outer_sheath_out) {
        if (capsule_index) *capsule_index = best;
        if (best_r < cap.r_inner_sheath_in) return Material::battery_core;
        if (best_r < cap.r_inner_sheath_out) return Material::inner_sheath;
        if (best_r < cap.r_outer_sheath_in) return Material::pcm;
        return Material::outer_sheath;
    }
    if (capsule_index) *capsule_index = -1;
    return point_in_polygon(layout.duct, p_mm) ? Material::air : Material::outside;
}

/// Series conductance of the straight path between two in-duct cell centres,
/// integrating 1/k over the capsule annuli it crosses. Equals the harmonic
/// mean when the path crosses one interface at its midpoint.
inline double path_conductance(Vec2 a_mm, Vec2 b_mm, const PackLayout& layout, const CapsuleSpec& cap,
                               const MaterialTable& props) {
    const Vec2 d = b_mm - a_mm;
    const Vec2 mid = a_mm + 0.5 * d;
    std::vector<double> cuts = {0.0, 1.0};
    const double seg = norm(d);
    for (const Vec2& c : layout.cell_centers) {
        if (distance(mid, c) > cap.r_outer_sheath_out + seg) continue;
        for (double r : {cap.r_inner_sheath_in, cap.r_inner_sheath_out, cap.r_outer_sheath_in, cap.r_outer_sheath_out}) {
            // |a + t d - c|^2 = r^2
            const Vec2 f = a_mm - c;
            const double A = dot(d, d);
            const double B = 2.0 * dot(f, d);
            const double C = dot(f, f) - r * r;
            const double disc = B * B - 4.0 * A * C;
            if (disc <= 0.0) continue;
            const double s = std::sqrt(disc);
            for (double t : {(-B - s) / (2.0 * A), (-B + s) / (2.0 * A)}) {
                if (t > 0.0 && t < 1.0) cuts.push_back(t);
            }
        }
    }
    std::sort(cuts.begin(), cuts.end());
    double resistance = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double dt = cuts[k + 1] - cuts[k];
        if (dt <= 0.0) continue;
        const Vec2 p = a_mm + (0.5 * (cuts[k] + cuts[k + 1])) * d;
        Material m = material_at(p, layout, cap, nullptr);
        if (m == Material::outside) m = Material::air;
        resistance += dt / props[m].conductivity;
    }
    return 1.0 / resistance;
}

}  // namespace detail

/// Rasterize by centre sampling. Throws EmptyDuct when no cell is air.
inline MaterialGrid rasterize(const PackLayout& layout, const CapsuleSpec& capsule, const MaterialTable& materials,
                              double h, std::optional<GridFrame> frame = std::nullopt) {
    if (!(h > 0.0)) throw InvalidArgument("grid spacing h must be > 0");
    capsule.validate();
    materials.validate();
    for (const auto* ports : {&layout.inlets, &layout.outlets}) {
        for (const PortSegment& s : *ports) {
            if (std::abs(s.a.x - s.b.x) > 1e-9) throw InvalidArgument("port segments must be vertical (x = const)");
        }
    }
    const GridFrame f = frame ? *frame : default_frame(layout, h);

    MaterialGrid g;
    g.h = h;
    g.origin = f.origin;
    g.nx = static_cast<int>(std::ceil(f.width / h - 1e-6));
    g.ny = static_cast<int>(std::ceil(f.height / h - 1e-6));
    if (g.nx < 1 || g.ny < 1) throw InvalidArgument("grid frame is empty");
    g.properties = materials;

    const double h_mm = h * 1e3;
    if (!layout.cell_centers.empty() && capsule.thinnest_annulus() < 2.0 * h_mm) {
        g.warnings.push_back("resolution-too-coarse: thinnest annulus " + std::to_string(capsule.thinnest_annulus()) +
                             " mm is thinner than 2 cells at h = " + std::to_string(h_mm) + " mm");
    }

    const std::size_t n = g.cell_count();
    g.material.resize(n);
    g.capsule_of_cell.assign(n, -1);
    std::size_t air = 0;
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            const Vec2 c = g.cell_center(i, j);
            int k = -1;
            const Material m = detail::material_at({c.x * 1e3, c.y * 1e3}, layout, capsule, &k);
            g.material[static_cast<std::size_t>(g.cell(i, j))] = m;
            g.capsule_of_cell[static_cast<std::size_t>(g.cell(i, j))] = k;
            if (m == Material::air) ++air;
        }
    }
    if (air == 0) throw EmptyDuct("rasterized duct '" + layout.name + "' contains no air cell");

    auto center_mm = [&](int i, int j) {
        const Vec2 c = g.cell_center(i, j);
        return Vec2{c.x * 1e3, c.y * 1e3};
    };
    auto face_conductance = [&](int ia, int ja, int ib, int jb) {
        const int a = g.cell(ia, ja);
        const int b = g.cell(ib, jb);
        if (!g.in_duct(a) || !g.in_duct(b)) return 0.0;
        const Material ma = g.material[static_cast<std::size_t>(a)];
        const Material mb = g.material[static_cast<std::size_t>(b)];
        if (ma == mb && (ma == Material::air || ma == Material::battery_core)) return materials[ma].conductivity;
        return detail::path_conductance(center_mm(ia, ja), center_mm(ib, jb), layout, capsule, materials);
    };

    g.kx.assign(static_cast<std::size_t>(g.nx + 1) * static_cast<std::size_t>(g.ny), 0.0);
    g.ky.assign(static_cast<std::size_t>(g.nx) * static_cast<std::size_t>(g.ny + 1), 0.0);
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 1; i < g.nx; ++i) g.kx[static_cast<std::size_t>(g.xface(i, j))] = face_conductance(i - 1, j, i, j);
    }
    for (int j = 1; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) g.ky[static_cast<std::size_t>(g.yface(i, j))] = face_conductance(i, j - 1, i, j);
    }

    // Port faces: an x-face between an outside cell and an air cell whose
    // midpoint lies on a port segment (within one cell of its x position).
    g.xface_port.assign(static_cast<std::size_t>(g.nx + 1) * static_cast<std::size_t>(g.ny), PortTag::none);
    auto tag = [&](const std::vector<PortSegment>& segs, PortTag t) {
        for (const PortSegment& s : segs) {
            const double y0 = std::min(s.a.y, s.b.y);
            const double y1 = std::max(s.a.y, s.b.y);
            for (int j = 0; j < g.ny; ++j) {
                const double ym = (g.origin.y + (j + 0.5) * h) * 1e3;
                // Ties (edge on a cell centre) count as covered on both ends.
                const double tol = 1e-9 * h_mm;
                if (ym < y0 - tol || ym > y1 + tol) continue;
                for (int i = 0; i <= g.nx; ++i) {
                    const double xf = (g.origin.x + i * h) * 1e3;
                    if (std::abs(xf - s.a.x) > h_mm * (1.0 + 1e-9)) continue;
                    const bool l_air = g.is_air(i - 1, j);
                    const bool r_air = g.is_air(i, j);
                    const bool l_out = i == 0 || !g.in_duct(g.cell(i - 1, j));
                    const bool r_out = i == g.nx || !g.in_duct(g.cell(i, j));
                    const bool inflow_side = l_out && r_air;
                    const bool outflow_side = l_air && r_out;
                    if ((t == PortTag::inlet && inflow_side) || (t == PortTag::outlet && outflow_side)) {
                        g.xface_port[static_cast<std::size_t>(g.xface(i, j))] = t;
                        break;
                    }
                }
            }
        }
    };
    tag(layout.inlets, PortTag::inlet);
    tag(layout.outlets, PortTag::outlet);

    // Battery-surface faces: between a core cell and a non-core cell of the same capsule.
    const std::size_t ncap = layout.cell_centers.size();
    g.capsule_surface_faces.assign(ncap, {});
    g.capsule_power.assign(ncap, capsule.source_power_per_depth());
    auto core_of = [&](int i, int j) {
        const int c = g.cell(i, j);
        return g.material[static_cast<std::size_t>(c)] == Material::battery_core ? g.capsule_of_cell[static_cast<std::size_t>(c)]
                                                                                : -1;
    };
    auto cap_of = [&](int i, int j) { return g.capsule_of_cell[static_cast<std::size_t>(g.cell(i, j))]; };
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 1; i < g.nx; ++i) {
            const int a = core_of(i - 1, j);
            const int b = core_of(i, j);
            if ((a >= 0) != (b >= 0)) {
                const int k = a >= 0 ? a : b;
                if (cap_of(i - 1, j) == k && cap_of(i, j) == k) {
                    g.capsule_surface_faces[static_cast<std::size_t>(k)].push_back({true, i, j});
                }
            }
        }
    }
    for (int j = 1; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            const int a = core_of(i, j - 1);
            const int b = core_of(i, j);
            if ((a >= 0) != (b >= 0)) {
                const int k = a >= 0 ? a : b;
                if (cap_of(i, j - 1) == k && cap_of(i, j) == k) {
                    g.capsule_surface_faces[static_cast<std::size_t>(k)].push_back({false, i, j});
                }
            }
        }
    }
    for (std::size_t k = 0; k < ncap; ++k) {
        if (g.capsule_surface_faces[k].empty() && g.capsule_power[k] > 0.0) {
            throw InvalidArgument("capsule " + std::to_string(k) + " has no resolved battery surface at h = " +
                                  std::to_string(h_mm) + " mm");
        }
    }
    return g;
}

/// One grid per spacing over a common frame fixed by the coarsest spacing.
inline std::vector<MaterialGrid> refine_levels(const PackLayout& layout, const CapsuleSpec& capsule,
                                               const MaterialTable& materials, const std::vector<double>& h_list) {
    if (h_list.empty()) throw InvalidArgument("h_list must not be empty");
    for (std::size_t k = 0; k < h_list.size(); ++k) {
        if (!(h_list[k] > 0.0)) throw InvalidArgument("grid spacings must be > 0");
        if (k > 0 && !(h_list[k] < h_list[k - 1])) throw InvalidArgument("h_list must be strictly decreasing");
    }
    const GridFrame frame = default_frame(layout, h_list.front());
    std::vector<MaterialGrid> grids;
    grids.reserve(h_list.size());
    for (double h : h_list) grids.push_back(rasterize(layout, capsule, materials, h, frame));
    return grids;
}

inline std::map<Material, double> area_fractions(const MaterialGrid& g) {
    std::map<Material, double> area;
    for (Material m : kAllMaterials) area[m] = 0.0;
    const double a = g.h * g.h;
    for (Material m : g.material) area[m] += a;
    return area;
}

/// Binary PGM (greyscale = material id · 40) or PPM (fixed palette), chosen by extension.
inline void write_material_image(const MaterialGrid& g, const std::string& path) {
    const bool color = path.size() >= 4 && path.compare(path.size() - 4, 4, ".ppm") == 0;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path);
    static constexpr std::array<std::array<unsigned char, 3>, kMaterialCount> palette = {{
        {0, 0, 0}, {200, 230, 255}, {90, 90, 90}, {40, 80, 200}, {240, 170, 40}, {40, 80, 200},
    }};
    out << (color ? "P6\n" : "P5\n") << g.nx << ' ' << g.ny << "\n255\n";
    // Top row first so +y points up in viewers.
    for (int j = g.ny - 1; j >= 0; --j) {
        for (int i = 0; i < g.nx; ++i) {
            const auto id = static_cast<std::size_t>(g.material[static_cast<std::size_t>(g.cell(i, j))]);
            if (color) {
                out.write(reinterpret_cast<const char*>(palette[id].data()), 3);
            } else {
                const auto v = static_cast<char>(static_cast<unsigned char>(id * 40));
                out.put(v);
            }
        }
    }
}

}  // namespace pcmpack
