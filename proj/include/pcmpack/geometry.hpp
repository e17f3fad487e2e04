#pragma once

// Plan-view geometry of capsule packs: the eight 16-cell arrangements, the
// diamond port-study layout, single-capsule and empty-channel test layouts,
// and the duct outline around them. All lengths in this header are mm; the
// airflow runs along +x, so "ranks" are columns of constant x.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pcmpack/error.hpp"

namespace pcmpack {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend constexpr bool operator==(Vec2, Vec2) = default;
};

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

/// Cross-section of one sheathed 18650 capsule. Radii in mm, heat flux in W/m^2
/// applied on the battery surface (r = r_inner_sheath_in).
struct CapsuleSpec {
    double r_inner_sheath_in = 18.0;
    double r_inner_sheath_out = 19.8;
    double r_outer_sheath_in = 28.0;
    double r_outer_sheath_out = 29.8;
    double depth = 65.0;
    double q_gen = 1322.88;

    void validate() const {
        if (!(0.0 < r_inner_sheath_in && r_inner_sheath_in < r_inner_sheath_out &&
              r_inner_sheath_out < r_outer_sheath_in && r_outer_sheath_in < r_outer_sheath_out)) {
            throw InvalidArgument("capsule radii must satisfy 0 < r_is,i < r_is,o < r_os,i < r_os,o");
        }
        if (!(q_gen >= 0.0)) throw InvalidArgument("q_gen must be >= 0");
        if (!(depth > 0.0)) throw InvalidArgument("capsule depth must be > 0");
    }

    /// Heat input of one capsule per metre of depth (W/m): q_gen times the
    /// battery-surface circumference.
    double source_power_per_depth() const {
        return q_gen * 2.0 * std::numbers::pi * r_inner_sheath_in * 1e-3;
    }

    /// Thinnest of the three annuli (mm).
    double thinnest_annulus() const {
        return std::min({r_inner_sheath_out - r_inner_sheath_in, r_outer_sheath_in - r_inner_sheath_out,
                         r_outer_sheath_out - r_outer_sheath_in});
    }
};

/// A port interval on the duct boundary. `slot` is the 1-based canonical
/// position it occupies (0 for full-edge ports of test layouts).
struct PortSegment {
    Vec2 a;
    Vec2 b;
    int slot = 0;

    double length() const { return distance(a, b); }
    Vec2 midpoint() const { return 0.5 * (a + b); }
};

struct PackLayout {
    std::string name;
    std::vector<Vec2> cell_centers;
    std::vector<int> row_counts;
    std::vector<Vec2> duct;  // counter-clockwise, not closed (last != first)
    std::vector<PortSegment> inlets;
    std::vector<PortSegment> outlets;
    double capsule_radius = 29.8;  // r_outer_sheath_out used for overlap/containment
};

/// Inlet/outlet arrangement on the upstream and downstream duct edges.
/// Canonical slot order is centre-out: 1 = centre, 2/3 = first pair (+y, -y),
/// 4/5 = outer pair. Without explicit positions a count activates slots 1..n.
struct PortPlan {
    int n_inlets = 5;
    int n_outlets = 1;
    double inlet_width = 8.0;
    double outlet_width = 8.0;
    std::vector<int> inlet_positions;
    std::vector<int> outlet_positions;

    static constexpr int kSlots = 5;

    void validate() const {
        if (n_inlets < 1 || n_inlets > kSlots) throw InvalidArgument("n_inlets must be in 1..5");
        if (n_outlets < 1 || n_outlets > kSlots) throw InvalidArgument("n_outlets must be in 1..5");
        if (!(inlet_width > 0.0) || !(outlet_width > 0.0)) throw InvalidArgument("port widths must be > 0");
        check_positions(inlet_positions, n_inlets, "inlet");
        check_positions(outlet_positions, n_outlets, "outlet");
    }

    std::vector<int> resolved_inlets() const { return resolve(inlet_positions, n_inlets); }
    std::vector<int> resolved_outlets() const { return resolve(outlet_positions, n_outlets); }

private:
    static void check_positions(const std::vector<int>& pos, int n, const char* what) {
        if (pos.empty()) return;
        if (static_cast<int>(pos.size()) != n) {
            throw InvalidArgument(std::string(what) + " positions must list exactly n entries");
        }
        std::vector<int> sorted = pos;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw InvalidArgument(std::string(what) + " positions must be distinct");
        }
        if (sorted.front() < 1 || sorted.back() > kSlots) {
            throw InvalidArgument(std::string(what) + " positions must be in 1..5");
        }
    }
    static std::vector<int> resolve(const std::vector<int>& pos, int n) {
        if (!pos.empty()) return pos;
        std::vector<int> out(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) out[static_cast<std::size_t>(k)] = k + 1;
        return out;
    }
};

struct LayoutOptions {
    double gap = 10.0;           // between outer sheath surfaces of lattice neighbours
    double clearance = 15.0;     // duct offset beyond the outer sheath
    double port_standoff = 5.0;  // flat port edges sit this far from the nearest capsule
    PortPlan ports{};
};

/// The eight 16-cell arrangement codes, in the order they are swept.
inline const std::array<std::string_view, 8>& configuration_ids() {
    static const std::array<std::string_view, 8> ids = {"1234321", "5434",     "4444-IR", "43432",
                                                        "4444-IIR", "4543",     "54322",   "4444"};
    return ids;
}

inline bool is_pack_configuration(std::string_view name) {
    const auto& ids = configuration_ids();
    return std::find(ids.begin(), ids.end(), name) != ids.end() || name == "diamond-ports";
}

// ---------------------------------------------------------------------------
// Polygon helpers

inline double polygon_area(const std::vector<Vec2>& poly) {
    double a = 0.0;
    for (std::size_t i = 0, n = poly.size(); i < n; ++i) a += cross(poly[i], poly[(i + 1) % n]);
    return 0.5 * a;
}

inline double polygon_perimeter(const std::vector<Vec2>& poly) {
    double s = 0.0;
    for (std::size_t i = 0, n = poly.size(); i < n; ++i) s += distance(poly[i], poly[(i + 1) % n]);
    return s;
}

inline bool point_in_polygon(const std::vector<Vec2>& poly, Vec2 p) {
    bool inside = false;
    for (std::size_t i = 0, n = poly.size(), j = n - 1; i < n; j = i++) {
        const Vec2 a = poly[i];
        const Vec2 b = poly[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double xc = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if (p.x < xc) inside = !inside;
        }
    }
    return inside;
}

inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return distance(p, a + t * ab);
}

inline double distance_to_boundary(const std::vector<Vec2>& poly, Vec2 p) {
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
        d = std::min(d, point_segment_distance(p, poly[i], poly[(i + 1) % n]));
    }
    return d;
}

struct Box {
    Vec2 lo;
    Vec2 hi;
};

inline Box bounding_box(const std::vector<Vec2>& pts) {
    Box b{{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()},
          {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()}};
    for (const Vec2& p : pts) {
        b.lo.x = std::min(b.lo.x, p.x);
        b.lo.y = std::min(b.lo.y, p.y);
        b.hi.x = std::max(b.hi.x, p.x);
        b.hi.y = std::max(b.hi.y, p.y);
    }
    return b;
}

namespace detail {

/// Andrew's monotone chain; counter-clockwise, collinear points dropped.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
    std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3) return pts;
    std::vector<Vec2> hull(2 * pts.size());
    std::size_t k = 0;
    const double eps = 1e-12;
    for (const Vec2& p : pts) {
        while (k >= 2 && cross(hull[k - 1] - hull[k - 2], p - hull[k - 2]) <= eps) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        const Vec2& p = pts[i];
        while (k >= t && cross(hull[k - 1] - hull[k - 2], p - hull[k - 2]) <= eps) --k;
        hull[k++] = p;
    }
    hull.resize(k - 1);
    return hull;
}

/// Keep the part of a convex polygon with sign * (x - x0) >= 0.
inline std::vector<Vec2> clip_vertical(const std::vector<Vec2>& poly, double x0, double sign) {
    std::vector<Vec2> out;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 a = poly[i];
        const Vec2 b = poly[(i + 1) % n];
        const double da = sign * (a.x - x0);
        const double db = sign * (b.x - x0);
        if (da >= 0.0) out.push_back(a);
        if ((da >= 0.0) != (db >= 0.0)) {
            const double t = da / (da - db);
            out.push_back({x0, a.y + t * (b.y - a.y)});
        }
    }
    return out;
}

/// y-interval of the convex polygon on the vertical line x = x0.
inline std::pair<double, double> vertical_chord(const std::vector<Vec2>& poly, double x0) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    const double tol = 1e-9;
    for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
        const Vec2 a = poly[i];
        const Vec2 b = poly[(i + 1) % n];
        if (std::abs(a.x - x0) <= tol) {
            lo = std::min(lo, a.y);
            hi = std::max(hi, a.y);
        }
        if ((a.x - x0) * (b.x - x0) < 0.0) {
            const double y = a.y + (x0 - a.x) / (b.x - a.x) * (b.y - a.y);
            lo = std::min(lo, y);
            hi = std::max(hi, y);
        }
    }
    return {lo, hi};
}

inline Vec2 centroid(const std::vector<Vec2>& pts) {
    Vec2 c;
    for (const Vec2& p : pts) c = c + p;
    return (1.0 / static_cast<double>(pts.size())) * c;
}

/// Sort by rank (x), then cross-stream (y); recompute rank tallies.
inline std::vector<int> sort_into_ranks(std::vector<Vec2>& pts) {
    const double tol = 1e-6;
    std::sort(pts.begin(), pts.end(), [tol](Vec2 a, Vec2 b) {
        if (std::abs(a.x - b.x) > tol) return a.x < b.x;
        return a.y < b.y;
    });
    std::vector<int> counts;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i == 0 || std::abs(pts[i].x - pts[i - 1].x) > tol) counts.push_back(0);
        ++counts.back();
    }
    return counts;
}

struct ConfigurationCode {
    std::vector<int> counts;
    bool staggered;
    bool rotate_cw;
};

inline std::optional<ConfigurationCode> parse_configuration(std::string_view name) {
    if (name == "4444") return ConfigurationCode{{4, 4, 4, 4}, false, false};
    if (name == "4444-IR") return ConfigurationCode{{4, 4, 4, 4}, true, false};
    if (name == "4444-IIR") return ConfigurationCode{{4, 4, 4, 4}, true, true};
    if (name == "1234321") return ConfigurationCode{{1, 2, 3, 4, 3, 2, 1}, true, false};
    if (name == "5434") return ConfigurationCode{{5, 4, 3, 4}, true, false};
    if (name == "43432") return ConfigurationCode{{4, 3, 4, 3, 2}, true, false};
    if (name == "4543") return ConfigurationCode{{4, 5, 4, 3}, true, false};
    if (name == "54322") return ConfigurationCode{{5, 4, 3, 2, 2}, true, false};
    return std::nullopt;
}

inline PortSegment vertical_port(double x, double y_center, double width, int slot) {
    return {{x, y_center - 0.5 * width}, {x, y_center + 0.5 * width}, slot};
}

/// Canonical slot offsets from the edge centre, in units of the slot pitch.
inline double slot_offset(int position) {
    static constexpr std::array<double, 5> offsets = {0.0, 1.0, -1.0, 2.0, -2.0};
    return offsets[static_cast<std::size_t>(position - 1)];
}

}  // namespace detail

/// Disk-hull polygon: the convex hull of disks of radius r_outer around each
/// centre, offset outward by `clearance`. Rounded corners use 16 chords per
/// quarter turn and are inscribed in the true arcs.
inline std::vector<Vec2> pack_hull(const std::vector<Vec2>& centers, double r_outer, double clearance) {
    if (centers.empty()) throw InvalidArgument("pack_hull needs at least one centre");
    if (!(clearance > 0.0)) throw InvalidArgument("pack_hull clearance must be > 0");
    const double radius = r_outer + clearance;
    const double quarter = 0.5 * std::numbers::pi;
    constexpr int kSegmentsPerQuarter = 16;

    const std::vector<Vec2> hull = detail::convex_hull(centers);
    std::vector<Vec2> poly;
    if (hull.size() == 1) {
        const int n = 4 * kSegmentsPerQuarter;
        for (int k = 0; k < n; ++k) {
            const double phi = 2.0 * std::numbers::pi * k / n;
            poly.push_back(hull[0] + radius * Vec2{std::cos(phi), std::sin(phi)});
        }
        return poly;
    }
    const std::size_t m = hull.size();
    for (std::size_t i = 0; i < m; ++i) {
        const Vec2 prev = hull[(i + m - 1) % m];
        const Vec2 cur = hull[i];
        const Vec2 next = hull[(i + 1) % m];
        const Vec2 din = cur - prev;
        const Vec2 dout = next - cur;
        double phi_in = std::atan2(-din.x, din.y);
        double phi_out = std::atan2(-dout.x, dout.y);
        while (phi_out < phi_in - 1e-12) phi_out += 2.0 * std::numbers::pi;
        const double sweep = phi_out - phi_in;
        const int n = std::max(1, static_cast<int>(std::ceil(sweep / quarter * kSegmentsPerQuarter - 1e-9)));
        for (int k = 0; k <= n; ++k) {
            const double phi = phi_in + sweep * k / n;
            poly.push_back(cur + radius * Vec2{std::cos(phi), std::sin(phi)});
        }
    }
    return poly;
}

namespace detail {

/// Clip the disk hull to flat upstream/downstream edges and place the ports.
inline void attach_ducted_ports(PackLayout& layout, const CapsuleSpec& capsule, const LayoutOptions& opt) {
    opt.ports.validate();
    if (!(opt.port_standoff > 0.0) || !(opt.port_standoff < opt.clearance)) {
        throw InvalidArgument("port_standoff must be in (0, clearance)");
    }
    const double r = capsule.r_outer_sheath_out;
    const Box centers_box = bounding_box(layout.cell_centers);
    const double x_in = centers_box.lo.x - r - opt.port_standoff;
    const double x_out = centers_box.hi.x + r + opt.port_standoff;

    std::vector<Vec2> duct = pack_hull(layout.cell_centers, r, opt.clearance);
    duct = clip_vertical(duct, x_in, +1.0);
    duct = clip_vertical(duct, x_out, -1.0);
    layout.duct = std::move(duct);

    auto place = [&](double x, const std::vector<int>& positions, double width, const char* what) {
        const auto [lo, hi] = vertical_chord(layout.duct, x);
        const double edge = hi - lo;
        const double pitch = edge / PortPlan::kSlots;
        if (!(width < pitch)) {
            throw InvalidArgument(std::string(what) + " width " + std::to_string(width) +
                                  " mm does not fit the slot pitch " + std::to_string(pitch) + " mm");
        }
        const double mid = 0.5 * (lo + hi);
        std::vector<PortSegment> segs;
        for (int pos : positions) segs.push_back(vertical_port(x, mid + slot_offset(pos) * pitch, width, pos));
        return segs;
    };
    layout.inlets = place(x_in, opt.ports.resolved_inlets(), opt.ports.inlet_width, "inlet");
    layout.outlets = place(x_out, opt.ports.resolved_outlets(), opt.ports.outlet_width, "outlet");
}

}  // namespace detail

/// Centres of a coded arrangement, centred on the origin and sorted into ranks.
inline std::vector<Vec2> arrangement_centers(std::string_view name, double pitch) {
    const auto code = detail::parse_configuration(name);
    if (!code) throw UnknownConfiguration(std::string(name));
    const double dx = code->staggered ? pitch * std::sqrt(3.0) / 2.0 : pitch;
    std::vector<Vec2> pts;
    double prev_phase = -1.0;
    for (std::size_t rank = 0; rank < code->counts.size(); ++rank) {
        const int n = code->counts[rank];
        // Centred rank: phase 0 for odd counts, 1/2 for even counts.
        double shift = 0.0;
        const double natural = (n % 2 == 0) ? 0.5 : 0.0;
        double phase = natural;
        if (code->staggered && prev_phase >= 0.0 && phase == prev_phase) {
            shift = 0.5;
            phase = std::fmod(phase + 0.5, 1.0);
        }
        prev_phase = phase;
        for (int j = 0; j < n; ++j) {
            const double y = (j - 0.5 * (n - 1) + shift) * pitch;
            pts.push_back({static_cast<double>(rank) * dx, y});
        }
    }
    const Vec2 c = detail::centroid(pts);
    for (Vec2& p : pts) p = p - c;
    if (code->rotate_cw) {
        for (Vec2& p : pts) p = {p.y, -p.x};
    }
    detail::sort_into_ranks(pts);
    return pts;
}

inline PackLayout build_configuration(std::string_view name, const CapsuleSpec& capsule, const LayoutOptions& opt) {
    capsule.validate();
    if (!(opt.gap > 0.0)) throw InvalidArgument("gap must be > 0");
    const double pitch = 2.0 * capsule.r_outer_sheath_out + opt.gap;

    PackLayout layout;
    layout.name = std::string(name);
    layout.capsule_radius = capsule.r_outer_sheath_out;
    layout.cell_centers = arrangement_centers(name, pitch);
    layout.row_counts = detail::sort_into_ranks(layout.cell_centers);

    for (std::size_t i = 0; i < layout.cell_centers.size(); ++i) {
        for (std::size_t j = i + 1; j < layout.cell_centers.size(); ++j) {
            if (distance(layout.cell_centers[i], layout.cell_centers[j]) < 2.0 * capsule.r_outer_sheath_out) {
                throw Error("internal: capsules " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
            }
        }
    }
    detail::attach_ducted_ports(layout, capsule, opt);
    return layout;
}

inline PackLayout build_configuration(std::string_view name, const CapsuleSpec& capsule, double gap = 10.0) {
    LayoutOptions opt;
    opt.gap = gap;
    return build_configuration(name, capsule, opt);
}

/// Diamond (1234321) pack with the port plan applied to its flat upstream
/// (inlet) and downstream (outlet) edges.
inline PackLayout build_diamond_ports(const CapsuleSpec& capsule, const PortPlan& plan,
                                      LayoutOptions opt = {}) {
    plan.validate();
    opt.ports = plan;
    PackLayout layout = build_configuration("1234321", capsule, opt);
    layout.name = "diamond-ports";
    return layout;
}

/// One capsule centred in a square duct; inlet over the whole upstream edge
/// and outlet over the whole downstream edge unless `closed`.
inline PackLayout single_capsule_layout(const CapsuleSpec& capsule, double box = 120.0, bool closed = false) {
    capsule.validate();
    const double half = 0.5 * box;
    if (!(half > capsule.r_outer_sheath_out)) throw InvalidArgument("box too small for the capsule");
    PackLayout layout;
    layout.name = closed ? "single-capsule-closed" : "single-capsule";
    layout.capsule_radius = capsule.r_outer_sheath_out;
    layout.cell_centers = {{0.0, 0.0}};
    layout.row_counts = {1};
    layout.duct = {{-half, -half}, {half, -half}, {half, half}, {-half, half}};
    if (!closed) {
        layout.inlets = {detail::vertical_port(-half, 0.0, box, 0)};
        layout.outlets = {detail::vertical_port(half, 0.0, box, 0)};
    }
    return layout;
}

/// Empty straight channel of the given length and height (mm), open at both ends.
inline PackLayout channel_layout(double length, double height) {
    if (!(length > 0.0) || !(height > 0.0)) throw InvalidArgument("channel dimensions must be > 0");
    PackLayout layout;
    layout.name = "channel";
    layout.duct = {{0.0, 0.0}, {length, 0.0}, {length, height}, {0.0, height}};
    layout.inlets = {detail::vertical_port(0.0, 0.5 * height, height, 0)};
    layout.outlets = {detail::vertical_port(length, 0.5 * height, height, 0)};
    return layout;
}

// ---------------------------------------------------------------------------
// Validation

struct LayoutDiagnostic {
    enum class Kind { cell_count, row_counts, overlap, outside_duct, port_off_boundary, port_overlap };
    Kind kind;
    std::vector<std::size_t> indices;
    std::string message;
};

inline std::vector<LayoutDiagnostic> validate_layout(const PackLayout& layout) {
    using Kind = LayoutDiagnostic::Kind;
    std::vector<LayoutDiagnostic> diags;
    const auto& c = layout.cell_centers;
    const double r = layout.capsule_radius;

    if (is_pack_configuration(layout.name) && c.size() != 16) {
        diags.push_back({Kind::cell_count, {}, "expected 16 cells, found " + std::to_string(c.size())});
    }
    long total = 0;
    for (int n : layout.row_counts) total += n;
    if (total != static_cast<long>(c.size())) {
        diags.push_back({Kind::row_counts, {},
                         "row counts sum to " + std::to_string(total) + " but there are " +
                             std::to_string(c.size()) + " cells"});
    }
    const double tol = 1e-9 * std::max(1.0, r);
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (std::size_t j = i + 1; j < c.size(); ++j) {
            if (distance(c[i], c[j]) < 2.0 * r - tol) {
                diags.push_back({Kind::overlap, {i, j},
                                 "capsules " + std::to_string(i) + " and " + std::to_string(j) + " overlap"});
            }
        }
    }
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (layout.duct.size() < 3 || !point_in_polygon(layout.duct, c[i]) ||
            !(distance_to_boundary(layout.duct, c[i]) > r)) {
            diags.push_back({Kind::outside_duct, {i}, "capsule " + std::to_string(i) + " is not strictly inside the duct"});
        }
    }
    auto on_boundary = [&](Vec2 p) { return layout.duct.size() >= 2 && distance_to_boundary(layout.duct, p) <= 1e-6; };
    auto check_ports = [&](const std::vector<PortSegment>& ports, const char* what) {
        for (std::size_t i = 0; i < ports.size(); ++i) {
            const PortSegment& s = ports[i];
            if (!on_boundary(s.a) || !on_boundary(s.b) || !on_boundary(s.midpoint())) {
                diags.push_back({Kind::port_off_boundary, {i},
                                 std::string(what) + " " + std::to_string(i) + " is not on the duct boundary"});
            }
        }
    };
    check_ports(layout.inlets, "inlet");
    check_ports(layout.outlets, "outlet");

    // Ports are collinear segments on straight edges; overlap = shared interior.
    std::vector<const PortSegment*> all;
    for (const auto& s : layout.inlets) all.push_back(&s);
    for (const auto& s : layout.outlets) all.push_back(&s);
    for (std::size_t i = 0; i < all.size(); ++i) {
        for (std::size_t j = i + 1; j < all.size(); ++j) {
            const PortSegment& p = *all[i];
            const PortSegment& q = *all[j];
            const Vec2 d = p.b - p.a;
            const double len = norm(d);
            if (len == 0.0) continue;
            const Vec2 u = (1.0 / len) * d;
            if (std::abs(cross(u, q.a - p.a)) > 1e-6 || std::abs(cross(u, q.b - p.a)) > 1e-6) continue;
            const double t0 = std::min(dot(q.a - p.a, u), dot(q.b - p.a, u));
            const double t1 = std::max(dot(q.a - p.a, u), dot(q.b - p.a, u));
            if (std::min(t1, len) - std::max(t0, 0.0) > 1e-9) {
                diags.push_back({Kind::port_overlap, {i, j},
                                 "ports " + std::to_string(i) + " and " + std::to_string(j) + " overlap"});
            }
        }
    }
    return diags;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const PackLayout& layout) {
    using nlohmann::json;
    auto pts = [](const std::vector<Vec2>& v) {
        json a = json::array();
        for (const Vec2& p : v) a.push_back({p.x, p.y});
        return a;
    };
    auto ports = [](const std::vector<PortSegment>& v) {
        json a = json::array();
        for (const auto& s : v) a.push_back({{"slot", s.slot}, {"a", {s.a.x, s.a.y}}, {"b", {s.b.x, s.b.y}}});
        return a;
    };
    return json{{"name", layout.name},
                {"row_counts", layout.row_counts},
                {"capsule_radius", layout.capsule_radius},
                {"cell_centers", pts(layout.cell_centers)},
                {"duct", pts(layout.duct)},
                {"inlets", ports(layout.inlets)},
                {"outlets", ports(layout.outlets)}};
}

inline PackLayout layout_from_json(const nlohmann::json& j) {
    auto pts = [](const nlohmann::json& a) {
        std::vector<Vec2> v;
        for (const auto& p : a) v.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        return v;
    };
    auto ports = [](const nlohmann::json& a) {
        std::vector<PortSegment> v;
        for (const auto& s : a) {
            v.push_back({{s.at("a").at(0).get<double>(), s.at("a").at(1).get<double>()},
                         {s.at("b").at(0).get<double>(), s.at("b").at(1).get<double>()},
                         s.value("slot", 0)});
        }
        return v;
    };
    PackLayout layout;
    layout.name = j.at("name").get<std::string>();
    layout.row_counts = j.value("row_counts", std::vector<int>{});
    layout.capsule_radius = j.value("capsule_radius", 29.8);
    layout.cell_centers = pts(j.at("cell_centers"));
    layout.duct = pts(j.at("duct"));
    layout.inlets = ports(j.value("inlets", nlohmann::json::array()));
    layout.outlets = ports(j.value("outlets", nlohmann::json::array()));
    return layout;
}

}  // namespace pcmpack
