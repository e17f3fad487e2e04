#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pcmpack/geometry.hpp"

using namespace pcmpack;

namespace {

const CapsuleSpec kCapsule{};
const double kPitch = 2.0 * kCapsule.r_outer_sheath_out + 10.0;

std::vector<std::vector<Vec2>> ranks_of(const PackLayout& l) {
    std::vector<std::vector<Vec2>> ranks;
    std::size_t k = 0;
    for (int n : l.row_counts) {
        ranks.emplace_back(l.cell_centers.begin() + static_cast<long>(k), l.cell_centers.begin() + static_cast<long>(k + n));
        k += static_cast<std::size_t>(n);
    }
    return ranks;
}

double frac(double x) { return x - std::floor(x); }

}  // namespace

TEST(Configuration, TrapezoidRowCounts) {
    const PackLayout l = build_configuration("4543", kCapsule, 10.0);
    EXPECT_EQ(l.row_counts, (std::vector<int>{4, 5, 4, 3}));
    EXPECT_EQ(l.cell_centers.size(), 16u);
}

TEST(Configuration, DiamondRanks) {
    const PackLayout l = build_configuration("1234321", kCapsule, 10.0);
    EXPECT_EQ(l.row_counts, (std::vector<int>{1, 2, 3, 4, 3, 2, 1}));
}

TEST(Configuration, RectangularHasNoStagger) {
    const PackLayout l = build_configuration("4444", kCapsule, 10.0);
    ASSERT_EQ(l.row_counts, (std::vector<int>{4, 4, 4, 4}));
    const auto ranks = ranks_of(l);
    for (std::size_t r = 1; r < ranks.size(); ++r) {
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_NEAR(ranks[r][j].y, ranks[0][j].y, 1e-9);
            EXPECT_NEAR(ranks[r][j].x - ranks[r - 1][j].x, kPitch, 1e-9);
        }
    }
}

TEST(Configuration, UnknownNameThrows) {
    EXPECT_THROW(build_configuration("9999", kCapsule, 10.0), UnknownConfiguration);
    try {
        build_configuration("9999", kCapsule, 10.0);
    } catch (const UnknownConfiguration& e) {
        EXPECT_EQ(e.name(), "9999");
    }
}

TEST(Configuration, NonPositiveGapRejected) {
    EXPECT_THROW(build_configuration("4444", kCapsule, 0.0), InvalidArgument);
}

TEST(Configuration, AllCodesSatisfyInvariants) {
    for (auto id : configuration_ids()) {
        SCOPED_TRACE(std::string(id));
        const PackLayout l = build_configuration(id, kCapsule, 10.0);
        EXPECT_EQ(l.cell_centers.size(), 16u);
        int total = 0;
        for (int n : l.row_counts) total += n;
        EXPECT_EQ(total, 16);
        EXPECT_TRUE(validate_layout(l).empty());

        double dmin = 1e300;
        for (std::size_t i = 0; i < 16; ++i)
            for (std::size_t j = i + 1; j < 16; ++j) dmin = std::min(dmin, distance(l.cell_centers[i], l.cell_centers[j]));
        EXPECT_NEAR(dmin / kPitch, 1.0, 1e-9);

        // upstream to downstream, then by y
        for (std::size_t i = 1; i < 16; ++i) {
            const Vec2 a = l.cell_centers[i - 1];
            const Vec2 b = l.cell_centers[i];
            EXPECT_TRUE(a.x < b.x - 1e-6 || (std::abs(a.x - b.x) <= 1e-6 && a.y < b.y));
        }
    }
}

TEST(Configuration, StaggeredRanksOffsetByHalfSpacing) {
    for (auto id : configuration_ids()) {
        if (id == "4444") continue;
        SCOPED_TRACE(std::string(id));
        const PackLayout l = build_configuration(id, kCapsule, 10.0);
        const auto ranks = ranks_of(l);
        // Intra-rank spacing is the pitch, except for the rotated 4444-IIR.
        const double spacing = id == "4444-IIR" ? std::sqrt(3.0) * kPitch : kPitch;
        for (std::size_t r = 1; r < ranks.size(); ++r) {
            const double off = frac((ranks[r][0].y - ranks[r - 1][0].y) / spacing);
            EXPECT_NEAR(off, 0.5, 1e-9);
        }
    }
}

TEST(Configuration, IIRIsIRRotatedClockwise) {
    const PackLayout ir = build_configuration("4444-IR", kCapsule, 10.0);
    const PackLayout iir = build_configuration("4444-IIR", kCapsule, 10.0);
    const Vec2 c = detail::centroid(ir.cell_centers);
    std::vector<Vec2> rotated;
    for (Vec2 p : ir.cell_centers) {
        const Vec2 q = p - c;
        rotated.push_back(Vec2{q.y, -q.x} + c);
    }
    detail::sort_into_ranks(rotated);
    ASSERT_EQ(rotated.size(), iir.cell_centers.size());
    for (std::size_t i = 0; i < rotated.size(); ++i) {
        EXPECT_NEAR(rotated[i].x, iir.cell_centers[i].x, 1e-9);
        EXPECT_NEAR(rotated[i].y, iir.cell_centers[i].y, 1e-9);
    }
}

TEST(Hull, SingleCenterApproximatesDisk) {
    const auto poly = pack_hull({{3.0, -2.0}}, 29.8, 10.0);
    const double exact = std::numbers::pi * 39.8 * 39.8;
    EXPECT_NEAR(polygon_area(poly) / exact, 1.0, 0.01);
}

TEST(Hull, TwoCentersGiveStadium) {
    const double r = 29.8;
    const double c = 15.0;
    const auto poly = pack_hull({{0.0, 0.0}, {100.0, 0.0}}, r, c);
    const double exact = std::numbers::pi * (r + c) * (r + c) + 2.0 * (r + c) * 100.0;
    EXPECT_NEAR(polygon_area(poly) / exact, 1.0, 0.01);
}

TEST(Hull, LatticeBoundingBox) {
    std::vector<Vec2> pts;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) pts.push_back({i * kPitch, j * kPitch});
    const auto poly = pack_hull(pts, 29.8, 15.0);
    const Box b = bounding_box(poly);
    EXPECT_NEAR(b.lo.x, -44.8, 1e-9);
    EXPECT_NEAR(b.hi.x, 3 * kPitch + 44.8, 1e-9);
    EXPECT_NEAR(b.lo.y, -44.8, 1e-9);
    EXPECT_NEAR(b.hi.y, 3 * kPitch + 44.8, 1e-9);
}

TEST(Hull, Preconditions) {
    EXPECT_THROW(pack_hull({}, 29.8, 10.0), InvalidArgument);
    EXPECT_THROW(pack_hull({{0, 0}}, 29.8, 0.0), InvalidArgument);
}

TEST(DiamondPorts, FiveInletsOneOutlet) {
    const PackLayout l = build_diamond_ports(kCapsule, PortPlan{5, 1});
    EXPECT_EQ(l.inlets.size(), 5u);
    EXPECT_EQ(l.outlets.size(), 1u);
    EXPECT_EQ(l.name, "diamond-ports");
    EXPECT_TRUE(validate_layout(l).empty());
}

TEST(DiamondPorts, SingleInletSitsAtSlotOne) {
    const PackLayout l = build_diamond_ports(kCapsule, PortPlan{1, 1});
    ASSERT_EQ(l.inlets.size(), 1u);
    ASSERT_EQ(l.outlets.size(), 1u);
    EXPECT_EQ(l.inlets[0].slot, 1);
    EXPECT_EQ(l.outlets[0].slot, 1);
    const auto [lo, hi] = detail::vertical_chord(l.duct, l.inlets[0].a.x);
    EXPECT_NEAR(l.inlets[0].midpoint().y, 0.5 * (lo + hi), 1e-9);
}

TEST(DiamondPorts, OutOfRangeCountRejected) {
    EXPECT_THROW(build_diamond_ports(kCapsule, PortPlan{6, 1}), InvalidArgument);
    EXPECT_THROW(build_diamond_ports(kCapsule, PortPlan{0, 1}), InvalidArgument);
    EXPECT_THROW(build_diamond_ports(kCapsule, PortPlan{1, 6}), InvalidArgument);
}

TEST(DiamondPorts, OddCountsAreMirrorSymmetric) {
    for (int n = 1; n <= 5; ++n) {
        for (int m = 1; m <= 5; ++m) {
            const PackLayout l = build_diamond_ports(kCapsule, PortPlan{n, m});
            ASSERT_EQ(static_cast<int>(l.inlets.size()), n);
            ASSERT_EQ(static_cast<int>(l.outlets.size()), m);
            EXPECT_TRUE(validate_layout(l).empty());
            auto symmetric = [](const std::vector<PortSegment>& segs, double centre) {
                std::vector<double> up, down;
                for (const auto& s : segs) {
                    up.push_back(s.midpoint().y - centre);
                    down.push_back(centre - s.midpoint().y);
                }
                std::sort(up.begin(), up.end());
                std::sort(down.begin(), down.end());
                for (std::size_t k = 0; k < up.size(); ++k)
                    if (std::abs(up[k] - down[k]) > 1e-9) return false;
                return true;
            };
            const auto [ilo, ihi] = detail::vertical_chord(l.duct, l.inlets[0].a.x);
            const auto [olo, ohi] = detail::vertical_chord(l.duct, l.outlets[0].a.x);
            if (n % 2 == 1) EXPECT_TRUE(symmetric(l.inlets, 0.5 * (ilo + ihi))) << n;
            if (m % 2 == 1) EXPECT_TRUE(symmetric(l.outlets, 0.5 * (olo + ohi))) << m;
        }
    }
}

TEST(DiamondPorts, ExplicitPositions) {
    PortPlan plan{1, 1};
    plan.inlet_positions = {4};
    const PackLayout l = build_diamond_ports(kCapsule, plan);
    ASSERT_EQ(l.inlets.size(), 1u);
    EXPECT_EQ(l.inlets[0].slot, 4);
    plan.inlet_positions = {4, 4};
    EXPECT_THROW(build_diamond_ports(kCapsule, plan), InvalidArgument);
}

TEST(DiamondPorts, WidthMustFitSlot) {
    PortPlan plan{5, 1};
    plan.inlet_width = 200.0;
    EXPECT_THROW(build_diamond_ports(kCapsule, plan), InvalidArgument);
}

TEST(Validate, CoincidentCentersReportBothIndices) {
    PackLayout l = build_configuration("4444", kCapsule, 10.0);
    l.cell_centers[5] = l.cell_centers[2];
    const auto d = validate_layout(l);
    const auto it = std::find_if(d.begin(), d.end(), [](const LayoutDiagnostic& x) {
        return x.kind == LayoutDiagnostic::Kind::overlap;
    });
    ASSERT_NE(it, d.end());
    EXPECT_EQ(it->indices, (std::vector<std::size_t>{2, 5}));
}

TEST(Validate, FifteenCellsReportCellCount) {
    PackLayout l = build_configuration("4444", kCapsule, 10.0);
    l.cell_centers.pop_back();
    const auto d = validate_layout(l);
    EXPECT_TRUE(std::any_of(d.begin(), d.end(), [](const LayoutDiagnostic& x) {
        return x.kind == LayoutDiagnostic::Kind::cell_count;
    }));
}

TEST(Validate, CapsuleOutsideDuctAndOffBoundaryPort) {
    PackLayout l = build_configuration("4543", kCapsule, 10.0);
    l.cell_centers[0].x -= 40.0;
    l.inlets[0].a.x -= 3.0;
    l.inlets[0].b.x -= 3.0;
    const auto d = validate_layout(l);
    auto has = [&](LayoutDiagnostic::Kind k) {
        return std::any_of(d.begin(), d.end(), [k](const LayoutDiagnostic& x) { return x.kind == k; });
    };
    EXPECT_TRUE(has(LayoutDiagnostic::Kind::outside_duct));
    EXPECT_TRUE(has(LayoutDiagnostic::Kind::port_off_boundary));
}

TEST(Validate, OverlappingPorts) {
    PackLayout l = build_diamond_ports(kCapsule, PortPlan{2, 1});
    l.inlets[1] = l.inlets[0];
    const auto d = validate_layout(l);
    EXPECT_TRUE(std::any_of(d.begin(), d.end(), [](const LayoutDiagnostic& x) {
        return x.kind == LayoutDiagnostic::Kind::port_overlap;
    }));
}

TEST(Json, RoundTrip) {
    const PackLayout l = build_diamond_ports(kCapsule, PortPlan{3, 2});
    const PackLayout back = layout_from_json(to_json(l));
    EXPECT_EQ(back.name, l.name);
    EXPECT_EQ(back.row_counts, l.row_counts);
    ASSERT_EQ(back.cell_centers.size(), l.cell_centers.size());
    for (std::size_t i = 0; i < l.cell_centers.size(); ++i) EXPECT_EQ(back.cell_centers[i], l.cell_centers[i]);
    ASSERT_EQ(back.inlets.size(), 3u);
    EXPECT_EQ(back.inlets[2].slot, l.inlets[2].slot);
    EXPECT_EQ(back.duct.size(), l.duct.size());
}

TEST(Capsule, InvalidRadiiRejected) {
    CapsuleSpec c;
    c.r_outer_sheath_in = 19.0;
    EXPECT_THROW(c.validate(), InvalidArgument);
    CapsuleSpec q;
    q.q_gen = -1.0;
    EXPECT_THROW(q.validate(), InvalidArgument);
}

TEST(Capsule, SourcePowerPerDepth) {
    EXPECT_NEAR(kCapsule.source_power_per_depth(), 1322.88 * 2.0 * std::numbers::pi * 0.018, 1e-12);
}
