#pragma once

// Static line charts for sweep results. Output is a pure function of the
// input: fixed layout, fixed number formatting, series in the given order.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pcmpack/error.hpp"

namespace pcmpack {

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotSpec {
    std::string title;
    std::string x_label = "Inlet velocity V (m/s)";
    std::string y_label = "Steady T_max (°C)";
    std::vector<PlotSeries> series;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '&': o += "&amp;"; break;
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

inline std::string fmt(double v, int prec = 2) {
    char b[48];
    std::snprintf(b, sizeof b, "%.*f", prec, v);
    return b;
}

// Round step of a "nice" tick spacing for the span.
inline double nice_step(double span, int target) {
    if (!(span > 0.0)) return 1.0;
    const double raw = span / target;
    const double p = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
        if (m * p >= raw) return m * p;
    return 10.0 * p;
}

inline const char* palette(std::size_t k) {
    static const char* c[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                              "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};
    return c[k % 10];
}

}  // namespace detail

inline std::string render_svg(const PlotSpec& spec) {
    std::size_t points = 0;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& s : spec.series) {
        if (s.x.size() != s.y.size()) throw InvalidArgument("plot series '" + s.label + "' has mismatched x/y");
        for (std::size_t k = 0; k < s.x.size(); ++k) {
            if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
            x0 = std::min(x0, s.x[k]);
            x1 = std::max(x1, s.x[k]);
            y0 = std::min(y0, s.y[k]);
            y1 = std::max(y1, s.y[k]);
            ++points;
        }
    }
    if (points == 0) throw InvalidArgument("nothing to plot");
    if (x1 - x0 < 1e-12) {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if (y1 - y0 < 1e-12) {
        y0 -= 1.0;
        y1 += 1.0;
    }
    const double ys = detail::nice_step(y1 - y0, 6);
    y0 = std::floor(y0 / ys) * ys;
    y1 = std::ceil(y1 / ys) * ys;
    const double xs = detail::nice_step(x1 - x0, 8);
    x0 = std::floor(x0 / xs) * xs;
    x1 = std::ceil(x1 / xs) * xs;

    const double W = 720, H = 460, L = 70, R = 190, T = 40, B = 60;
    const double pw = W - L - R, ph = H - T - B;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return T + ph - (y - y0) / (y1 - y0) * ph; };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' '
      << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << detail::fmt(W / 2 - R / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << detail::xml_escape(spec.title) << "</text>\n";
    o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int k = 0;; ++k) {
        const double y = y0 + k * ys;
        if (y > y1 + 1e-9 * ys) break;
        o << "<line x1=\"" << L << "\" y1=\"" << detail::fmt(py(y)) << "\" x2=\"" << L + pw << "\" y2=\"" << detail::fmt(py(y))
          << "\" stroke=\"#ddd\"/>";
        o << "<text x=\"" << L - 6 << "\" y=\"" << detail::fmt(py(y) + 4) << "\" text-anchor=\"end\">"
          << detail::fmt(y, ys < 1.0 ? 2 : 1) << "</text>\n";
    }
    for (int k = 0;; ++k) {
        const double x = x0 + k * xs;
        if (x > x1 + 1e-9 * xs) break;
        o << "<line x1=\"" << detail::fmt(px(x)) << "\" y1=\"" << T + ph << "\" x2=\"" << detail::fmt(px(x)) << "\" y2=\""
          << T + ph + 5 << "\" stroke=\"#333\"/>";
        o << "<text x=\"" << detail::fmt(px(x)) << "\" y=\"" << T + ph + 20 << "\" text-anchor=\"middle\">"
          << detail::fmt(x, xs < 1.0 ? 2 : 0) << "</text>\n";
    }
    o << "<text x=\"" << detail::fmt(L + pw / 2) << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">"
      << detail::xml_escape(spec.x_label) << "</text>\n";
    o << "<text transform=\"translate(18," << detail::fmt(T + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << detail::xml_escape(spec.y_label) << "</text>\n";

    for (std::size_t s = 0; s < spec.series.size(); ++s) {
        const auto& ser = spec.series[s];
        const char* col = detail::palette(s);
        std::vector<std::pair<double, double>> pts;
        for (std::size_t k = 0; k < ser.x.size(); ++k)
            if (std::isfinite(ser.x[k]) && std::isfinite(ser.y[k])) pts.emplace_back(ser.x[k], ser.y[k]);
        if (pts.size() >= 2) {
            o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
            for (std::size_t k = 0; k < pts.size(); ++k) {
                if (k) o << ' ';
                o << detail::fmt(px(pts[k].first)) << ',' << detail::fmt(py(pts[k].second));
            }
            o << "\"/>\n";
        }
        for (const auto& [x, y] : pts) {
            o << "<circle cx=\"" << detail::fmt(px(x)) << "\" cy=\"" << detail::fmt(py(y)) << "\" r=\"3\" fill=\"" << col
              << "\"/>\n";
        }
        const double ly = T + 14 + 18.0 * static_cast<double>(s);
        o << "<g class=\"legend\"><line x1=\"" << L + pw + 15 << "\" y1=\"" << detail::fmt(ly - 4) << "\" x2=\"" << L + pw + 40
          << "\" y2=\"" << detail::fmt(ly - 4) << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>";
        o << "<text x=\"" << L + pw + 46 << "\" y=\"" << detail::fmt(ly) << "\">" << detail::xml_escape(ser.label)
          << "</text></g>\n";
    }
    o << "</svg>\n";
    return o.str();
}

inline void write_svg(const PlotSpec& spec, const std::string& path) {
    const std::string s = render_svg(spec);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path);
    out << s;
}

}  // namespace pcmpack
