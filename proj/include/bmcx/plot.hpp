#pragma once

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmcx/sweep.hpp"

namespace bmcx {

// SVG line charts rendered straight from sweep CSV rows. Pure view code: the
// output is a deterministic function of the rows, so re-emission is
// byte-identical.

namespace plotdetail {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kMarginLeft = 56.0;
constexpr double kMarginRight = 16.0;
constexpr double kMarginTop = 16.0;
constexpr double kMarginBottom = 44.0;

inline const char* palette(size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return colors[i % 10];
}

inline double map_x(double t) {
    return kMarginLeft + t * (kWidth - kMarginLeft - kMarginRight);
}

inline double map_y(double acc) {
    return kHeight - kMarginBottom - acc * (kHeight - kMarginTop - kMarginBottom);
}

inline std::string svg_chart(const std::map<std::string, std::vector<SweepRow>>& series,
                             const std::string& title) {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    out << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "  <text x=\"" << kWidth / 2 << "\" y=\"" << kMarginTop + 4
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << title
        << "</text>\n";
    // axes
    out << "  <line x1=\"" << kMarginLeft << "\" y1=\"" << map_y(0.0) << "\" x2=\"" << map_x(1.0)
        << "\" y2=\"" << map_y(0.0) << "\" stroke=\"black\"/>\n";
    out << "  <line x1=\"" << kMarginLeft << "\" y1=\"" << map_y(0.0) << "\" x2=\"" << kMarginLeft
        << "\" y2=\"" << map_y(1.0) << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 10; i += 2) {
        const double t = i / 10.0;
        out << "  <text x=\"" << map_x(t) << "\" y=\"" << kHeight - kMarginBottom + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
            << format_double(t) << "</text>\n";
        out << "  <text x=\"" << kMarginLeft - 8 << "\" y=\"" << map_y(t) + 3
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
            << format_double(t) << "</text>\n";
    }
    out << "  <text x=\"" << (kMarginLeft + kWidth - kMarginRight) / 2 << "\" y=\"" << kHeight - 8
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">t</text>\n";

    size_t color = 0;
    for (const auto& [key, rows] : series) {
        out << "  <polyline fill=\"none\" stroke=\"" << palette(color) << "\" stroke-width=\"1.5\""
            << " points=\"";
        for (size_t i = 0; i < rows.size(); ++i) {
            if (i) out << ' ';
            out << format_double(map_x(rows[i].t)) << ',' << format_double(map_y(rows[i].accuracy));
        }
        out << "\"/>\n";
        out << "  <text x=\"" << kWidth - kMarginRight - 4 << "\" y=\""
            << kMarginTop + 16 + 13 * static_cast<double>(color)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\" fill=\""
            << palette(color) << "\">" << key << "</text>\n";
        ++color;
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace plotdetail

/// Render one chart per metric family present in the CSV: "overall" rows get
/// their own chart; every other key becomes one polyline of the per-key
/// chart. Returns the files written. Empty input is an error and writes
/// nothing.
inline std::vector<std::string> emit_plots(const std::string& csv_path) {
    const std::vector<SweepRow> rows = read_sweep_csv(csv_path);
    if (rows.empty()) throw std::runtime_error("plot: " + csv_path + " has no data rows");

    std::map<std::string, std::vector<SweepRow>> overall, by_key;
    for (const auto& r : rows) {
        (r.key == "overall" ? overall : by_key)[r.key].push_back(r);
    }
    for (auto* group : {&overall, &by_key}) {
        for (auto& [key, series] : *group) {
            std::stable_sort(series.begin(), series.end(),
                             [](const SweepRow& a, const SweepRow& b) { return a.t < b.t; });
        }
    }

    const std::string stem = csv_path.substr(0, csv_path.find_last_of('.'));
    std::vector<std::string> written;
    if (!overall.empty()) {
        const std::string path = stem + ".overall.svg";
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw std::runtime_error("plot: cannot write " + path);
        f << plotdetail::svg_chart(overall, "accuracy vs t");
        written.push_back(path);
    }
    if (!by_key.empty()) {
        const std::string path = stem + ".by_key.svg";
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw std::runtime_error("plot: cannot write " + path);
        f << plotdetail::svg_chart(by_key, "per-key accuracy vs t");
        written.push_back(path);
    }
    return written;
}

}  // namespace bmcx
