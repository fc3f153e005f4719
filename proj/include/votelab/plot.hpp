// Minimal static SVG line charts for the sweep and probe figures.

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "votelab/error.hpp"

namespace votelab {

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

inline void write_svg_line_plot(const std::string& path, const std::string& title,
                                const std::string& x_label, const std::string& y_label,
                                const std::vector<PlotSeries>& series) {
    std::ofstream os(path);
    if (!os) throw ConfigError("write_svg_line_plot: cannot open " + path);

    const int width = 640, height = 440;
    const double ml = 70, mr = 160, mt = 40, mb = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmin > xmax) { xmin = 0; xmax = 1; }
    if (ymin > ymax) { ymin = 0; ymax = 1; }
    if (xmax == xmin) { xmax += 1; xmin -= 1; }
    if (ymax == ymin) { ymax += 1; ymin -= 1; }
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); };
    auto py = [&](double y) { return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb); };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
       << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<text x='" << width / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
       << "</text>\n";
    os << "<line x1='" << ml << "' y1='" << height - mb << "' x2='" << width - mr << "' y2='"
       << height - mb << "' stroke='black'/>\n";
    os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << height - mb
       << "' stroke='black'/>\n";
    os << "<text x='" << (ml + width - mr) / 2 << "' y='" << height - 12
       << "' text-anchor='middle' font-size='12'>" << x_label << "</text>\n";
    os << "<text x='16' y='" << (mt + height - mb) / 2
       << "' text-anchor='middle' font-size='12' transform='rotate(-90 16 "
       << (mt + height - mb) / 2 << ")'>" << y_label << "</text>\n";

    for (int i = 0; i <= 4; ++i) {
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        os << "<text x='" << ml - 6 << "' y='" << py(yv) + 4
           << "' text-anchor='end' font-size='10'>";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4g", yv);
        os << buf << "</text>\n";
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        std::snprintf(buf, sizeof(buf), "%.4g", xv);
        os << "<text x='" << px(xv) << "' y='" << height - mb + 16
           << "' text-anchor='middle' font-size='10'>" << buf << "</text>\n";
    }

    int ci = 0;
    for (const auto& s : series) {
        const char* color = colors[ci % 6];
        os << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
        for (std::size_t i = 0; i < s.x.size(); ++i) os << px(s.x[i]) << "," << py(s.y[i]) << " ";
        os << "'/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            os << "<circle cx='" << px(s.x[i]) << "' cy='" << py(s.y[i]) << "' r='3' fill='"
               << color << "'/>\n";
        os << "<text x='" << width - mr + 10 << "' y='" << mt + 16 * ci + 10
           << "' font-size='11' fill='" << color << "'>" << s.label << "</text>\n";
        ++ci;
    }
    os << "</svg>\n";
}

}  // namespace votelab
