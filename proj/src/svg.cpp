#include "skelmamba/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace skelmamba::svg {

namespace {

constexpr int kW = 640, kH = 400, kPad = 48;

const char* kPalette[6] = {"#1f77b4", "#d62728", "#2ca02c",
                           "#ff7f0e", "#9467bd", "#8c564b"};

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

void line_chart(const std::string& path, const std::string& title,
                const std::vector<Series>& series) {
    std::ofstream out(path);
    if (!out) throw Error("svg: cannot open " + path + " for writing");
    double lo = 0.0, hi = 1.0;
    size_t max_n = 1;
    bool first = true;
    for (const Series& s : series) {
        max_n = std::max(max_n, s.values.size());
        for (double v : s.values) {
            if (!std::isfinite(v)) continue;
            if (first) {
                lo = hi = v;
                first = false;
            } else {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    }
    if (hi <= lo) hi = lo + 1.0;
    auto sx = [&](size_t i) {
        return kPad + (kW - 2 * kPad) * static_cast<double>(i) /
                          static_cast<double>(std::max<size_t>(1, max_n - 1));
    };
    auto sy = [&](double v) {
        return kH - kPad - (kH - 2 * kPad) * (v - lo) / (hi - lo);
    };
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
        << "\" height=\"" << kH << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"14\">" << title
        << "</text>\n";
    out << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\""
        << kW - kPad << "\" y2=\"" << kH - kPad
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad
        << "\" y2=\"" << kH - kPad << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << kPad - 4 << "\" y=\"" << kPad
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
        << fmt(hi) << "</text>\n";
    out << "<text x=\"" << kPad - 4 << "\" y=\"" << kH - kPad
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
        << fmt(lo) << "</text>\n";
    for (size_t s = 0; s < series.size(); ++s) {
        out << "<polyline fill=\"none\" stroke=\"" << kPalette[s % 6]
            << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < series[s].values.size(); ++i) {
            if (i) out << " ";
            out << fmt(sx(i)) << "," << fmt(sy(series[s].values[i]));
        }
        out << "\"/>\n";
        out << "<text x=\"" << kW - kPad + 4 << "\" y=\"" << kPad + 14 * s
            << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\""
            << kPalette[s % 6] << "\">" << series[s].name << "</text>\n";
    }
    out << "</svg>\n";
}

void heatmap(const std::string& path, const std::string& title,
             const std::vector<int64_t>& matrix, int64_t k,
             const std::vector<std::string>& labels) {
    if (static_cast<int64_t>(matrix.size()) != k * k)
        throw ShapeError("svg heatmap: matrix must be k x k");
    std::ofstream out(path);
    if (!out) throw Error("svg: cannot open " + path + " for writing");
    int64_t mx = 1;
    for (int64_t v : matrix) mx = std::max(mx, v);
    const double cell = static_cast<double>(std::min(kW, kH) - 2 * kPad) /
                        static_cast<double>(k);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
        << "\" height=\"" << kH << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"14\">" << title
        << "</text>\n";
    for (int64_t i = 0; i < k; ++i) {
        for (int64_t j = 0; j < k; ++j) {
            const double frac =
                static_cast<double>(matrix[i * k + j]) / static_cast<double>(mx);
            const int shade = static_cast<int>(255.0 * (1.0 - 0.85 * frac));
            out << "<rect x=\"" << fmt(kPad + j * cell) << "\" y=\""
                << fmt(kPad + i * cell) << "\" width=\"" << fmt(cell)
                << "\" height=\"" << fmt(cell) << "\" fill=\"rgb(" << shade << ","
                << shade << ",255)\" stroke=\"#ccc\"/>\n";
            out << "<text x=\"" << fmt(kPad + j * cell + cell / 2) << "\" y=\""
                << fmt(kPad + i * cell + cell / 2 + 4)
                << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                   "font-size=\"11\">" << matrix[i * k + j] << "</text>\n";
        }
        const std::string label =
            i < static_cast<int64_t>(labels.size()) ? labels[i]
                                                    : std::to_string(i);
        out << "<text x=\"" << fmt(kPad - 6) << "\" y=\""
            << fmt(kPad + i * cell + cell / 2 + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
               "font-size=\"10\">" << label << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace skelmamba::svg
