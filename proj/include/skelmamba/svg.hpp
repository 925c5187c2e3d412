#pragma once

#include <string>
#include <vector>

#include "skelmamba/common.hpp"

namespace skelmamba::svg {

struct Series {
    std::string name;
    std::vector<double> values;  // x is the index
};

// Static line chart, one polyline per series.
void line_chart(const std::string& path, const std::string& title,
                const std::vector<Series>& series);

// Row-major square matrix as a shaded grid (confusion matrices).
void heatmap(const std::string& path, const std::string& title,
             const std::vector<int64_t>& matrix, int64_t k,
             const std::vector<std::string>& labels);

}  // namespace skelmamba::svg
