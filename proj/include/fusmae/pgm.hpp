#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "fusmae/common.hpp"

namespace fusmae {

// Plain (ASCII, P2) PGM with min-max scaling to 0..255.
inline void write_pgm(const std::string& path, const std::vector<double>& values, int rows, int cols) {
    if (static_cast<std::int64_t>(values.size()) != static_cast<std::int64_t>(rows) * cols)
        throw ShapeError("write_pgm: value count does not match rows*cols");
    double lo = values[0], hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("write_pgm: cannot open " + path);
    os << "P2\n" << cols << " " << rows << "\n255\n";
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const int g = static_cast<int>(255.0 * (values[static_cast<size_t>(r) * cols + c] - lo) / span + 0.5);
            os << g << (c + 1 == cols ? "" : " ");
        }
        os << "\n";
    }
    if (!os) throw IoError("write_pgm: write failed for " + path);
}

}  // namespace fusmae
