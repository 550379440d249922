#pragma once

#include <cmath>

#include "fusmae/tensor.hpp"

namespace fusmae {

// Fixed 2-D sine-cosine positional table over a grid_h x grid_w patch grid.
// The first d/2 channels encode the row coordinate, the rest the column;
// each half holds sin/cos pairs at geometrically spaced frequencies.
template <class T>
Tensor<T> build_pos_embed(int grid_h, int grid_w, int d) {
    if (d % 4 != 0) throw ShapeError("build_pos_embed: width must be divisible by 4, got " + std::to_string(d));
    if (grid_h < 1 || grid_w < 1) throw ShapeError("build_pos_embed: degenerate grid");
    const int half = d / 2;
    const int quarter = d / 4;
    Tensor<T> out = Tensor<T>::zeros({grid_h * grid_w, d});
    T* p = out.ptr();
    for (int gh = 0; gh < grid_h; ++gh) {
        for (int gw = 0; gw < grid_w; ++gw) {
            T* row = p + (gh * grid_w + gw) * d;
            for (int k = 0; k < quarter; ++k) {
                const double omega = std::pow(10000.0, -static_cast<double>(k) / quarter);
                row[k] = static_cast<T>(std::sin(gh * omega));
                row[quarter + k] = static_cast<T>(std::cos(gh * omega));
                row[half + k] = static_cast<T>(std::sin(gw * omega));
                row[half + quarter + k] = static_cast<T>(std::cos(gw * omega));
            }
        }
    }
    return out;
}

}  // namespace fusmae
