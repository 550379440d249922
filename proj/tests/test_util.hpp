#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fusmae/rng.hpp"
#include "fusmae/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b, double floor_ = 1e-8) {
    const double denom = std::max({std::fabs(a), std::fabs(b), floor_});
    return std::fabs(a - b) / denom;
}

template <class T>
double max_rel_err(const fusmae::Tensor<T>& a, const fusmae::Tensor<T>& b, double floor_ = 1e-8) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, rel_err(static_cast<double>(a.ptr()[i]), static_cast<double>(b.ptr()[i]), floor_));
    return worst;
}

template <class T>
double max_abs_diff(const fusmae::Tensor<T>& a, const fusmae::Tensor<T>& b) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::fabs(static_cast<double>(a.ptr()[i]) - static_cast<double>(b.ptr()[i])));
    return worst;
}

template <class T>
fusmae::Tensor<T> random_tensor(fusmae::Shape shape, fusmae::Rng& rng, double scale = 1.0) {
    auto t = fusmae::Tensor<T>::zeros(std::move(shape));
    for (auto& v : t.vals()) v = static_cast<T>(rng.normal(0.0, scale));
    return t;
}

// Standard normal CDF by Simpson quadrature of the density, independent of
// the erf-based implementation under test.
inline double normal_cdf_quadrature(double x) {
    const double lo = -12.0;
    const int n = 20000;  // even
    const double h = (x - lo) / n;
    auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * 3.14159265358979323846); };
    double acc = pdf(lo) + pdf(x);
    for (int i = 1; i < n; ++i) acc += pdf(lo + i * h) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

// Finite-difference check of d(f)/d(x) against the tape gradient for a leaf
// x, where build(tape, x) returns a scalar loss. Oracle runs in the same
// dtype; callers pick f64 for tight tolerances.
template <class T>
double grad_check_leaf(const std::function<fusmae::Tensor<T>(fusmae::Tape<T>&, const fusmae::Tensor<T>&)>& build,
                       fusmae::Tensor<T> x, T eps, double floor_ = 1e-6) {
    x.requires_grad = true;
    fusmae::Tape<T> tape;
    fusmae::Tensor<T> loss = build(tape, x);
    auto grads = tape.backward(loss);
    fusmae::Tensor<T> ad = grads.at_or_zero(x);
    auto f = [&](const fusmae::Tensor<T>& probe) {
        fusmae::Tape<T> no_tape(false);
        return build(no_tape, probe).item();
    };
    fusmae::Tensor<T> fd = fusmae::finite_diff_grad<T>(f, x, eps);
    return max_rel_err(ad, fd, floor_);
}

}  // namespace testutil
