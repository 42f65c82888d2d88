#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

namespace backstep {

// Composite trapezoid of samples f over grid x (same length).
double trapz(const std::vector<double>& x, const std::vector<double>& f);

// Cumulative trapezoid: out[k] = integral from x[0] to x[k].
std::vector<double> cumtrapz(const std::vector<double>& x, const std::vector<double>& f);

std::vector<double> linspace(double a, double b, int n);

// Piecewise-linear table lookup, clamped at the ends. x must be ascending.
double lerp_table(const std::vector<double>& x, const std::vector<double>& y, double xq);

// Monotone cubic (Fritsch-Carlson) interpolant. Honors monotone data,
// never overshoots; used for resampling physical state profiles.
class Pchip {
public:
    Pchip() = default;
    Pchip(std::vector<double> x, std::vector<double> y);
    double operator()(double xq) const;

private:
    std::vector<double> x_, y_, d_;  // d_ = node derivatives
};

// Natural cubic spline through (x, y); x strictly ascending. Evaluation
// outside the knots extrapolates with the boundary cubic.
class CubicSpline {
public:
    CubicSpline() = default;
    CubicSpline(const std::vector<double>& x, const std::vector<double>& y);
    double operator()(double xq) const;

private:
    std::vector<double> x_, y_, m_;  // m_ = second derivatives at knots
};

// Runs fn(k) for k in [0, count) on up to BACKSTEP_THREADS workers.
// Iterations must write disjoint state.
void parallel_for(int count, const std::function<void(int)>& fn);

// FNV-1a, used to fingerprint config files in run manifests.
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace backstep
