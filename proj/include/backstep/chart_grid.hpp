#pragma once

#include <vector>

#include "backstep/canonical.hpp"
#include "backstep/numerics.hpp"

namespace backstep {

// Rectangular sample grid over a chart with equal spacing in xi and eta,
// masked to the chart domain; eta = 0 always falls on a grid row.
//
// The active mask extends one ghost row below the staircase wherever the
// lower boundary cuts through a cell. Kernel data can change branch across
// eta = 0, so the strip between the boundary and the first full row must be
// sampled on its own side of that seam; the ghost nodes carry the smoothly
// extended field values there.
struct ChartGrid {
    CanonicalChart chart;
    int nxi = 0, neta = 0;
    double h = 0.0;
    int q0 = 0;  // row index of eta = 0

    std::vector<unsigned char> mask;   // active nodes (domain + ghosts)
    std::vector<unsigned char> core;   // nodes inside the chart domain
    std::vector<int> qlo, qhi;         // per column: active row span (-1 if empty)
    std::vector<int> plo, phi;         // per row: active column span
    std::vector<double> eta_start;     // per column: exact eta_l(xi_p)
    std::vector<double> xi_start;      // per row: exact xi_l(eta_q)
    // kernel data can switch branch across these lines (beyond eta = 0);
    // integrals split their cells there
    std::vector<double> seam_eta, seam_xi;
    std::vector<double> z_of, zeta_of; // per active node: physical coordinates

    double xi(int p) const { return p * h; }
    double eta(int q) const { return (q - q0) * h; }
    int idx(int p, int q) const { return q * nxi + p; }
    bool in(int p, int q) const { return mask[idx(p, q)] != 0; }
    int size() const { return nxi * neta; }
};

ChartGrid make_chart_grid(const CanonicalChart& chart, int nxi);

using FieldData = std::vector<double>;

// Bilinear read clamped into the active mask along eta. side = -1 / +1
// restricts the read to rows below / above the eta = 0 seam (extrapolating
// from that side), which keeps branch-switching fields from being smeared.
double bilinear(const ChartGrid& g, const FieldData& f, double xi, double eta, int side = 0);

// out(p,q) = integral of f along column p from eta_l(xi_p) up to eta_q.
// Ghost rows resolve the partial boundary cell and the integration is
// split at eta = 0, so integrands may jump across the seam.
void col_cumint(const ChartGrid& g, const FieldData& f, FieldData& out);

// out(p,q) = integral of f along row q from xi_l(eta_q) up to xi_p.
void row_cumint(const ChartGrid& g, const FieldData& f, FieldData& out);

// Integral of f along the vertical line at xi from eta a to b (a <= b),
// trapezoid over the row crossings, split at the eta = 0 seam.
double vert_segment(const ChartGrid& g, const FieldData& f, double xi, double a, double b);

// Same along the horizontal line at eta from xi a to b; side selects the
// eta = 0 branch for the reads as in bilinear().
double horiz_segment(const ChartGrid& g, const FieldData& f, double eta, double a, double b, int side = 0);

// C2-quality evaluation of a masked field: natural cubic splines along
// columns combined by cubic Lagrange across columns. Column splines are
// split at eta = 0 because the kernel data may switch branch there; exact
// lower-boundary values can be supplied to anchor the boundary.
class SmoothField {
public:
    SmoothField() = default;
    SmoothField(const ChartGrid& g, const FieldData& f, const std::vector<double>* boundary_values = nullptr);
    double operator()(double xi, double eta) const;

private:
    struct Column {
        std::vector<CubicSpline> segs;   // one spline per smooth branch
        std::vector<double> breaks;      // ascending branch boundaries
        double lo = 0.0, hi = 0.0;
    };
    const ChartGrid* g_ = nullptr;
    std::vector<Column> cols_;
    double col_value(int p, double eta) const;
};

}  // namespace backstep
