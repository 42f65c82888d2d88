#include "backstep/chart_grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace backstep {

ChartGrid make_chart_grid(const CanonicalChart& chart, int nxi) {
    if (nxi < 8) throw std::invalid_argument("chart grid needs at least 8 xi nodes");
    ChartGrid g;
    g.chart = chart;
    g.nxi = nxi;
    g.h = chart.b_plus() / (nxi - 1);

    // the lower boundary bottoms out at b_plus for triangle charts and at
    // the kink xi = phi_j(1) for Fredholm charts
    double eta_min = std::min(chart.eta_l(chart.b_plus()), chart.eta_l(chart.phi_j1()));
    g.q0 = std::max(0, static_cast<int>(std::ceil(-eta_min / g.h - 1e-9)) + 1);
    int q_top = static_cast<int>(std::ceil(chart.eta_bar() / g.h - 1e-9));
    g.neta = g.q0 + q_top + 1;

    const double slack = 1e-12 * (1.0 + chart.b_plus());
    g.mask.assign(g.size(), 0);
    g.core.assign(g.size(), 0);
    g.qlo.assign(nxi, -1);
    g.qhi.assign(nxi, -1);
    g.plo.assign(g.neta, -1);
    g.phi.assign(g.neta, -1);
    g.eta_start.resize(nxi);
    g.xi_start.resize(g.neta);
    g.z_of.assign(g.size(), 0.0);
    g.zeta_of.assign(g.size(), 0.0);

    for (int p = 0; p < nxi; ++p) {
        double xi = g.xi(p);
        g.eta_start[p] = chart.eta_l(xi);
        double top = chart.eta_up(xi);
        int first = -1, last = -1;
        for (int q = 0; q < g.neta; ++q) {
            double eta = g.eta(q);
            if (eta >= g.eta_start[p] - slack && eta <= top + slack) {
                g.core[g.idx(p, q)] = 1;
                if (first < 0) first = q;
                last = q;
            }
        }
        if (first < 0) continue;
        // ghost row below a partial boundary cell; only where the boundary
        // sits below the seam, so the field formulas extend along the rows
        if (first > 0 && g.eta(first) - g.eta_start[p] > 1e-9 && g.eta_start[p] < 1e-12) --first;
        g.qlo[p] = first;
        g.qhi[p] = last;
        for (int q = first; q <= last; ++q) {
            int id = g.idx(p, q);
            g.mask[id] = 1;
            double z, zeta;
            chart.to_physical(xi, g.eta(q), &z, &zeta);
            g.z_of[id] = z;
            g.zeta_of[id] = zeta;
        }
    }
    for (int q = 0; q < g.neta; ++q) {
        g.xi_start[q] = chart.xi_l(g.eta(q));
        for (int p = 0; p < nxi; ++p) {
            if (g.in(p, q)) {
                if (g.plo[q] < 0) g.plo[q] = p;
                g.phi[q] = p;
            }
        }
    }
    return g;
}

namespace {

// Linear interpolation along one column. side = -1 / +1 restricts to rows
// strictly below / at-or-above the eta = 0 seam, extrapolating linearly
// within one cell when the query falls beyond that side's span.
double column_lerp(const ChartGrid& g, const FieldData& f, int p, double eta, int side, bool* ok) {
    int lo = g.qlo[p], hi = g.qhi[p];
    if (lo >= 0 && side < 0) hi = std::min(hi, g.q0 - 1);
    if (lo >= 0 && side > 0) lo = std::max(lo, g.q0);
    if (lo < 0 || hi < lo) {
        *ok = false;
        return 0.0;
    }
    *ok = true;
    if (lo == hi) return f[g.idx(p, lo)];
    double u = (eta - g.eta(0)) / g.h;
    u = std::clamp(u, lo - 1.0, hi + 1.0);  // at most one cell of extrapolation
    int q = std::clamp(static_cast<int>(std::floor(u)), lo, hi - 1);
    double t = u - q;
    return (1.0 - t) * f[g.idx(p, q)] + t * f[g.idx(p, q + 1)];
}

}  // namespace

double bilinear(const ChartGrid& g, const FieldData& f, double xi, double eta, int side) {
    double xmax = (g.nxi - 1) * g.h;
    double x = std::clamp(xi, 0.0, xmax);
    int p = std::min(static_cast<int>(x / g.h), g.nxi - 2);
    double t = x / g.h - p;
    bool ok0, ok1;
    double v0 = column_lerp(g, f, p, eta, side, &ok0);
    double v1 = column_lerp(g, f, p + 1, eta, side, &ok1);
    if (ok0 && ok1) return (1.0 - t) * v0 + t * v1;
    if (ok0) return v0;
    if (ok1) return v1;
    // borrow the nearest column carrying the requested side
    for (int d = 2; d < g.nxi; ++d) {
        if (p - d + 1 >= 0) {
            double v = column_lerp(g, f, p - d + 1, eta, side, &ok0);
            if (ok0) return v;
        }
        if (p + d < g.nxi) {
            double v = column_lerp(g, f, p + d, eta, side, &ok1);
            if (ok1) return v;
        }
    }
    return 0.0;
}

void col_cumint(const ChartGrid& g, const FieldData& f, FieldData& out) {
    out.assign(g.size(), 0.0);
    for (int p = 0; p < g.nxi; ++p) {
        int lo = g.qlo[p], hi = g.qhi[p];
        if (lo < 0) continue;
        double a = g.eta_start[p];
        bool seam_inside = a < -1e-12 && g.q0 > lo;  // integration starts below the seam
        // value of the integrand just below the seam, from lower-side data
        auto lower_limit_value = [&]() {
            if (g.q0 - 1 >= lo) {
                int qm = g.q0 - 1;
                if (g.q0 - 2 >= lo) return 2.0 * f[g.idx(p, qm)] - f[g.idx(p, qm - 1)];
                return f[g.idx(p, qm)];
            }
            bool ok = false;
            double v = 0.0;
            for (int d = 1; d < g.nxi && !ok; ++d) {
                if (p - d >= 0) v = column_lerp(g, f, p - d, 0.0, -1, &ok);
                if (!ok && p + d < g.nxi) v = column_lerp(g, f, p + d, 0.0, -1, &ok);
            }
            return ok ? v : f[g.idx(p, lo)];
        };

        if (g.eta(lo) < a) {
            // ghost row below the boundary: anchor the integral at eta_l
            double fnext = lo + 1 == g.q0 ? lower_limit_value() : f[g.idx(p, lo + 1)];
            double t = (a - g.eta(lo)) / g.h;
            double fa = (1.0 - t) * f[g.idx(p, lo)] + t * fnext;
            out[g.idx(p, lo)] = -(a - g.eta(lo)) * 0.5 * (f[g.idx(p, lo)] + fa);
        } else if (seam_inside && lo == g.q0) {
            // boundary strip hidden below the seam row: integrate it with
            // lower-branch values
            out[g.idx(p, lo)] = (0.0 - a) * lower_limit_value();
        } else {
            out[g.idx(p, lo)] = (g.eta(lo) - a) * f[g.idx(p, lo)];
        }
        for (int q = lo + 1; q <= hi; ++q) {
            double cell;
            if (q == g.q0 && q - 1 >= lo) {
                // cell touching the seam from below: close it with the
                // lower-branch limit instead of the upper value at eta = 0
                cell = 0.5 * g.h * (f[g.idx(p, q - 1)] + lower_limit_value());
            } else {
                cell = 0.5 * g.h * (f[g.idx(p, q)] + f[g.idx(p, q - 1)]);
                for (double t : g.seam_eta) {
                    if (t <= g.eta(q - 1) + 1e-12 || t >= g.eta(q) - 1e-12) continue;
                    // split the cell at a branch switch between the rows
                    double fm = f[g.idx(p, q - 1)];
                    if (q - 2 >= lo)
                        fm += (f[g.idx(p, q - 1)] - f[g.idx(p, q - 2)]) * (t - g.eta(q - 1)) / g.h;
                    double fpv = f[g.idx(p, q)];
                    if (q + 1 <= hi) fpv -= (f[g.idx(p, q + 1)] - f[g.idx(p, q)]) * (g.eta(q) - t) / g.h;
                    cell = 0.5 * (t - g.eta(q - 1)) * (f[g.idx(p, q - 1)] + fm) +
                           0.5 * (g.eta(q) - t) * (fpv + f[g.idx(p, q)]);
                }
            }
            out[g.idx(p, q)] = out[g.idx(p, q - 1)] + cell;
        }
    }
}

void row_cumint(const ChartGrid& g, const FieldData& f, FieldData& out) {
    out.assign(g.size(), 0.0);
    for (int q = 0; q < g.neta; ++q) {
        int lo = g.plo[q], hi = g.phi[q];
        if (lo < 0) continue;
        double a = g.xi_start[q];
        if (lo < hi && g.xi(lo) < a) {
            double t = (a - g.xi(lo)) / g.h;
            double fa = (1.0 - t) * f[g.idx(lo, q)] + t * f[g.idx(lo + 1, q)];
            out[g.idx(lo, q)] = -(a - g.xi(lo)) * 0.5 * (f[g.idx(lo, q)] + fa);
        } else {
            out[g.idx(lo, q)] = (g.xi(lo) - a) * f[g.idx(lo, q)];
        }
        for (int p = lo + 1; p <= hi; ++p) {
            double cell = 0.5 * g.h * (f[g.idx(p, q)] + f[g.idx(p - 1, q)]);
            for (double t : g.seam_xi) {
                if (t <= g.xi(p - 1) + 1e-12 || t >= g.xi(p) - 1e-12) continue;
                double fm = f[g.idx(p - 1, q)];
                if (p - 2 >= lo) fm += (f[g.idx(p - 1, q)] - f[g.idx(p - 2, q)]) * (t - g.xi(p - 1)) / g.h;
                double fpv = f[g.idx(p, q)];
                if (p + 1 <= hi) fpv -= (f[g.idx(p + 1, q)] - f[g.idx(p, q)]) * (g.xi(p) - t) / g.h;
                cell = 0.5 * (t - g.xi(p - 1)) * (f[g.idx(p - 1, q)] + fm) +
                       0.5 * (g.xi(p) - t) * (fpv + f[g.idx(p, q)]);
            }
            out[g.idx(p, q)] = out[g.idx(p - 1, q)] + cell;
        }
    }
}

namespace {

// Trapezoid along the vertical line over [a, b]. Endpoint values marked as
// seam cuts are extrapolated from inside the piece so a data jump at the
// cut is not smeared by interpolation across it.
double vert_piece(const ChartGrid& g, const FieldData& f, double xi, double a, double b, int side,
                  bool sharp_a, bool sharp_b) {
    if (b <= a) return 0.0;
    int qa = static_cast<int>(std::ceil((a - g.eta(0)) / g.h - 1e-12));
    int qb = static_cast<int>(std::floor((b - g.eta(0)) / g.h + 1e-12));
    while (qa <= qb && g.eta(qa) <= a + 1e-14) ++qa;
    while (qb >= qa && g.eta(qb) >= b - 1e-14) --qb;
    double va, vb;
    if (qa <= qb) {
        double f0 = bilinear(g, f, xi, g.eta(qa), side);
        double f1 = bilinear(g, f, xi, g.eta(std::min(qa + 1, qb)), side);
        va = sharp_a && qa < qb ? f0 + (f0 - f1) * (g.eta(qa) - a) / g.h : bilinear(g, f, xi, a, side);
        double g0 = bilinear(g, f, xi, g.eta(qb), side);
        double g1 = bilinear(g, f, xi, g.eta(std::max(qb - 1, qa)), side);
        vb = sharp_b && qb > qa ? g0 + (g0 - g1) * (b - g.eta(qb)) / g.h : bilinear(g, f, xi, b, side);
    } else {
        va = bilinear(g, f, xi, a, side);
        vb = bilinear(g, f, xi, b, side);
        return 0.5 * (b - a) * (va + vb);
    }
    double acc = 0.0;
    double prev_eta = a, prev_val = va;
    for (int q = qa; q <= qb; ++q) {
        double eta = g.eta(q);
        double val = bilinear(g, f, xi, eta, side);
        acc += 0.5 * (eta - prev_eta) * (val + prev_val);
        prev_eta = eta;
        prev_val = val;
    }
    acc += 0.5 * (b - prev_eta) * (vb + prev_val);
    return acc;
}

}  // namespace

double vert_segment(const ChartGrid& g, const FieldData& f, double xi, double a, double b) {
    if (b <= a) return 0.0;
    double acc = 0.0;
    // split at every branch-switch level crossed by [a, b]
    std::vector<std::pair<double, bool>> cuts{{a, false}};
    if (a < -1e-14 && b > 1e-14) cuts.push_back({0.0, false});
    for (double t : g.seam_eta)
        if (t > a + 1e-14 && t < b - 1e-14 && std::abs(t) > 1e-14) cuts.push_back({t, true});
    cuts.push_back({b, false});
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        int side = cuts[k + 1].first <= 1e-14 ? -1 : (cuts[k].first >= -1e-14 ? +1 : 0);
        acc += vert_piece(g, f, xi, cuts[k].first, cuts[k + 1].first, side, cuts[k].second,
                          cuts[k + 1].second);
    }
    return acc;
}

namespace {

double horiz_piece(const ChartGrid& g, const FieldData& f, double eta, double a, double b, bool sharp_a,
                   bool sharp_b, int side) {
    if (b <= a) return 0.0;
    int pa = static_cast<int>(std::ceil(a / g.h - 1e-12));
    int pb = static_cast<int>(std::floor(b / g.h + 1e-12));
    while (pa <= pb && g.xi(pa) <= a + 1e-14) ++pa;
    while (pb >= pa && g.xi(pb) >= b - 1e-14) --pb;
    double va, vb;
    if (pa <= pb) {
        double f0 = bilinear(g, f, g.xi(pa), eta, side);
        double f1 = bilinear(g, f, g.xi(std::min(pa + 1, pb)), eta, side);
        va = sharp_a && pa < pb ? f0 + (f0 - f1) * (g.xi(pa) - a) / g.h : bilinear(g, f, a, eta, side);
        double g0 = bilinear(g, f, g.xi(pb), eta, side);
        double g1 = bilinear(g, f, g.xi(std::max(pb - 1, pa)), eta, side);
        vb = sharp_b && pb > pa ? g0 + (g0 - g1) * (b - g.xi(pb)) / g.h : bilinear(g, f, b, eta, side);
    } else {
        return 0.5 * (b - a) * (bilinear(g, f, a, eta, side) + bilinear(g, f, b, eta, side));
    }
    double acc = 0.0;
    double prev_xi = a, prev_val = va;
    for (int p = pa; p <= pb; ++p) {
        double xi = g.xi(p);
        double val = bilinear(g, f, xi, eta, side);
        acc += 0.5 * (xi - prev_xi) * (val + prev_val);
        prev_xi = xi;
        prev_val = val;
    }
    acc += 0.5 * (b - prev_xi) * (vb + prev_val);
    return acc;
}

}  // namespace

double horiz_segment(const ChartGrid& g, const FieldData& f, double eta, double a, double b, int side) {
    if (b <= a) return 0.0;
    std::vector<std::pair<double, bool>> cuts{{a, false}};
    for (double t : g.seam_xi)
        if (t > a + 1e-14 && t < b - 1e-14) cuts.push_back({t, true});
    cuts.push_back({b, false});
    std::sort(cuts.begin(), cuts.end());
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k)
        acc += horiz_piece(g, f, eta, cuts[k].first, cuts[k + 1].first, cuts[k].second, cuts[k + 1].second,
                           side);
    return acc;
}

SmoothField::SmoothField(const ChartGrid& g, const FieldData& f, const std::vector<double>* boundary_values)
    : g_(&g) {
    cols_.resize(g.nxi);
    for (int p = 0; p < g.nxi; ++p) {
        int lo = g.qlo[p], hi = g.qhi[p];
        if (lo < 0) continue;
        Column& col = cols_[p];
        std::vector<double> xs, ys;
        for (int q = lo; q <= hi; ++q) {
            xs.push_back(g.eta(q));
            ys.push_back(f[g.idx(p, q)]);
        }
        if (boundary_values) {
            // exact boundary knot at eta_l, inserted in order
            double a = g.eta_start[p];
            auto it = std::lower_bound(xs.begin(), xs.end(), a);
            std::size_t pos = static_cast<std::size_t>(it - xs.begin());
            bool dup = (pos < xs.size() && std::abs(xs[pos] - a) < 1e-3 * g.h) ||
                       (pos > 0 && std::abs(xs[pos - 1] - a) < 1e-3 * g.h);
            if (!dup) {
                xs.insert(xs.begin() + pos, a);
                ys.insert(ys.begin() + pos, (*boundary_values)[p]);
            }
        }
        if (xs.empty()) continue;
        col.lo = xs.front();
        col.hi = xs.back();
        // one spline per smooth branch: kernel data may switch across eta = 0
        // and the chart's extra seam levels
        std::vector<double> levels{0.0};
        for (double t : g.seam_eta) levels.push_back(t);
        std::sort(levels.begin(), levels.end());
        std::size_t b = 0;
        for (double t : levels) {
            std::size_t e = b;
            while (e < xs.size() && xs[e] < t - 1e-12) ++e;
            if (e > b) {
                col.breaks.push_back(t);
                if (e - b == 1)
                    col.segs.emplace_back(std::vector<double>{xs[b], xs[b] + g.h},
                                          std::vector<double>{ys[b], ys[b]});
                else
                    col.segs.emplace_back(std::vector<double>(xs.begin() + b, xs.begin() + e),
                                          std::vector<double>(ys.begin() + b, ys.begin() + e));
            }
            b = e;
        }
        if (b < xs.size()) {
            col.breaks.push_back(std::numeric_limits<double>::infinity());
            if (xs.size() - b == 1)
                col.segs.emplace_back(std::vector<double>{xs[b], xs[b] + g.h},
                                      std::vector<double>{ys[b], ys[b]});
            else
                col.segs.emplace_back(std::vector<double>(xs.begin() + b, xs.begin() + b + (xs.size() - b)),
                                      std::vector<double>(ys.begin() + b, ys.end()));
        }
    }
}

double SmoothField::col_value(int p, double eta) const {
    const Column& col = cols_[p];
    double e = std::clamp(eta, col.lo - 2.0 * g_->h, col.hi + 2.0 * g_->h);
    for (std::size_t k = 0; k < col.segs.size(); ++k)
        if (e < col.breaks[k]) return col.segs[k](e);
    return col.segs.back()(e);
}

double SmoothField::operator()(double xi, double eta) const {
    const ChartGrid& g = *g_;
    double xmax = (g.nxi - 1) * g.h;
    double x = std::clamp(xi, 0.0, xmax);
    int pc = std::clamp(static_cast<int>(x / g.h) - 1, 0, std::max(0, g.nxi - 4));
    int ps[4];
    int m = 0;
    for (int p = pc; p < std::min(pc + 4, g.nxi); ++p)
        if (!cols_[p].segs.empty()) ps[m++] = p;
    if (m == 0) {
        for (int d = 1; d < g.nxi && m == 0; ++d) {
            if (pc - d >= 0 && !cols_[pc - d].segs.empty()) ps[m++] = pc - d;
            if (m == 0 && pc + 3 + d < g.nxi && !cols_[pc + 3 + d].segs.empty()) ps[m++] = pc + 3 + d;
        }
        if (m == 0) return 0.0;
    }
    double vals[4];
    for (int k = 0; k < m; ++k) vals[k] = col_value(ps[k], eta);
    if (m == 1) return vals[0];
    double out = 0.0;
    for (int k = 0; k < m; ++k) {
        double w = 1.0;
        double xk = g.xi(ps[k]);
        for (int l = 0; l < m; ++l) {
            if (l == k) continue;
            w *= (x - g.xi(ps[l])) / (xk - g.xi(ps[l]));
        }
        out += w * vals[k];
    }
    return out;
}

}  // namespace backstep
