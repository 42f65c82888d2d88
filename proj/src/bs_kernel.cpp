#include "backstep/bs_kernel.hpp"

#include <algorithm>
#include <cmath>

#include "backstep/numerics.hpp"

namespace backstep {

namespace {

// Everything the sweeps need, precomputed once per solve.
struct Solver {
    const FoldedPlant& fp;
    double mu;
    const ArtificialBC& gf;
    BsOptions opts;
    int n, n2;

    std::vector<std::shared_ptr<const TravelTimeMap>> phis;
    std::vector<ChartGrid> grids;  // n2*n2

    // per-node tables
    std::vector<FieldData> aD, aS;           // a_delta = beta_j(zeta) - beta_i(z); a_sigma = beta_i + beta_j
    std::vector<FieldData> gTerm;            // (s/4)*(mu - dtau a_sigma), coefficient of G in the H integrand
    std::vector<std::vector<FieldData>> ac;  // reaction couplings (lambda_j/lambda_k * A_kj) per k

    // diagonal quadrature I_i(z) = int_0^z (A_ii + mu) / (2 sqrt(lambda_i)) on a dense grid
    std::vector<double> iz;
    std::vector<std::vector<double>> Idiag;

    // fields: accumulated and current level deltas
    std::vector<FieldData> G, H, J, dG, dH, dJ;
    // scratch per sweep
    std::vector<FieldData> Acal, HInt, JInt, nG, nH, nJ;

    int cidx(int i, int j) const { return i * n2 + j; }
    bool has_J(int j) const { return j < n; }

    double beta(int i, double z) const { return fp.lambda_d(i, z) / (2.0 * std::sqrt(fp.lambda(i, z))); }

    double c0(int i, double xi) const {
        double z = phis[i]->inv(0.5 * xi);
        return -std::sqrt(fp.lambda(i, z)) * lerp_table(iz, Idiag[i], z);
    }
    double cdiff(int i, double xi) const {
        double z = phis[i]->inv(0.5 * xi);
        return -0.25 * fp.lambda_d(i, z) * lerp_table(iz, Idiag[i], z) -
               0.25 * std::sqrt(fp.lambda(i, z)) * (fp.A(i, i, z) + mu);
    }
    double c1(int i, int j, double xi) const {
        const CanonicalChart& ch = grids[cidx(i, j)].chart;
        double z, zeta;
        ch.to_physical(xi, ch.eta_l(xi), &z, &zeta);
        double li = fp.lambda(i, z), lj = fp.lambda(j, z);
        return fp.A(i, j, z) * lj * std::sqrt(li) / (lj - li);
    }
    double c4(int i, int j, double xi) const {
        const CanonicalChart& ch = grids[cidx(i, j)].chart;
        double dp = ch.eta_l_prime(xi);
        return c1(i, j, xi) * dp / (ch.s() * dp - 1.0);
    }
    double c5(int i, int j, double eta) const {
        const CanonicalChart& ch = grids[cidx(i, j)].chart;
        double xil = ch.xi_l(eta);
        return c1(i, j, xil) / (1.0 - ch.s() * ch.eta_l_prime(xil));
    }
    double a_sigma_at(int i, int j, double xi, double eta) const {
        const CanonicalChart& ch = grids[cidx(i, j)].chart;
        double z, zeta;
        ch.to_physical(xi, eta, &z, &zeta);
        return beta(i, z) + beta(j, zeta);
    }

    explicit Solver(const FoldedPlant& f, double mu_, const ArtificialBC& g, const BsOptions& o)
        : fp(f), mu(mu_), gf(g), opts(o), n(f.n), n2(2 * f.n) {
        phis.resize(n2);
        for (int i = 0; i < n2; ++i)
            phis[i] = std::make_shared<TravelTimeMap>([&, i](double z) { return fp.lambda(i, z); });

        grids.resize(n2 * n2);
        for (int i = 0; i < n2; ++i)
            for (int j = 0; j < n2; ++j) {
                CanonicalChart ch(CanonicalChart::Kind::Triangle, i, j, phis[i], phis[j],
                                  [&, i](double z) { return fp.lambda(i, z); },
                                  [&, j](double z) { return fp.lambda(j, z); });
                grids[cidx(i, j)] = make_chart_grid(ch, opts.n_xi);
            }

        iz = linspace(0.0, 1.0, 2001);
        Idiag.resize(n2);
        for (int i = 0; i < n2; ++i) {
            std::vector<double> f2(iz.size());
            for (std::size_t k = 0; k < iz.size(); ++k)
                f2[k] = (fp.A(i, i, iz[k]) + mu) / (2.0 * std::sqrt(fp.lambda(i, iz[k])));
            Idiag[i] = cumtrapz(iz, f2);
        }

        int nc = n2 * n2;
        aD.resize(nc);
        aS.resize(nc);
        gTerm.resize(nc);
        ac.assign(nc, {});
        parallel_for(nc, [&](int c) {
            int i = c / n2, j = c % n2;
            const ChartGrid& gr = grids[c];
            double s = gr.chart.s();
            aD[c].assign(gr.size(), 0.0);
            aS[c].assign(gr.size(), 0.0);
            gTerm[c].assign(gr.size(), 0.0);
            ac[c].assign(n2, FieldData());
            for (int k = 0; k < n2; ++k)
                if ((k < n) == (j < n)) ac[c][k].assign(gr.size(), 0.0);
            for (int q = 0; q < gr.neta; ++q)
                for (int p = 0; p < gr.nxi; ++p) {
                    if (!gr.in(p, q)) continue;
                    int id = gr.idx(p, q);
                    double z = gr.z_of[id], zeta = gr.zeta_of[id];
                    double bi = beta(i, z), bj = beta(j, zeta);
                    aD[c][id] = bj - bi;
                    aS[c][id] = bi + bj;
                    // dtau a_sigma along eta, from the second derivatives
                    auto half = [&](int m, double x) {
                        double l = fp.lambda(m, x), ld = fp.lambda_d(m, x), ldd = fp.lambda_dd(m, x);
                        return 0.5 * (0.5 * ldd - ld * ld / (4.0 * l));
                    };
                    double atil = half(i, z) - half(j, zeta);
                    gTerm[c][id] = (s / 4.0) * (mu - atil);
                    double lj = fp.lambda(j, zeta);
                    for (int k = 0; k < n2; ++k)
                        if (!ac[c][k].empty()) ac[c][k][id] = lj / fp.lambda(k, zeta) * fp.A(k, j, zeta);
                }
        });

        G.assign(nc, {});
        H.assign(nc, {});
        J.assign(nc, {});
        dG.assign(nc, {});
        dH.assign(nc, {});
        dJ.assign(nc, {});
        Acal.assign(nc, {});
        HInt.assign(nc, {});
        JInt.assign(nc, {});
        nG.assign(nc, {});
        nH.assign(nc, {});
        nJ.assign(nc, {});
    }

    // Level-0 deltas from the boundary data.
    void init_level0() {
        parallel_for(n2 * n2, [&](int c) {
            int i = c / n2, j = c % n2;
            const ChartGrid& gr = grids[c];
            double s = gr.chart.s();
            dG[c].assign(gr.size(), 0.0);
            dH[c].assign(gr.size(), 0.0);
            if (has_J(j)) dJ[c].assign(gr.size(), 0.0);
            for (int p = 0; p < gr.nxi; ++p) {
                int lo = gr.qlo[p], hi = gr.qhi[p];
                if (lo < 0) continue;
                double xi = gr.xi(p);
                double c0x = i == j ? c0(i, xi) : 0.0;
                double cdx = i == j ? cdiff(i, xi) : 0.0;
                double c4x = i != j ? c4(i, j, xi) : 0.0;
                double aS_bnd = i == j ? a_sigma_at(i, j, xi, gr.eta_start[p]) : 0.0;
                for (int q = lo; q <= hi; ++q) {
                    int id = gr.idx(p, q);
                    if (!gr.in(p, q)) continue;
                    double eta = gr.eta(q);
                    double vG = 0.0, vH = 0.0;
                    if (i == j) {
                        if (j < n) {
                            vG += c0x;
                            vH += 0.25 * aS[c][id] * c0x;
                        }
                        vH += cdx - 0.25 * aS_bnd * c0x;
                    } else {
                        vH += c4x;
                    }
                    if (eta >= 0.0) {
                        if (i == j - n) {
                            double c0e = c0(i, eta);
                            vG += fp.yt * c0e;
                            vH += 0.25 * aS[c][id] * fp.yt * c0e;
                        }
                        if (j >= n && i > j - n) {
                            double gfe = gf.gf(i, j, eta);
                            vG += gfe;
                            vH += (s / 4.0) * aS[c][id] * gfe;
                        }
                    }
                    dG[c][id] = vG;
                    dH[c][id] = vH;
                    if (has_J(j)) {
                        double vJ = 0.0;
                        if (eta < 0.0) {
                            if (i != j) vJ = c5(i, j, eta);
                        } else if (i <= j) {
                            double h0 = c4(i, j + n, eta);
                            if (i == j) h0 += 0.25 * a_sigma_at(i, j + n, eta, eta) * fp.yt * c0(i, eta);
                            vJ = h0 / fp.yt;
                        } else {
                            vJ = gf.gf(i, j, eta);
                        }
                        dJ[c][id] = vJ;
                    }
                }
            }
        });
    }

    // Reaction sum over the column block at every node of chart c.
    void compute_Acal(int c) {
        int i = c / n2;
        const ChartGrid& gr = grids[c];
        Acal[c].assign(gr.size(), 0.0);
        for (int q = 0; q < gr.neta; ++q)
            for (int p = gr.plo[q] < 0 ? gr.nxi : gr.plo[q]; p <= gr.phi[q]; ++p) {
                if (!gr.in(p, q)) continue;
                int id = gr.idx(p, q);
                double z = gr.z_of[id], zeta = gr.zeta_of[id];
                double acc = 0.0;
                for (int k = 0; k < n2; ++k) {
                    if (ac[c][k].empty()) continue;
                    double co = ac[c][k][id];
                    if (co == 0.0) continue;
                    const ChartGrid& gk = grids[cidx(i, k)];
                    double xik, etak;
                    gk.chart.to_canonical(z, zeta, &xik, &etak);
                    acc += co * bilinear(gk, dG[cidx(i, k)], xik, etak);
                }
                Acal[c][id] = acc;
            }
    }

    void compute_integrands(int c) {
        int j = c % n2;
        const ChartGrid& gr = grids[c];
        double s = gr.chart.s();
        HInt[c].assign(gr.size(), 0.0);
        if (has_J(j)) JInt[c].assign(gr.size(), 0.0);
        for (int id = 0; id < gr.size(); ++id) {
            if (!gr.mask[id]) continue;
            double hi = -0.25 * aD[c][id] * dH[c][id] + gTerm[c][id] * dG[c][id] + (s / 4.0) * Acal[c][id];
            HInt[c][id] = hi;
            if (has_J(j))
                JInt[c][id] = (s / 4.0) * aS[c][id] * dJ[c][id] - 0.25 * aD[c][id] * dH[c][id] +
                              (s / 4.0) * (Acal[c][id] + mu * dG[c][id]);
        }
    }

    void update_chart(int c) {
        int i = c / n2, j = c % n2;
        const ChartGrid& gr = grids[c];
        double s = gr.chart.s();

        FieldData colJ, rowH, colHI, rowJI;
        if (has_J(j)) {
            col_cumint(gr, dJ[c], colJ);
            row_cumint(gr, JInt[c], rowJI);
        } else {
            row_cumint(gr, dH[c], rowH);
        }
        col_cumint(gr, HInt[c], colHI);

        // coupled reads on the eta >= 0 part of the left edge
        std::vector<double> jseg;   // yt * int J_(i,j-n) for right columns
        std::vector<double> fhsrc;  // F_H of (i,j+n) at (eta,eta) for left columns
        if (j >= n && i <= j - n) {
            int src = cidx(i, j - n);
            const ChartGrid& gs = grids[src];
            jseg.assign(gr.neta, 0.0);
            for (int q = gr.q0; q < gr.neta; ++q) {
                double eta = gr.eta(q);
                if (eta > gr.chart.eta_bar() + 1e-12) break;
                jseg[q] = vert_segment(gs, dJ[src], eta, gs.chart.eta_l(eta), eta);
            }
        }
        if (has_J(j) && i <= j) {
            int src = cidx(i, j + n);
            const ChartGrid& gs = grids[src];
            fhsrc.assign(gr.neta, 0.0);
            for (int q = gr.q0; q < gr.neta; ++q) {
                double eta = gr.eta(q);
                if (eta > gr.chart.eta_bar() + 1e-12) break;
                double v = vert_segment(gs, HInt[src], eta, gs.chart.eta_l(eta), eta);
                v += 0.25 * a_sigma_at(i, j + n, eta, eta) * fp.yt *
                     vert_segment(gr, dJ[c], eta, gr.chart.eta_l(eta), eta);
                fhsrc[q] = v;
            }
        }

        nG[c].assign(gr.size(), 0.0);
        nH[c].assign(gr.size(), 0.0);
        if (has_J(j)) nJ[c].assign(gr.size(), 0.0);
        for (int q = 0; q < gr.neta; ++q) {
            double eta = gr.eta(q);
            for (int p = gr.plo[q] < 0 ? gr.nxi : gr.plo[q]; p <= gr.phi[q]; ++p) {
                if (!gr.in(p, q)) continue;
                int id = gr.idx(p, q);
                double vG = 0.0, vH = colHI[id];
                if (has_J(j)) {
                    vG += colJ[id];
                    vH += (s / 4.0) * aS[c][id] * colJ[id];
                    double vJ = rowJI[id];
                    if (i <= j && eta >= 0.0) vJ += fhsrc[q] / fp.yt;
                    nJ[c][id] = vJ;
                } else {
                    vG += rowH[id];
                    vH += (s / 4.0) * aS[c][id] * rowH[id];
                    if (i <= j - n && eta >= 0.0) {
                        vG += fp.yt * jseg[q];
                        vH += 0.25 * aS[c][id] * fp.yt * jseg[q];
                    }
                }
                nG[c][id] = vG;
                nH[c][id] = vH;
            }
        }
    }

    double accumulate_and_measure() {
        double dmax = 0.0;
        for (int c = 0; c < n2 * n2; ++c) {
            const ChartGrid& gr = grids[c];
            if (G[c].empty()) {
                G[c].assign(gr.size(), 0.0);
                H[c].assign(gr.size(), 0.0);
                if (!dJ[c].empty()) J[c].assign(gr.size(), 0.0);
            }
            for (int id = 0; id < gr.size(); ++id) {
                if (!gr.mask[id]) continue;
                G[c][id] += dG[c][id];
                H[c][id] += dH[c][id];
                if (!dJ[c].empty()) J[c][id] += dJ[c][id];
                if (!gr.core[id]) continue;  // ghosts do not drive convergence
                dmax = std::max({dmax, std::abs(dG[c][id]), std::abs(dH[c][id])});
                if (!dJ[c].empty()) dmax = std::max(dmax, std::abs(dJ[c][id]));
            }
        }
        return dmax;
    }

    void sweep() {
        int nc = n2 * n2;
        parallel_for(nc, [&](int c) { compute_Acal(c); });
        parallel_for(nc, [&](int c) { compute_integrands(c); });
        parallel_for(nc, [&](int c) { update_chart(c); });
        for (int c = 0; c < nc; ++c) {
            dG[c].swap(nG[c]);
            dH[c].swap(nH[c]);
            if (has_J(c % n2)) dJ[c].swap(nJ[c]);
        }
    }
};

// d/d_eta of a smooth field at a boundary point, one-sided into the domain.
// The stencil may not cross the eta = 0 seam or the lower boundary; returns
// false when no stencil fits (near corners and within the seam band).
bool eta_deriv_inward(const ChartGrid& g, const FieldData& f, double xi, double eta, double* out) {
    double d = g.h;
    int side = eta >= 0.0 ? +1 : -1;
    double floor_eta = g.chart.eta_l(xi) - 0.25 * g.h;
    if (eta >= 0.0) floor_eta = std::max(floor_eta, 0.0);
    auto rd = [&](double e) { return bilinear(g, f, xi, e, side); };
    if (eta - 2.0 * d >= floor_eta) {
        *out = (3.0 * rd(eta) - 4.0 * rd(eta - d) + rd(eta - 2.0 * d)) / (2.0 * d);
        return true;
    }
    if (eta - d >= floor_eta) {
        *out = (rd(eta) - rd(eta - d)) / d;
        return true;
    }
    return false;
}

// Fill entries that could not be computed from their valid neighbours:
// linear interpolation across interior gaps, extrapolation at the ends.
void fill_invalid(Eigen::VectorXd& v, const std::vector<char>& valid, const std::vector<double>& x) {
    int m = static_cast<int>(valid.size());
    std::vector<int> idx;
    for (int k = 0; k < m; ++k)
        if (valid[k]) idx.push_back(k);
    if (idx.empty() || static_cast<int>(idx.size()) == m) return;
    for (int k = 0; k < m; ++k) {
        if (valid[k]) continue;
        auto it = std::lower_bound(idx.begin(), idx.end(), k);
        int a, b;
        if (it == idx.begin()) {
            a = idx[0];
            b = idx.size() > 1 ? idx[1] : idx[0];
        } else if (it == idx.end()) {
            a = idx.size() > 1 ? idx[idx.size() - 2] : idx.back();
            b = idx.back();
        } else {
            a = *(it - 1);
            b = *it;
        }
        if (a == b) {
            v(k) = v(a);
        } else {
            double t = (x[k] - x[a]) / (x[b] - x[a]);
            v(k) = v(a) + t * (v(b) - v(a));
        }
    }
}

}  // namespace

double BsKernelSolution::K_eval(int i, int j, double z, double zeta) const {
    const BsCanonical& cn = *canon;
    const ChartGrid& gr = cn.grids[cn.cidx(i, j)];
    double xi, eta;
    gr.chart.to_canonical(z, zeta, &xi, &eta);
    // spline evaluation is unreliable where the chart pinches
    if (xi < 3.0 * gr.h || xi > gr.chart.b_plus() - 3.0 * gr.h)
        return bilinear(gr, cn.G[cn.cidx(i, j)], xi, eta) / cn.fp.lambda(j, zeta);
    return cn.sG[cn.cidx(i, j)](xi, eta) / cn.fp.lambda(j, zeta);
}

namespace {

double lerp_vec(const std::vector<double>& x, const Eigen::VectorXd& y, double xq) {
    if (xq <= x.front()) return y(0);
    if (xq >= x.back()) return y(y.size() - 1);
    auto it = std::upper_bound(x.begin(), x.end(), xq);
    Eigen::Index k = it - x.begin();
    double t = (xq - x[k - 1]) / (x[k] - x[k - 1]);
    return y(k - 1) + t * (y(k) - y(k - 1));
}

}  // namespace

double BsKernelSolution::At0_at(int i, int j, double z) const { return lerp_vec(tgrid, At0[cidx(i, j)], z); }
double BsKernelSolution::At1_at(int i, int j, double z) const { return lerp_vec(tgrid, At1[cidx(i, j)], z); }

BsKernelSolution solve_bs(const FoldedPlant& fp, double mu, const ArtificialBC& gf, const BsOptions& opts) {
    if (!(opts.tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
    Solver sv(fp, mu, gf, opts);
    int n = fp.n, n2 = 2 * n;

    // growth-bound diagnostics: worst ratio at the point of minimal difference
    double gamma_lo = 0.0;
    {
        auto zg = linspace(0.0, 1.0, 401);
        for (int i = 0; i < n2; ++i)
            for (int j = 0; j < i; ++j) {
                double best = std::numeric_limits<double>::infinity(), zbest = 0.0;
                for (double z : zg) {
                    double d = std::abs(fp.lambda(i, z) - fp.lambda(j, z));
                    if (d < best) {
                        best = d;
                        zbest = z;
                    }
                }
                gamma_lo = std::max(gamma_lo, std::sqrt(fp.lambda(i, zbest) / fp.lambda(j, zbest)));
            }
    }
    double gamma = 0.5 * (1.0 + gamma_lo);
    if (!(gamma_lo < 1.0)) throw NoConvergence("backstepping kernel", 0.0, gamma_lo, gamma);

    BsKernelSolution sol;
    sol.n = n;
    sol.mu = mu;
    sol.y0 = fp.y0;
    sol.yt = fp.yt;
    sol.gamma_lo = gamma_lo;
    sol.gamma = gamma;

    sv.init_level0();
    double delta = sv.accumulate_and_measure();
    sol.sweep_log.push_back(delta);
    int levels = 1;
    while (delta > opts.tol) {
        if (levels >= opts.max_iter) throw NoConvergence("backstepping kernel", delta, gamma_lo, gamma);
        sv.sweep();
        delta = sv.accumulate_and_measure();
        sol.sweep_log.push_back(delta);
        ++levels;
    }
    sol.iterations = levels;

    // canonical record with smooth evaluators
    auto canon = std::make_shared<BsCanonical>();
    canon->n2 = n2;
    canon->grids = sv.grids;
    canon->G = sv.G;
    canon->H = sv.H;
    canon->J = sv.J;
    canon->fp = fp;
    canon->sG.resize(n2 * n2);
    canon->sH.resize(n2 * n2);
    canon->sJ.resize(n2 * n2);
    for (int c = 0; c < n2 * n2; ++c) {
        int i = c / n2, j = c % n2;
        const ChartGrid& gr = canon->grids[c];  // evaluators must outlive the solver
        std::vector<double> bnd(gr.nxi, 0.0);
        if (i == j)
            for (int p = 0; p < gr.nxi; ++p) bnd[p] = sv.c0(i, gr.xi(p));
        canon->sG[c] = SmoothField(gr, canon->G[c], &bnd);
        canon->sH[c] = SmoothField(gr, canon->H[c]);
        if (!canon->J[c].empty()) canon->sJ[c] = SmoothField(gr, canon->J[c]);
    }
    sol.canon = canon;

    // physical kernel on the triangular grid; diagonal entries come from
    // their closed-form condition and off-diagonal diagonals vanish
    sol.zgrid = linspace(0.0, 1.0, opts.n_z);
    sol.K.assign(n2 * n2, Eigen::MatrixXd::Zero(opts.n_z, opts.n_z));
    parallel_for(n2 * n2, [&](int c) {
        int i = c / n2, j = c % n2;
        for (int p = 0; p < opts.n_z; ++p) {
            for (int q = 0; q < p; ++q) sol.K[c](p, q) = sol.K_eval(i, j, sol.zgrid[p], sol.zgrid[q]);
            double z = sol.zgrid[p];
            sol.K[c](p, p) =
                i == j ? -lerp_table(sv.iz, sv.Idiag[i], z) / std::sqrt(fp.lambda(i, z)) : 0.0;
        }
    });
    sol.K11.resize(n2, n2);
    for (int i = 0; i < n2; ++i)
        for (int j = 0; j < n2; ++j) sol.K11(i, j) = sol.K[sol.cidx(i, j)](opts.n_z - 1, opts.n_z - 1);

    // K_z(1, zeta)
    sol.Kz1.assign(n2 * n2, Eigen::VectorXd::Zero(opts.n_z));
    double hz = sol.zgrid[1] - sol.zgrid[0];
    parallel_for(n2 * n2, [&](int c) {
        int i = c / n2, j = c % n2;
        const ChartGrid& gr = sv.grids[c];
        double sli = std::sqrt(fp.lambda(i, 1.0));
        for (int q = 0; q < opts.n_z; ++q) {
            double zeta = sol.zgrid[q];
            double lj = fp.lambda(j, zeta);
            if (j < n) {
                double xi, eta;
                gr.chart.to_canonical(1.0, zeta, &xi, &eta);
                double sH = bilinear(gr, canon->H[c], xi, eta), sJ = bilinear(gr, canon->J[c], xi, eta);
                sol.Kz1[c](q) = (gr.chart.s() * sH + sJ) / (sli * lj);
            } else if (q + 2 < opts.n_z) {
                double k0 = sol.K[c](opts.n_z - 1, q);
                double k1 = sol.K_eval(i, j, 1.0 - hz, zeta);
                double k2 = sol.K_eval(i, j, 1.0 - 2.0 * hz, zeta);
                sol.Kz1[c](q) = (3.0 * k0 - 4.0 * k1 + k2) / (2.0 * hz);
            } else {
                // z-stencil leaves the triangle: recover G_eta one-sided
                double xi, eta;
                gr.chart.to_canonical(1.0, zeta, &xi, &eta);
                double sH = bilinear(gr, canon->H[c], xi, eta);
                double geta;
                if (eta_deriv_inward(gr, canon->G[c], xi, eta, &geta)) {
                    sol.Kz1[c](q) = (gr.chart.s() * sH + geta) / (sli * lj);
                } else if (q > 0) {
                    sol.Kz1[c](q) = 2.0 * sol.Kz1[c](q - 1) - sol.Kz1[c](q - 2 >= 0 ? q - 2 : q - 1);
                }
            }
        }
    });

    // traces at zeta = 0 and the well-posedness matrices. Kernel values on
    // the coupling edge come from the boundary data plus path integrals of
    // the stored derivative fields, which stays accurate into the corners.
    auto path_G = [&](int i, int j, double xi0, double eta0) -> double {
        int c = i * n2 + j;
        const ChartGrid& gr = canon->grids[c];
        if (j < n) {
            double base = i == j ? sv.c0(i, xi0) : 0.0;
            return base + vert_segment(gr, canon->J[c], xi0, gr.chart.eta_l(xi0), eta0);
        }
        double edge = 0.0;
        if (i <= j - n) {
            int cl = i * n2 + (j - n);
            const ChartGrid& gl = canon->grids[cl];
            double base = i == j - n ? sv.c0(i, eta0) : 0.0;
            edge = fp.yt * (base + vert_segment(gl, canon->J[cl], eta0, gl.chart.eta_l(eta0), eta0));
        } else if (eta0 >= 0.0) {
            edge = gf.gf(i, j, eta0);
        }
        return edge + horiz_segment(gr, canon->H[c], eta0, gr.chart.xi_l(eta0), xi0);
    };
    auto edge_G = [&](int i, int j, double z) -> double {
        const ChartGrid& gr = canon->grids[i * n2 + j];
        double xi0, eta0;
        gr.chart.to_canonical(z, 0.0, &xi0, &eta0);
        return path_G(i, j, xi0, eta0);
    };
    int nt = 201;
    sol.tgrid = linspace(0.0, 1.0, nt);
    sol.Ktr0.assign(n2 * n2, Eigen::VectorXd::Zero(nt));
    sol.Kztr0.assign(n2 * n2, Eigen::VectorXd::Zero(nt));
    parallel_for(n2 * n2, [&](int c) {
        int i = c / n2, j = c % n2;
        const ChartGrid& gr = sv.grids[c];
        double lj0 = fp.lambda(j, 0.0), ljd0 = fp.lambda_d(j, 0.0);
        for (int k = 0; k < nt; ++k) sol.Ktr0[c](k) = edge_G(i, j, sol.tgrid[k]) / lj0;
        if (j < n) {
            for (int k = 0; k < nt; ++k) {
                double z = sol.tgrid[k], xi, eta;
                gr.chart.to_canonical(z, 0.0, &xi, &eta);
                double sH = bilinear(gr, canon->H[c], xi, eta);
                double sJ = bilinear(gr, canon->J[c], xi, eta, eta >= 0.0 ? +1 : -1);
                double vz = (gr.chart.s() * sH - sJ) / std::sqrt(lj0);
                sol.Kztr0[c](k) = (vz - ljd0 * sol.Ktr0[c](k)) / lj0;
            }
        } else if (i <= j - n) {
            // G_eta on the coupling edge follows from differentiating the
            // value coupling with the left partner chart
            int cl = i * n2 + (j - n);
            const ChartGrid& gl = sv.grids[cl];
            for (int k = 0; k < nt; ++k) {
                double z = sol.tgrid[k], xi, eta, xil, etal;
                gr.chart.to_canonical(z, 0.0, &xi, &eta);
                gl.chart.to_canonical(z, 0.0, &xil, &etal);
                double h2 = bilinear(gr, canon->H[c], xi, eta);
                double h1 = bilinear(gl, canon->H[cl], xil, etal);
                double j1 = bilinear(gl, canon->J[cl], xil, etal, +1);
                double geta = fp.yt * (h1 + j1) - h2;
                double vz = (h2 - geta) / std::sqrt(lj0);  // s = +1 here
                sol.Kztr0[c](k) = (vz - ljd0 * sol.Ktr0[c](k)) / lj0;
            }
        } else if (i <= j) {
            // Dirichlet data on the coupling edge: G(eta,eta) = g_f(eta)
            for (int k = 0; k < nt; ++k) {
                double z = sol.tgrid[k], xi, eta;
                gr.chart.to_canonical(z, 0.0, &xi, &eta);
                double h2 = bilinear(gr, canon->H[c], xi, eta);
                double d = 1e-5;
                double gfd = (gf.gf(i, j, eta + d) - gf.gf(i, j, std::max(eta - d, 0.0))) /
                             (d + std::min(eta, d));
                double geta = gfd - h2;
                double vz = (h2 - geta) / std::sqrt(lj0);
                sol.Kztr0[c](k) = (vz - ljd0 * sol.Ktr0[c](k)) / lj0;
            }
        } else {
            // the zeta = 0 image carries no data for these components:
            // recover G_eta one-sided in eta and bridge the seam band
            std::vector<char> valid(nt, 0);
            for (int k = 0; k < nt; ++k) {
                double z = sol.tgrid[k], xi, eta;
                gr.chart.to_canonical(z, 0.0, &xi, &eta);
                double sH = bilinear(gr, canon->H[c], xi, eta);
                double geta;
                if (!eta_deriv_inward(gr, canon->G[c], xi, eta, &geta)) continue;
                valid[k] = 1;
                double vz = (gr.chart.s() * sH - geta) / std::sqrt(lj0);
                sol.Kztr0[c](k) = (vz - ljd0 * sol.Ktr0[c](k)) / lj0;
            }
            fill_invalid(sol.Kztr0[c], valid, sol.tgrid);
        }
    });

    // the zeta = 0 column and z = 1 row of the resampled kernel come from
    // the boundary data and path integrals, like the traces
    for (int c = 0; c < n2 * n2; ++c) {
        int i = c / n2, j = c % n2;
        for (int p = 1; p < opts.n_z; ++p) {
            int k = static_cast<int>(std::lround(sol.zgrid[p] * (nt - 1)));
            sol.K[c](p, 0) = sol.Ktr0[c](k);
        }
        const ChartGrid& gr = canon->grids[c];
        for (int q = 1; q + 1 < opts.n_z; ++q) {
            double zeta = sol.zgrid[q];
            double xi0, eta0;
            gr.chart.to_canonical(1.0, zeta, &xi0, &eta0);
            sol.K[c](opts.n_z - 1, q) = path_G(i, j, xi0, eta0) / fp.lambda(j, zeta);
        }
    }

    sol.At0.assign(n2 * n2, Eigen::VectorXd::Zero(nt));
    sol.At1.assign(n2 * n2, Eigen::VectorXd::Zero(nt));
    for (int i = 0; i < n2; ++i)
        for (int j = 0; j < n2; ++j) {
            if (i <= j) continue;
            bool left = j < n;
            if (left && i > j + n) continue;  // covered through the coupled right column
            int other = left ? j + n : j - n;
            double lj0 = fp.lambda(j, 0.0), ljd0 = fp.lambda_d(j, 0.0);
            double lo0 = fp.lambda(other, 0.0), lod0 = fp.lambda_d(other, 0.0);
            int c = i * n2 + j, co = i * n2 + other;
            for (int k = 0; k < nt; ++k) {
                sol.At0[c](k) = lj0 * sol.Kztr0[c](k) + ljd0 * sol.Ktr0[c](k) + lo0 * sol.Kztr0[co](k) +
                                lod0 * sol.Ktr0[co](k);
                double w = left ? 1.0 / fp.yt : fp.yt;
                sol.At1[c](k) = -lj0 * sol.Ktr0[c](k) + w * lo0 * sol.Ktr0[co](k);
            }
        }

    return sol;
}

double BsResidualReport::max_all() const {
    return std::max({pde, diag_trace, offdiag_diag, corner, fold_bc1, fold_bc2});
}

BsResidualReport bs_residuals(const BsKernelSolution& sol, const FoldedPlant& fp, double mu) {
    BsResidualReport rep;
    int n = fp.n, n2 = 2 * n;
    const double dlt = 0.01;
    auto zg = linspace(0.0, 1.0, 51);

    // PDE residual on interior canonical nodes: second differences of the
    // kernel values mapped to physical derivatives by the chain rule. The
    // kernel is only piecewise smooth, so stencils keep clear of the
    // characteristic seam and the domain boundary.
    const BsCanonical& cn = *sol.canon;
    for (int i = 0; i < n2; ++i)
        for (int j = 0; j < n2; ++j) {
            int c = sol.cidx(i, j);
            const ChartGrid& gr = cn.grids[c];
            double s = gr.chart.s();
            for (int q = 1; q + 1 < gr.neta; ++q) {
                if (std::abs(gr.eta(q)) <= 1.5 * gr.h) continue;
                for (int p = 1; p + 1 < gr.nxi; ++p) {
                    bool ok = true;
                    for (int dq = -1; dq <= 1 && ok; ++dq)
                        for (int dp = -1; dp <= 1 && ok; ++dp)
                            if (!gr.core[gr.idx(p + dp, q + dq)]) ok = false;
                    if (!ok) continue;
                    auto g = [&](int pp, int qq) { return cn.G[c][gr.idx(pp, qq)]; };
                    double h2 = gr.h * gr.h;
                    double gxx = (g(p + 1, q) - 2.0 * g(p, q) + g(p - 1, q)) / h2;
                    double gee = (g(p, q + 1) - 2.0 * g(p, q) + g(p, q - 1)) / h2;
                    double gxe = (g(p + 1, q + 1) - g(p + 1, q - 1) - g(p - 1, q + 1) + g(p - 1, q - 1)) /
                                 (4.0 * h2);
                    double gx = (g(p + 1, q) - g(p - 1, q)) / (2.0 * gr.h);
                    double ge = (g(p, q + 1) - g(p, q - 1)) / (2.0 * gr.h);
                    int id = gr.idx(p, q);
                    double z = gr.z_of[id], zeta = gr.zeta_of[id];
                    double li = fp.lambda(i, z), lid = fp.lambda_d(i, z);
                    double lj = fp.lambda(j, zeta), ljd = fp.lambda_d(j, zeta);
                    double kzz = ((gxx + 2.0 * s * gxe + gee) / li -
                                  (s * gx + ge) * lid / (2.0 * std::pow(li, 1.5))) /
                                 lj;
                    double vzz = (gxx - 2.0 * s * gxe + gee) / lj -
                                 (s * gx - ge) * ljd / (2.0 * std::pow(lj, 1.5));
                    double rhs = mu * g(p, q) / lj;
                    for (int k = 0; k < n2; ++k) {
                        if ((k < n) != (j < n)) continue;
                        double xik, etak;
                        cn.grids[sol.cidx(i, k)].chart.to_canonical(z, zeta, &xik, &etak);
                        rhs += bilinear(cn.grids[sol.cidx(i, k)], cn.G[sol.cidx(i, k)], xik, etak) /
                               fp.lambda(k, zeta) * fp.A(k, j, zeta);
                    }
                    rep.pde = std::max(rep.pde, std::abs(li * kzz - vzz - rhs));
                }
            }
            // diagonal conditions
            for (double z : zg) {
                double kd = sol.K_eval(i, j, z, z);
                if (i == j) {
                    std::vector<double> zz = linspace(0.0, z, 201), f(201);
                    for (int k = 0; k < 201; ++k)
                        f[k] = (fp.A(i, i, zz[k]) + mu) / (2.0 * std::sqrt(fp.lambda(i, zz[k]) * fp.lambda(i, z)));
                    rep.diag_trace = std::max(rep.diag_trace, std::abs(kd + trapz(zz, f)));
                } else {
                    rep.offdiag_diag = std::max(rep.offdiag_diag, std::abs(kd));
                }
            }
            rep.corner = std::max(rep.corner, std::abs(sol.K_eval(i, j, 0.0, 0.0)));
        }

    // folding BCs with the assembled well-posedness matrices
    for (int i = 0; i < n2; ++i)
        for (int j = 0; j < n; ++j) {
            int c = i * n2 + j, co = i * n2 + j + n;
            double lj0 = fp.lambda(j, 0.0), ljd0 = fp.lambda_d(j, 0.0);
            double lo0 = fp.lambda(j + n, 0.0), lod0 = fp.lambda_d(j + n, 0.0);
            for (std::size_t k = 0; k < sol.tgrid.size(); ++k) {
                double r1 = -fp.yt * (sol.Ktr0[c](k) * lj0 + sol.At1[c](k)) + sol.Ktr0[co](k) * lo0 +
                            sol.At1[co](k);
                double r2 = sol.Kztr0[c](k) * lj0 + sol.Ktr0[c](k) * ljd0 - sol.At0[c](k) - sol.At0[co](k) +
                            sol.Kztr0[co](k) * lo0 + sol.Ktr0[co](k) * lod0;
                rep.fold_bc1 = std::max(rep.fold_bc1, std::abs(r1));
                rep.fold_bc2 = std::max(rep.fold_bc2, std::abs(r2));
            }
        }
    return rep;
}

}  // namespace backstep
