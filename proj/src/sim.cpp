#include "backstep/sim.hpp"

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "backstep/numerics.hpp"

namespace backstep {

double weighted_norm(const PlantSpec& plant, const std::vector<double>& grid,
                     const Eigen::Ref<const Eigen::MatrixXd>& w) {
    std::vector<double> f(grid.size(), 0.0);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        double acc = 0.0;
        for (int i = 0; i < plant.n; ++i) acc += w(i, k) * w(i, k) / plant.lambda[i].eval(grid[k]);
        f[k] = acc;
    }
    return std::sqrt(trapz(grid, f));
}

Eigen::MatrixXd sample_ic(const PlantSpec& plant, const std::vector<double>& grid) {
    Eigen::MatrixXd w(plant.n, grid.size());
    for (int i = 0; i < plant.n; ++i)
        for (std::size_t k = 0; k < grid.size(); ++k) w(i, k) = plant.ic[i].eval(grid[k]);
    return w;
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

// Nonuniform central first-derivative weights at an interior node.
void d1_weights(double hl, double hr, double* wl, double* wc, double* wr) {
    *wl = -hr / (hl * (hl + hr));
    *wc = (hr - hl) / (hl * hr);
    *wr = hl / (hr * (hl + hr));
}

// Nonuniform 3-point Laplacian weights.
void d2_weights(double hl, double hr, double* wl, double* wc, double* wr) {
    *wl = 2.0 / (hl * (hl + hr));
    *wc = -2.0 / (hl * hr);
    *wr = 2.0 / (hr * (hl + hr));
}

struct Stepper {
    const PlantSpec& plant;
    const std::vector<double>& grid;
    int n, nodes, dim;
    Eigen::SparseMatrix<double> Aminus, Aplus;  // I -/+ dt/2 L
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    double bc0_coef = 0.0, bc1_coef = 0.0;  // ghost-node input coefficients

    // target-mode data
    const TargetData* target = nullptr;
    std::vector<Eigen::MatrixXd> A0node, A1node;
    int fold = 0;
    double dw_l = 0, dw_c = 0, dw_r = 0;  // slope weights at the fold

    Stepper(const PlantSpec& p, const std::vector<double>& g, double dt, const TargetData* td)
        : plant(p), grid(g), n(p.n), nodes(static_cast<int>(g.size())), dim(n * nodes), target(td) {
        std::vector<Eigen::Triplet<double>> trip;
        auto add = [&](int k, int i, int k2, int j, double v) { trip.emplace_back(k * n + i, k2 * n + j, v); };

        double h0 = grid[1] - grid[0];
        double h1 = grid[nodes - 1] - grid[nodes - 2];
        for (int k = 0; k < nodes; ++k) {
            double z = grid[k];
            for (int i = 0; i < n; ++i) {
                double lam = plant.lambda[i].eval(z);
                if (k == 0) {
                    add(k, i, 1, i, 2.0 * lam / (h0 * h0));
                    add(k, i, 0, i, -2.0 * lam / (h0 * h0));
                    if (!target)
                        for (int j = 0; j < n; ++j) add(k, i, 0, j, -2.0 * lam / h0 * plant.B0(i, j));
                } else if (k == nodes - 1) {
                    add(k, i, k - 1, i, 2.0 * lam / (h1 * h1));
                    add(k, i, k, i, -2.0 * lam / (h1 * h1));
                    if (!target)
                        for (int j = 0; j < n; ++j) add(k, i, k, j, 2.0 * lam / h1 * plant.B1(i, j));
                } else {
                    double hl = grid[k] - grid[k - 1], hr = grid[k + 1] - grid[k];
                    double wl, wc, wr;
                    d2_weights(hl, hr, &wl, &wc, &wr);
                    add(k, i, k - 1, i, lam * wl);
                    add(k, i, k, i, lam * wc);
                    add(k, i, k + 1, i, lam * wr);
                }
                if (target) {
                    add(k, i, k, i, -target->mu);
                } else {
                    for (int j = 0; j < n; ++j) add(k, i, k, j, plant.A[i][j].eval(z));
                }
            }
        }
        Eigen::SparseMatrix<double> L(dim, dim);
        L.setFromTriplets(trip.begin(), trip.end());
        Eigen::SparseMatrix<double> I(dim, dim);
        I.setIdentity();
        Aminus = I - (dt / 2.0) * L;
        Aplus = I + (dt / 2.0) * L;
        Aminus.makeCompressed();
        lu.compute(Aminus);
        if (lu.info() != Eigen::Success) throw std::runtime_error("time-stepper factorization failed");
        bc0_coef = 2.0 / h0;
        bc1_coef = 2.0 / h1;

        if (target) {
            fold = (nodes - 1) / 2;
            double hl = grid[fold] - grid[fold - 1], hr = grid[fold + 1] - grid[fold];
            d1_weights(hl, hr, &dw_l, &dw_c, &dw_r);
            A0node.resize(nodes);
            A1node.resize(nodes);
            for (int k = 0; k < nodes; ++k) {
                Eigen::MatrixXd A0(n, n), A1(n, n);
                double zh = grid[k];
                bool left = k < fold;  // exact fold node uses the right branch
                double zz = left ? (target->y0 - zh) / target->y0 : (zh - target->y0) / (1.0 - target->y0);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) {
                        int c = target->cidx(i, j);
                        if (left) {
                            A0(i, j) = lerp_vec(target->tgrid, target->A0l[c], zz);
                            A1(i, j) = -target->y0 * lerp_vec(target->tgrid, target->A1l[c], zz);
                        } else {
                            A0(i, j) = lerp_vec(target->tgrid, target->A0r[c], zz);
                            A1(i, j) = (1.0 - target->y0) * lerp_vec(target->tgrid, target->A1r[c], zz);
                        }
                    }
                A0node[k] = A0;
                A1node[k] = A1;
            }
        }
    }

    // one CN step with the explicit input/coupling vector from the previous state
    void step(Eigen::MatrixXd& w, const Eigen::VectorXd& u0, const Eigen::VectorXd& u1, double dt) {
        Eigen::Map<const Eigen::VectorXd> flat(w.data(), dim);
        Eigen::VectorXd rhs = Aplus * flat;
        if (!target) {
            for (int i = 0; i < n; ++i) {
                double lam0 = plant.lambda[i].eval(grid.front());
                double lam1 = plant.lambda[i].eval(grid.back());
                rhs(i) += dt * (-lam0 * bc0_coef * u0(i));
                rhs((nodes - 1) * n + i) += dt * (lam1 * bc1_coef * u1(i));
            }
        } else {
            Eigen::VectorXd wf = w.col(fold);
            Eigen::VectorXd ws = dw_l * w.col(fold - 1) + dw_c * w.col(fold) + dw_r * w.col(fold + 1);
            for (int k = 0; k < nodes; ++k) {
                Eigen::VectorXd c = -A0node[k] * wf - A1node[k] * ws;
                for (int i = 0; i < n; ++i) rhs(k * n + i) += dt * c(i);
            }
        }
        Eigen::VectorXd out = lu.solve(rhs);
        w = Eigen::Map<const Eigen::MatrixXd>(out.data(), n, nodes);
    }
};

Trajectory run(const PlantSpec& plant, const std::vector<double>& grid, const FeedbackGains* gains,
               const TargetData* target, const SimConfig& cfg, const Eigen::MatrixXd* ic_override) {
    Trajectory tr;
    int n = plant.n, nodes = static_cast<int>(grid.size());
    Eigen::MatrixXd w = ic_override ? *ic_override : sample_ic(plant, grid);
    if (w.rows() != n || w.cols() != nodes) throw std::invalid_argument("initial condition shape mismatch");

    Stepper st(plant, grid, cfg.dt, target);
    int steps = static_cast<int>(std::llround(cfg.T / cfg.dt));
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);

    auto record = [&](double t, const Eigen::VectorXd& u0, const Eigen::VectorXd& u1) {
        tr.t.push_back(t);
        tr.w.push_back(w);
        tr.u0.push_back(u0);
        tr.u1.push_back(u1);
        tr.norm.push_back(weighted_norm(plant, grid, w));
    };

    for (int k = 0; k <= steps; ++k) {
        double t = k * cfg.dt;
        Eigen::VectorXd u0 = zero, u1 = zero;
        if (gains) {
            auto uu = gains->control(w);
            u0 = uu.first;
            u1 = uu.second;
        }
        if (k % cfg.output_stride == 0 || k == steps) {
            record(t, u0, u1);
            if (tr.norm.back() > 1e9) {  // blow-up guard
                tr.blew_up = true;
                tr.blowup_time = t;
                break;
            }
        }
        if (k == steps) break;
        st.step(w, u0, u1, cfg.dt);
    }
    return tr;
}

}  // namespace

Trajectory simulate(const PlantSpec& plant, const std::vector<double>& grid, const FeedbackGains* gains,
                    const SimConfig& cfg, const Eigen::MatrixXd* ic_override) {
    return run(plant, grid, gains, nullptr, cfg, ic_override);
}

Trajectory simulate_target(const PlantSpec& plant, const std::vector<double>& grid, const TargetData& td,
                           const SimConfig& cfg, const Eigen::MatrixXd& ic) {
    return run(plant, grid, nullptr, &td, cfg, &ic);
}

TargetData make_target_data(const BsKernelSolution& bs, const DecKernelSolution& dec, const FoldedPlant& fp) {
    TargetData td;
    td.mu = bs.mu;
    td.y0 = fp.y0;
    td.n = fp.n;
    td.tgrid = bs.tgrid;
    int n = fp.n;
    td.A0l.resize(n * n);
    td.A1l.resize(n * n);
    td.A0r.resize(n * n);
    td.A1r.resize(n * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            td.A0l[td.cidx(i, j)] = bs.At0[bs.cidx(i, j)];
            td.A1l[td.cidx(i, j)] = bs.At1[bs.cidx(i, j)];
            td.A0r[td.cidx(i, j)] = dec.Ac0r[dec.cidx(i, j)];
            td.A1r[td.cidx(i, j)] = dec.Ac1r[dec.cidx(i, j)];
        }
    return td;
}

KernelTables tables_from(const BsKernelSolution& bs, const DecKernelSolution& dec) {
    KernelTables kt;
    kt.n = bs.n;
    kt.y0 = bs.y0;
    kt.yt = bs.yt;
    kt.zgrid = bs.zgrid;
    kt.K = bs.K;
    kt.P = dec.P;
    kt.Q = dec.Q;
    return kt;
}

namespace {

// Bilinear read of a stored kernel table.
double table_read(const std::vector<double>& grid, const Eigen::MatrixXd& M, double z, double zeta) {
    int nz = static_cast<int>(grid.size());
    double h = grid[1] - grid[0];
    double uz = std::clamp(z, 0.0, 1.0) / h, uq = std::clamp(zeta, 0.0, 1.0) / h;
    int p = std::min(static_cast<int>(uz), nz - 2), q = std::min(static_cast<int>(uq), nz - 2);
    double tz = uz - p, tq = uq - q;
    double v00 = M(p, q), v01 = M(p, q + 1), v10 = M(p + 1, q), v11 = M(p + 1, q + 1);
    return (1 - tz) * ((1 - tq) * v00 + tq * v01) + tz * ((1 - tq) * v10 + tq * v11);
}

// Triangle tables are only filled for zeta <= z; mirror reads onto the
// nearest valid entry (queries outside occur only within one cell).
double tri_read(const std::vector<double>& grid, const Eigen::MatrixXd& M, double z, double zeta) {
    return table_read(grid, M, z, std::min(zeta, z));
}

}  // namespace

Eigen::MatrixXd transform_state(const Eigen::MatrixXd& w, const std::vector<double>& grid,
                                const KernelTables& kt, const FoldedPlant& fp) {
    int n = kt.n, n2 = 2 * n;
    int m = (static_cast<int>(grid.size()) - 1) / 2;
    auto zg = linspace(0.0, 1.0, m + 1);
    StateField ws{grid, w};
    StateField x = fold_state(ws, fp, zg);

    // backstepping transformation
    Eigen::MatrixXd xt(n2, m + 1);
    double h = zg[1] - zg[0];
    for (int p = 0; p <= m; ++p) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(n2);
        for (int q = 0; q <= p; ++q) {
            Eigen::MatrixXd Kpq(n2, n2);
            for (int i = 0; i < n2; ++i)
                for (int j = 0; j < n2; ++j) Kpq(i, j) = tri_read(kt.zgrid, kt.K[i * n2 + j], zg[p], zg[q]);
            double wq = (q == 0 || q == p) ? 0.5 * h : h;
            if (p == 0) wq = 0.0;
            acc += wq * (Kpq * x.values.col(q));
        }
        xt.col(p) = x.values.col(p) - acc;
    }

    // decoupling transformation on the right block
    Eigen::MatrixXd xbr(n, m + 1);
    for (int p = 0; p <= m; ++p) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
        for (int q = 0; q <= p; ++q) {
            Eigen::MatrixXd Qpq(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) Qpq(i, j) = tri_read(kt.zgrid, kt.Q[i * n + j], zg[p], zg[q]);
            double wq = (q == 0 || q == p) ? 0.5 * h : h;
            if (p == 0) wq = 0.0;
            acc += wq * (Qpq * xt.bottomRows(n).col(q));
        }
        for (int q = 0; q <= m; ++q) {
            Eigen::MatrixXd Ppq(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) Ppq(i, j) = table_read(kt.zgrid, kt.P[i * n + j], zg[p], zg[q]);
            double wq = (q == 0 || q == m) ? 0.5 * h : h;
            acc += wq * (Ppq * xt.topRows(n).col(q));
        }
        xbr.col(p) = xt.bottomRows(n).col(p) - acc;
    }

    Eigen::MatrixXd xfin(n2, m + 1);
    xfin.topRows(n) = xt.topRows(n);
    xfin.bottomRows(n) = xbr;
    StateField xf{zg, xfin};
    StateField back = unfold_state(xf, fp, grid);
    return back.values;
}

double verify_transforms(const Trajectory& closed, const Trajectory& target,
                         const std::vector<double>& grid, const KernelTables& kt, const FoldedPlant& fp) {
    std::size_t stamps = std::min(closed.w.size(), target.w.size());
    double dev = 0.0;
    for (std::size_t s = 0; s < stamps; ++s) {
        Eigen::MatrixXd wt = transform_state(closed.w[s], grid, kt, fp);
        dev = std::max(dev, (wt - target.w[s]).cwiseAbs().maxCoeff());
    }
    return dev;
}

DecayFit fit_decay(const Trajectory& tr) {
    if (tr.t.size() < 10 || !(tr.norm.front() > 0.0))
        throw std::invalid_argument("trajectory unfit for decay estimation");
    double T = tr.t.back();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int m = 0;
    for (std::size_t k = 0; k < tr.t.size(); ++k) {
        if (tr.t[k] < 0.1 * T || !(tr.norm[k] > 0.0)) continue;
        double x = tr.t[k], y = std::log(tr.norm[k] / tr.norm.front());
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++m;
    }
    DecayFit fit;
    fit.rate = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    double b = (sy - fit.rate * sx) / m;
    double rss = 0.0;
    fit.prefactor = 0.0;
    for (std::size_t k = 0; k < tr.t.size(); ++k) {
        double ratio = tr.norm[k] / tr.norm.front();
        fit.prefactor = std::max(fit.prefactor, ratio / std::exp(fit.rate * tr.t[k]));
        if (tr.t[k] < 0.1 * T || !(ratio > 0.0)) continue;
        double e = std::log(ratio) - (fit.rate * tr.t[k] + b);
        rss += e * e;
    }
    fit.residual = std::sqrt(rss / std::max(m, 1));
    return fit;
}

}  // namespace backstep
