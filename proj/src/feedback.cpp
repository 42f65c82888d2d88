#include "backstep/feedback.hpp"

#include <stdexcept>

#include "backstep/numerics.hpp"

namespace backstep {

namespace {

// Linear interpolation of one gain entry over the kernel grid.
double interp_col(const std::vector<double>& grid, const Eigen::VectorXd& vals, double z) {
    if (z <= grid.front()) return vals(0);
    if (z >= grid.back()) return vals(vals.size() - 1);
    auto it = std::upper_bound(grid.begin(), grid.end(), z);
    Eigen::Index k = it - grid.begin();
    double t = (z - grid[k - 1]) / (grid[k] - grid[k - 1]);
    return vals(k - 1) + t * (vals(k) - vals(k - 1));
}

}  // namespace

FeedbackGains assemble_gains(const BsKernelSolution& bs, const DecKernelSolution& dec, const FoldedPlant& fp,
                             int nodes_per_side) {
    if (bs.zgrid.size() != dec.zgrid.size())
        throw std::invalid_argument("kernel grids of the two solutions do not match");
    int n = fp.n, n2 = 2 * n;
    int nz = static_cast<int>(bs.zgrid.size());

    FeedbackGains g;
    g.n = n;
    g.y0 = fp.y0;
    g.yt = fp.yt;
    g.B0 = fp.plant().B0;
    g.B1 = fp.plant().B1;
    g.R0 = bs.K11.leftCols(n);
    g.R1 = bs.K11.rightCols(n);

    // Rtf(zeta) = [P_z(1,.) Q_z(1,.)], then the Volterra correction
    // Rcheck(zeta) = Rtf(zeta) - int_zeta^1 Rtf(z) K(z,zeta) dz
    std::vector<Eigen::MatrixXd> Rtf(nz, Eigen::MatrixXd::Zero(n, n2));
    for (int q = 0; q < nz; ++q)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n2; ++j)
                Rtf[q](i, j) = j < n ? dec.Pz1[dec.cidx(i, j)](q) : dec.Qz1[dec.cidx(i, j - n)](q);

    double hz = bs.zgrid[1] - bs.zgrid[0];
    std::vector<Eigen::MatrixXd> Rf(nz, Eigen::MatrixXd::Zero(n2, n2));
    for (int q = 0; q < nz; ++q) {
        Eigen::MatrixXd corr = Eigen::MatrixXd::Zero(n, n2);
        for (int p = q; p < nz; ++p) {
            Eigen::MatrixXd Kzp(n2, n2);
            for (int i = 0; i < n2; ++i)
                for (int j = 0; j < n2; ++j) Kzp(i, j) = bs.K[bs.cidx(i, j)](p, q);
            double w = (p == q || p == nz - 1) ? 0.5 * hz : hz;
            if (q == nz - 1) w = 0.0;
            corr += w * (Rtf[p] * Kzp);
        }
        Eigen::MatrixXd Rcheck = Rtf[q] - corr;
        for (int i = 0; i < n2; ++i)
            for (int j = 0; j < n2; ++j) Rf[q](i, j) = bs.Kz1[bs.cidx(i, j)](q);
        Rf[q].bottomRows(n) += Rcheck;
    }

    // map to the original coordinate: R entries live on a fold-aligned grid
    int m = nodes_per_side;
    g.grid = make_orig_grid(fp.y0, m);
    g.Rleft.assign(m + 1, Eigen::MatrixXd::Zero(n2, n));
    g.Rright.assign(m + 1, Eigen::MatrixXd::Zero(n2, n));
    // per-entry columns of Rf over zeta for interpolation
    auto rf_entry = [&](int i, int j, double z) {
        Eigen::VectorXd col(nz);
        for (int q = 0; q < nz; ++q) col(q) = Rf[q](i, j);
        return interp_col(bs.zgrid, col, z);
    };
    for (int k = 0; k <= m; ++k) {
        double zh = g.grid[k];
        double z = (fp.y0 - zh) / fp.y0;
        for (int i = 0; i < n2; ++i)
            for (int j = 0; j < n; ++j) g.Rleft[k](i, j) = rf_entry(i, j, z) / fp.y0;
    }
    for (int k = 0; k <= m; ++k) {
        double zh = g.grid[m + k];
        double z = (zh - fp.y0) / (1.0 - fp.y0);
        for (int i = 0; i < n2; ++i)
            for (int j = 0; j < n; ++j) g.Rright[k](i, j) = rf_entry(i, j + n, z) / (1.0 - fp.y0);
    }
    return g;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> FeedbackGains::control(
    const Eigen::Ref<const Eigen::MatrixXd>& w) const {
    int m = fold_index();
    int nodes = 2 * m + 1;
    if (w.cols() != nodes || w.rows() != n)
        throw std::invalid_argument("state does not match the gain grid");

    Eigen::VectorXd acc = R0 * w.col(0) + R1 * w.col(nodes - 1);
    // trapezoid split at the fold, honoring the branch jump
    for (int k = 0; k < m; ++k) {
        double h = grid[k + 1] - grid[k];
        acc += 0.5 * h * (Rleft[k] * w.col(k) + Rleft[k + 1] * w.col(k + 1));
    }
    for (int k = 0; k < m; ++k) {
        double h = grid[m + k + 1] - grid[m + k];
        acc += 0.5 * h * (Rright[k] * w.col(m + k) + Rright[k + 1] * w.col(m + k + 1));
    }

    Eigen::VectorXd u0 = -B0 * w.col(0) - acc.head(n) / y0;
    Eigen::VectorXd u1 = -B1 * w.col(nodes - 1) + acc.tail(n) / (1.0 - y0);
    return {u0, u1};
}

}  // namespace backstep
