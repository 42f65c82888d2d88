#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "backstep/chart_grid.hpp"
#include "backstep/folding.hpp"

namespace backstep {

// Successive approximation ran out of sweeps.
class NoConvergence : public std::runtime_error {
public:
    NoConvergence(const std::string& which, double last_delta, double gamma_lo, double gamma)
        : std::runtime_error(which + ": no convergence, last max delta " + std::to_string(last_delta) +
                             " (gamma bound " + std::to_string(gamma_lo) + ", gamma " + std::to_string(gamma) + ")"),
          last_delta(last_delta), gamma_lo(gamma_lo), gamma(gamma) {}
    double last_delta, gamma_lo, gamma;
};

// Free boundary data on the canonical left edges, zero unless configured.
struct ArtificialBC {
    std::function<double(int i, int j, double eta)> gf = [](int, int, double) { return 0.0; };
};

struct BsOptions {
    double tol = 1e-3;
    int max_iter = 60;
    int n_z = 51;    // physical kernel grid nodes per direction
    int n_xi = 100;  // canonical grid nodes along xi
};

// Converged canonical fields, kept for smooth kernel evaluation.
struct BsCanonical {
    int n2 = 0;
    std::vector<ChartGrid> grids;           // n2*n2 charts
    std::vector<FieldData> G, H, J;         // accumulated series
    std::vector<SmoothField> sG, sH, sJ;    // C2 evaluators (J empty for right columns)
    FoldedPlant fp;
    int cidx(int i, int j) const { return i * n2 + j; }
};

struct BsKernelSolution {
    int n = 0;  // original dimension; kernel blocks are 2n x 2n
    double mu = 0.0, y0 = 0.0, yt = 0.0;

    std::vector<double> zgrid;          // physical kernel grid
    std::vector<Eigen::MatrixXd> K;     // per component: K(z_p, zeta_q), q <= p
    Eigen::MatrixXd K11;                // K(1,1)
    std::vector<Eigen::VectorXd> Kz1;   // per component: K_z(1, zeta) on zgrid

    std::vector<double> tgrid;                  // dense trace grid
    std::vector<Eigen::VectorXd> At0, At1;      // well-posedness matrices on tgrid
    std::vector<Eigen::VectorXd> Ktr0, Kztr0;   // K(z,0), K_zeta(z,0) on tgrid

    std::vector<double> sweep_log;  // max delta per computed level
    int iterations = 0;             // number of computed levels
    double gamma_lo = 0.0, gamma = 0.0;

    std::shared_ptr<const BsCanonical> canon;

    int cidx(int i, int j) const { return i * 2 * n + j; }
    double K_eval(int i, int j, double z, double zeta) const;
    double At0_at(int i, int j, double z) const;
    double At1_at(int i, int j, double z) const;
};

BsKernelSolution solve_bs(const FoldedPlant& fp, double mu, const ArtificialBC& gf, const BsOptions& opts);

struct BsResidualReport {
    double pde = 0.0;        // interior finite-difference residual of the kernel PDE
    double diag_trace = 0.0; // K_ii(z,z) against its quadrature value
    double offdiag_diag = 0.0;
    double corner = 0.0;     // |K(0,0)|
    double fold_bc1 = 0.0;
    double fold_bc2 = 0.0;
    double max_all() const;
};

BsResidualReport bs_residuals(const BsKernelSolution& sol, const FoldedPlant& fp, double mu);

}  // namespace backstep
