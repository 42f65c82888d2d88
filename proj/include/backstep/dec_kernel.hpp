#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "backstep/bs_kernel.hpp"

namespace backstep {

// Coupling data feeding the decoupling kernels: the upper-left blocks of the
// well-posedness matrices and the rewritten lower-left blocks obtained by
// eliminating the right boundary values through the target-system fold BCs.
struct CouplingInputs {
    int n = 0;
    double yt = 0.0;
    std::vector<double> tgrid;
    std::vector<Eigen::VectorXd> At0l, At1l;      // strictly lower triangular n x n blocks
    std::vector<Eigen::VectorXd> Ab0lr, Ab1lr;    // rewritten lower-left blocks
    std::vector<Eigen::VectorXd> Ab1lr_d;         // d/dz of Ab1lr (centered differences)
    double rewrite_residual = 0.0;                // random-boundary-vector validation

    int cidx(int i, int j) const { return i * n + j; }
    double at0l(int i, int j, double z) const;
    double at1l(int i, int j, double z) const;
    double ab0(int i, int j, double z) const;
    double ab1(int i, int j, double z) const;
    double ab1d(int i, int j, double z) const;
};

// Builds the rewritten coupling blocks and validates the rewrite against the
// original matrices on random boundary vectors compatible with the fold BCs.
// Throws if the validation residual exceeds the stated bound.
CouplingInputs rewrite_coupling(const BsKernelSolution& bs, int trials = 100, double bound = 1e-12);

struct DecArtificialBC {
    std::function<double(int i, int j, double eta)> gD = [](int, int, double) { return 0.0; };
    std::function<double(int i, int j, double eta)> gG = [](int, int, double) { return 0.0; };
};

struct DecOptions {
    double tol = 1e-3;
    int max_iter = 60;
    int n_z = 51;
    int n_xi = 100;
};

struct DecCanonical {
    int n = 0;
    std::vector<ChartGrid> gP, gQ;                    // n*n charts each
    std::vector<FieldData> D, N, M, G, J, H;          // accumulated fields
    std::vector<SmoothField> sD, sN, sM, sG, sJ, sH;  // evaluators
    FoldedPlant fp;
    int cidx(int i, int j) const { return i * n + j; }
};

struct DecKernelSolution {
    int n = 0;
    double yt = 0.0;

    std::vector<double> zgrid;
    std::vector<Eigen::MatrixXd> P;     // unit square
    std::vector<Eigen::MatrixXd> Q;     // triangle, zeta <= z
    std::vector<Eigen::VectorXd> Pz1, Qz1;

    std::vector<double> tgrid;
    std::vector<Eigen::VectorXd> Ac0r, Ac1r;  // target coupling matrices, strictly lower
    std::vector<Eigen::VectorXd> Ptr0, Pztr0, Qtr0, Qztr0;

    std::vector<double> sweep_log;
    int iterations = 0;
    double gamma_lo_right = 0.0;

    std::shared_ptr<const DecCanonical> canon;

    int cidx(int i, int j) const { return i * n + j; }
    double P_eval(int i, int j, double z, double zeta) const;
    double Q_eval(int i, int j, double z, double zeta) const;
    double ac0r_at(int i, int j, double z) const;
    double ac1r_at(int i, int j, double z) const;
};

DecKernelSolution solve_dec(const FoldedPlant& fp, const CouplingInputs& inputs, const DecArtificialBC& gbc,
                            const DecOptions& opts);

struct DecResidualReport {
    double pde_p = 0.0, pde_q = 0.0;
    double q_diag = 0.0, q_corner = 0.0;
    double p_left = 0.0, p_left_deriv = 0.0;  // P(0,.), P_z(0,.)
    double p_robin = 0.0;                     // zeta = 1 condition
    double coupling_bc1 = 0.0, coupling_bc2 = 0.0;
    double max_all() const;
};

DecResidualReport dec_residuals(const DecKernelSolution& sol, const FoldedPlant& fp, const CouplingInputs& in);

}  // namespace backstep
