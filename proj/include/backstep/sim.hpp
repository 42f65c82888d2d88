#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "backstep/feedback.hpp"
#include "backstep/folding.hpp"
#include "backstep/plant.hpp"

namespace backstep {

struct SimConfig {
    int nodes_per_side = 100;  // spatial grid has 2m+1 nodes with the fold at m
    double dt = 1e-5;
    double T = 1.0;
    int output_stride = 1000;  // store every k-th step
};

struct Trajectory {
    std::vector<double> t;
    std::vector<Eigen::MatrixXd> w;  // n x nodes at the stored stamps
    std::vector<Eigen::VectorXd> u0, u1;
    std::vector<double> norm;  // weighted L2 norm at the stored stamps
    bool blew_up = false;
    double blowup_time = 0.0;
};

double weighted_norm(const PlantSpec& plant, const std::vector<double>& grid,
                     const Eigen::Ref<const Eigen::MatrixXd>& w);

Eigen::MatrixXd sample_ic(const PlantSpec& plant, const std::vector<double>& grid);

// Method-of-lines run of the plant; Crank-Nicolson on diffusion+reaction,
// the feedback input lags one step. gains == nullptr runs open loop (u = 0).
Trajectory simulate(const PlantSpec& plant, const std::vector<double>& grid, const FeedbackGains* gains,
                    const SimConfig& cfg, const Eigen::MatrixXd* ic_override = nullptr);

// Target dynamics in original coordinates: decay -mu plus the cascade
// couplings through the state and slope at the fold.
struct TargetData {
    double mu = 0.0, y0 = 0.0;
    int n = 0;
    std::vector<double> tgrid;  // branch parameter z in [0,1]
    std::vector<Eigen::VectorXd> A0l, A1l;  // left-branch entries over tgrid
    std::vector<Eigen::VectorXd> A0r, A1r;  // right-branch entries
    int cidx(int i, int j) const { return i * n + j; }
};

TargetData make_target_data(const BsKernelSolution& bs, const DecKernelSolution& dec, const FoldedPlant& fp);

Trajectory simulate_target(const PlantSpec& plant, const std::vector<double>& grid, const TargetData& td,
                           const SimConfig& cfg, const Eigen::MatrixXd& ic);

// Physical kernel tables as written to / read from run artifacts.
struct KernelTables {
    int n = 0;
    double y0 = 0.0, yt = 0.0;
    std::vector<double> zgrid;
    std::vector<Eigen::MatrixXd> K;  // 2n x 2n components, triangle
    std::vector<Eigen::MatrixXd> P, Q;  // n x n components
};

KernelTables tables_from(const BsKernelSolution& bs, const DecKernelSolution& dec);

// Transformed initial condition: fold, apply both transformations, unfold.
Eigen::MatrixXd transform_state(const Eigen::MatrixXd& w, const std::vector<double>& grid,
                                const KernelTables& kt, const FoldedPlant& fp);

// Max deviation between the transformed closed-loop trajectory and the
// simulated target trajectory over all shared stamps and nodes.
double verify_transforms(const Trajectory& closed, const Trajectory& target,
                         const std::vector<double>& grid, const KernelTables& kt, const FoldedPlant& fp);

struct DecayFit {
    double rate = 0.0;       // fitted exponent of norm(t)/norm(0)
    double prefactor = 0.0;  // max of data over the fitted exponential
    double residual = 0.0;   // rms of the log fit
};

DecayFit fit_decay(const Trajectory& tr);

}  // namespace backstep
