#pragma once

#include <Eigen/Dense>
#include <vector>

#include "backstep/dec_kernel.hpp"

namespace backstep {

// State-feedback gains in original coordinates. R carries one matrix per
// grid node with both one-sided values stored at the fold, where the gain
// jumps between its left and right branch.
struct FeedbackGains {
    int n = 0;
    double y0 = 0.0, yt = 0.0;
    Eigen::MatrixXd R0, R1;  // 2n x n, boundary point gains
    Eigen::MatrixXd B0, B1;  // cancelled boundary matrices
    std::vector<double> grid;                // original-coordinate grid, fold at index m
    std::vector<Eigen::MatrixXd> Rleft;      // R on grid[0..m], left branch at the fold
    std::vector<Eigen::MatrixXd> Rright;     // R on grid[m..2m], right branch at the fold

    int fold_index() const { return static_cast<int>(Rleft.size()) - 1; }

    // u0, u1 for a state sampled on `grid`.
    std::pair<Eigen::VectorXd, Eigen::VectorXd> control(const Eigen::Ref<const Eigen::MatrixXd>& w) const;
};

FeedbackGains assemble_gains(const BsKernelSolution& bs, const DecKernelSolution& dec, const FoldedPlant& fp,
                             int nodes_per_side);

}  // namespace backstep
