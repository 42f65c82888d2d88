#pragma once

#include <Eigen/Dense>
#include <memory>
#include <stdexcept>
#include <vector>

#include "backstep/plant.hpp"

namespace backstep {

// Raised when a folding point does not give strictly descending folded
// diffusion coefficients.
class OrderingViolation : public std::runtime_error {
public:
    OrderingViolation(double z, int i, int j)
        : std::runtime_error("folded diffusion coefficients out of order at z=" + std::to_string(z) +
                             " (lambda_" + std::to_string(i) + " vs lambda_" + std::to_string(j) + ")"),
          z(z), i(i), j(j) {}
    double z;
    int i, j;  // 1-based folded indices
};

// 2n-state representation of a plant folded at y0. Left half lives on
// indices 0..n-1 (reversed orientation), right half on n..2n-1.
class FoldedPlant {
public:
    int n = 0;        // original dimension; folded dimension is 2n
    double y0 = 0.0;  // folding point
    double yt = 0.0;  // y0 / (1 - y0)

    double lambda(int i, double z) const;     // i in 0..2n-1
    double lambda_d(int i, double z) const;   // d/dz
    double lambda_dd(int i, double z) const;  // d2/dz2
    double A(int i, int j, double z) const;   // folded reaction matrix entry

    // Right/left sub-blocks as used by the decoupling stage.
    double lambda_left(int i, double z) const { return lambda(i, z); }
    double lambda_right(int i, double z) const { return lambda(n + i, z); }

    const PlantSpec& plant() const { return *plant_; }

private:
    friend FoldedPlant fold(const PlantSpec&, double);
    std::shared_ptr<const PlantSpec> plant_;
    std::vector<Expr> lam_, lam_d_, lam_dd_;  // original-coordinate symbols
    double arg(int i, double z) const { return i < n ? y0 - y0 * z : y0 + (1.0 - y0) * z; }
    double scale(int i) const { return i < n ? y0 * y0 : (1.0 - y0) * (1.0 - y0); }
    double chain(int i) const { return i < n ? -y0 : (1.0 - y0); }
};

// Folds the plant at y0 and validates strict descending order of the 2n
// coefficients on a 201-point grid plus midpoints. Throws OrderingViolation.
FoldedPlant fold(const PlantSpec& plant, double y0);

struct FoldScanInterval {
    double lo = 0.0, hi = 0.0;
    bool descending = false;  // strict descending order without permutation
};

// Maximal subintervals of (0,1) of folding points for which the 2n folded
// coefficients are pairwise non-intersecting over [0,1].
std::vector<FoldScanInterval> scan_folding_points(const PlantSpec& plant, int resolution);

// Sampled vector field on a spatial grid; values(component, node).
struct StateField {
    std::vector<double> grid;
    Eigen::MatrixXd values;
};

// Piecewise-uniform grid on [0,1] with y0 as an exact node and the same
// number of intervals on both sides, so folding is a pure permutation.
std::vector<double> make_orig_grid(double y0, int nodes_per_side);

StateField fold_state(const StateField& w, const FoldedPlant& fp, const std::vector<double>& zgrid);
StateField unfold_state(const StateField& x, const FoldedPlant& fp, const std::vector<double>& orig_grid);

}  // namespace backstep
