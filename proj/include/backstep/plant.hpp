#pragma once

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "backstep/expr.hpp"

namespace backstep {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The original system: n coupled parabolic PDEs on [0,1] with diagonal
// diffusion, full reaction coupling and Robin-type boundary inputs.
struct PlantSpec {
    int n = 0;
    std::vector<Expr> lambda;               // diffusion coefficients, descending
    std::vector<std::vector<Expr>> A;       // reaction matrix entries
    Eigen::MatrixXd B0, B1;                 // boundary matrices
    std::vector<Expr> ic;                   // initial condition per component

    double lambda_at(int i, double z) const { return lambda[i].eval(z); }
    Eigen::MatrixXd A_at(double z) const;

    // Checks lambda_1 > ... > lambda_n > 0 on a 201-point grid.
    void validate() const;
};

// key = value lines; values either numbers or quoted expressions.
struct PlantConfig {
    PlantSpec plant;
    std::map<std::string, double> numeric;  // y0, mu, tol, nz, nxi, T, dt, ...
    std::string raw;                        // file contents, for hashing

    double get(const std::string& key, double fallback) const;
};

PlantConfig load_config(const std::string& path);
PlantConfig parse_config(const std::string& text);

}  // namespace backstep
