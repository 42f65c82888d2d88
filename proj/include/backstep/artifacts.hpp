#pragma once

#include <string>

#include "backstep/dec_kernel.hpp"
#include "backstep/feedback.hpp"
#include "backstep/sim.hpp"

namespace backstep {

// Design artifacts written by a design run: kernel CSVs (long format
// z,zeta,value per component), gain tables, trace tables and a JSON
// manifest with every numerical option and the iteration logs.
struct DesignArtifacts {
    KernelTables kernels;
    FeedbackGains gains;
    TargetData target;
    double mu = 0.0;
};

void write_design_artifacts(const std::string& dir, const PlantConfig& cfg, const BsKernelSolution& bs,
                            const DecKernelSolution& dec, const FeedbackGains& gains,
                            const BsResidualReport& rbs, const DecResidualReport& rdec,
                            const CouplingInputs& inputs);

DesignArtifacts load_design_artifacts(const std::string& dir);

void write_trajectory(const std::string& dir, const std::string& tag, const std::vector<double>& grid,
                      const Trajectory& tr);

void write_scan_csv(const std::string& path, const std::vector<FoldScanInterval>& intervals);

}  // namespace backstep
