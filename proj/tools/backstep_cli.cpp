// Command-line front end: scan folding points, run the controller design,
// simulate (open loop, closed loop, target) and verify the transform
// consistency between closed loop and target trajectories.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "backstep/artifacts.hpp"
#include "backstep/bs_kernel.hpp"
#include "backstep/dec_kernel.hpp"
#include "backstep/feedback.hpp"
#include "backstep/folding.hpp"
#include "backstep/numerics.hpp"
#include "backstep/plant.hpp"
#include "backstep/sim.hpp"

using namespace backstep;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitOrdering = 3;
constexpr int kExitNoConvergence = 4;
constexpr int kExitBlowUp = 5;

int cmd_scan(const std::string& config, int resolution, const std::string& out_csv) {
    PlantConfig cfg = load_config(config);
    auto intervals = scan_folding_points(cfg.plant, resolution);
    std::printf("feasible folding-point intervals (pairwise non-intersecting coefficients):\n");
    if (intervals.empty()) std::printf("  none\n");
    for (const auto& iv : intervals)
        std::printf("  (%.4f, %.4f)  descending-without-permutation: %s\n", iv.lo, iv.hi,
                    iv.descending ? "yes" : "no");
    if (!out_csv.empty()) {
        write_scan_csv(out_csv, intervals);
        std::printf("wrote %s\n", out_csv.c_str());
    }
    return 0;
}

int cmd_design(const std::string& config, double y0, double mu, double tol, int nz, int nxi,
               const std::string& out) {
    PlantConfig cfg = load_config(config);
    double y0v = y0 > 0 ? y0 : cfg.get("y0", 0.0);
    double muv = std::isnan(mu) ? cfg.get("mu", 10.0) : mu;
    if (!(y0v > 0.0 && y0v < 1.0)) {
        std::fprintf(stderr, "error: no valid folding point given (flag --y0 or config key y0)\n");
        return kExitConfig;
    }
    FoldedPlant fp = fold(cfg.plant, y0v);

    BsOptions bo;
    bo.tol = tol;
    bo.n_z = nz;
    bo.n_xi = nxi;
    ArtificialBC gf;
    BsKernelSolution bs = solve_bs(fp, muv, gf, bo);
    std::printf("backstepping kernel: %d iterations (last delta %.3e)\n", bs.iterations,
                bs.sweep_log.back());

    CouplingInputs inputs = rewrite_coupling(bs);
    std::printf("coupling rewrite validated, residual %.3e\n", inputs.rewrite_residual);

    DecOptions dopts;
    dopts.tol = tol;
    dopts.n_z = nz;
    dopts.n_xi = nxi;
    DecArtificialBC gbc;
    DecKernelSolution dec = solve_dec(fp, inputs, gbc, dopts);
    std::printf("decoupling kernels: %d iterations (last delta %.3e)\n", dec.iterations,
                dec.sweep_log.back());

    FeedbackGains gains = assemble_gains(bs, dec, fp, static_cast<int>(cfg.get("nodes_per_side", 100)));

    BsResidualReport rbs = bs_residuals(bs, fp, muv);
    DecResidualReport rdec = dec_residuals(dec, fp, inputs);
    std::printf("kernel residuals: pde %.3e, diag %.3e, offdiag %.3e, fold BC %.3e / %.3e\n", rbs.pde,
                rbs.diag_trace, rbs.offdiag_diag, rbs.fold_bc1, rbs.fold_bc2);
    std::printf("decoupling residuals: pde %.3e / %.3e, coupling BC %.3e / %.3e\n", rdec.pde_p, rdec.pde_q,
                rdec.coupling_bc1, rdec.coupling_bc2);

    write_design_artifacts(out, cfg, bs, dec, gains, rbs, rdec, inputs);
    std::printf("wrote design artifacts to %s\n", out.c_str());
    return 0;
}

int cmd_simulate(const std::string& config, const std::string& gains_dir, bool open_loop, bool target_mode,
                 double T, double dt, const std::string& out) {
    PlantConfig cfg = load_config(config);
    SimConfig sc;
    sc.T = T;
    sc.dt = dt;
    sc.nodes_per_side = static_cast<int>(cfg.get("nodes_per_side", 100));
    sc.output_stride = std::max(1, static_cast<int>(std::llround(0.01 / dt)));

    if (open_loop) {
        double y0 = cfg.get("y0", 0.5);
        auto grid = make_orig_grid(y0, sc.nodes_per_side);
        Trajectory tr = simulate(cfg.plant, grid, nullptr, sc);
        write_trajectory(out, "open_loop", grid, tr);
        if (tr.blew_up) {
            std::printf("open-loop run diverged at t=%.4f (unstable, expected)\n", tr.blowup_time);
            return 0;
        }
        std::printf("open-loop |w(T)|/|w(0)| = %.6f %s\n", tr.norm.back() / tr.norm.front(),
                    tr.norm.back() > tr.norm.front() ? "(unstable, expected)" : "");
        return 0;
    }

    DesignArtifacts art = load_design_artifacts(gains_dir);
    auto grid = make_orig_grid(art.gains.y0, sc.nodes_per_side);
    if (static_cast<int>(art.gains.grid.size()) != static_cast<int>(grid.size()))
        throw ConfigError("gain grid does not match simulation grid; re-run design with matching nodes");

    if (target_mode) {
        FoldedPlant fp = fold(cfg.plant, art.gains.y0);
        Eigen::MatrixXd ic = transform_state(sample_ic(cfg.plant, grid), grid, art.kernels, fp);
        Trajectory tr = simulate_target(cfg.plant, grid, art.target, sc, ic);
        write_trajectory(out, "target", grid, tr);
        if (tr.blew_up) {
            std::printf("target run diverged at t=%.4f\n", tr.blowup_time);
            return kExitBlowUp;
        }
        DecayFit fit = fit_decay(tr);
        std::printf("target decay rate %.4f (prefactor %.4f)\n", fit.rate, fit.prefactor);
        return 0;
    }

    Trajectory tr = simulate(cfg.plant, grid, &art.gains, sc);
    write_trajectory(out, "closed_loop", grid, tr);
    if (tr.blew_up) {
        std::printf("closed-loop run diverged at t=%.4f\n", tr.blowup_time);
        return kExitBlowUp;
    }
    DecayFit fit = fit_decay(tr);
    bool envelope = true;
    for (std::size_t k = 0; k < tr.t.size(); ++k)
        if (tr.norm[k] / tr.norm.front() > 1.1 * 2.26 * std::exp(-art.mu * tr.t[k])) envelope = false;
    std::printf("closed-loop decay rate %.4f (prefactor %.4f), envelope %s\n", fit.rate, fit.prefactor,
                envelope ? "pass" : "FAIL");
    return 0;
}

int cmd_verify(const std::string& config, const std::string& gains_dir, double T, double dt,
               const std::string& out) {
    PlantConfig cfg = load_config(config);
    DesignArtifacts art = load_design_artifacts(gains_dir);
    SimConfig sc;
    sc.T = T;
    sc.dt = dt;
    sc.nodes_per_side = static_cast<int>(cfg.get("nodes_per_side", 100));
    sc.output_stride = std::max(1, static_cast<int>(std::llround(0.01 / dt)));

    auto grid = make_orig_grid(art.gains.y0, sc.nodes_per_side);
    FoldedPlant fp = fold(cfg.plant, art.gains.y0);

    Trajectory closed = simulate(cfg.plant, grid, &art.gains, sc);
    if (closed.blew_up) {
        std::printf("closed-loop run diverged at t=%.4f\n", closed.blowup_time);
        return kExitBlowUp;
    }
    Eigen::MatrixXd ic = transform_state(sample_ic(cfg.plant, grid), grid, art.kernels, fp);
    Trajectory target = simulate_target(cfg.plant, grid, art.target, sc, ic);

    double dev = verify_transforms(closed, target, grid, art.kernels, fp);
    bool pass = dev <= 1e-2;
    std::printf("transform consistency: max deviation %.6e -> %s\n", dev, pass ? "pass" : "FAIL");
    if (!out.empty()) {
        write_trajectory(out, "closed_loop", grid, closed);
        write_trajectory(out, "target", grid, target);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bilateral boundary-control synthesis for coupled parabolic systems"};
    app.require_subcommand(1);

    std::string config, out = "out", gains_dir;
    int resolution = 2000, nz = 51, nxi = 100;
    double y0 = -1.0, mu = std::nan(""), tol = 1e-3, T = 1.0, dt = 1e-5;
    std::string scan_csv;

    auto* scan = app.add_subcommand("scan", "scan feasible folding points");
    scan->add_option("config", config)->required();
    scan->add_option("--resolution", resolution);
    scan->add_option("--out", scan_csv);

    auto* design = app.add_subcommand("design", "solve the kernel equations and assemble gains");
    design->add_option("config", config)->required();
    design->add_option("--y0", y0);
    design->add_option("--mu", mu);
    design->add_option("--tol", tol);
    design->add_option("--nz", nz);
    design->add_option("--nxi", nxi);
    design->add_option("--out", out);

    auto* sim = app.add_subcommand("simulate", "method-of-lines simulation");
    sim->add_option("config", config)->required();
    sim->add_option("--gains", gains_dir);
    bool open_loop = false, target_mode = false;
    sim->add_flag("--open-loop", open_loop);
    sim->add_flag("--target", target_mode);
    sim->add_option("--T", T);
    sim->add_option("--dt", dt);
    sim->add_option("--out", out);

    auto* verify = app.add_subcommand("verify", "transform-consistency check");
    verify->add_option("config", config)->required();
    verify->add_option("--gains", gains_dir)->required();
    verify->add_option("--T", T);
    verify->add_option("--dt", dt);
    verify->add_option("--out", out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (scan->parsed()) return cmd_scan(config, resolution, scan_csv);
        if (design->parsed()) return cmd_design(config, y0, mu, tol, nz, nxi, out);
        if (sim->parsed()) {
            if (!open_loop && !target_mode && gains_dir.empty()) {
                std::fprintf(stderr, "error: closed-loop simulation needs --gains\n");
                return kExitConfig;
            }
            return cmd_simulate(config, gains_dir, open_loop, target_mode, T, dt, out);
        }
        if (verify->parsed()) return cmd_verify(config, gains_dir, T, dt, out);
    } catch (const OrderingViolation& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitOrdering;
    } catch (const NoConvergence& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNoConvergence;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
