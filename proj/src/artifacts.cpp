#include "backstep/artifacts.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "backstep/numerics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace backstep {

namespace {

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << std::setprecision(17);
    return f;
}

std::vector<std::vector<double>> read_csv(const fs::path& p, int expect_cols) {
    std::ifstream f(p);
    if (!f) throw ConfigError("cannot read " + p.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (first) {  // header
            first = false;
            continue;
        }
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        try {
            while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw ConfigError("malformed row in " + p.string());
        }
        if (expect_cols > 0 && static_cast<int>(row.size()) != expect_cols)
            throw ConfigError("malformed row in " + p.string());
        rows.push_back(std::move(row));
    }
    return rows;
}

json mat_to_json(const Eigen::MatrixXd& m) {
    json out = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        out.push_back(row);
    }
    return out;
}

Eigen::MatrixXd mat_from_json(const json& j) {
    Eigen::MatrixXd m(j.size(), j.empty() ? 0 : j[0].size());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = j[i][k].get<double>();
    return m;
}

void write_kernel_csv(const fs::path& p, const std::vector<double>& grid, const Eigen::MatrixXd& M,
                      bool triangle) {
    auto f = open_out(p);
    f << "z,zeta,value\n";
    for (std::size_t a = 0; a < grid.size(); ++a)
        for (std::size_t b = 0; b < grid.size(); ++b) {
            if (triangle && b > a) continue;
            f << grid[a] << ',' << grid[b] << ',' << M(a, b) << '\n';
        }
}

void write_branch_traces(const fs::path& p, int n, const std::vector<double>& tgrid,
                         const std::vector<Eigen::VectorXd>& A0, const std::vector<Eigen::VectorXd>& A1) {
    auto f = open_out(p);
    f << "z";
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) f << ",A0_" << i + 1 << "_" << j + 1;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) f << ",A1_" << i + 1 << "_" << j + 1;
    f << '\n';
    for (std::size_t k = 0; k < tgrid.size(); ++k) {
        f << tgrid[k];
        for (int c = 0; c < n * n; ++c) f << ',' << A0[c](k);
        for (int c = 0; c < n * n; ++c) f << ',' << A1[c](k);
        f << '\n';
    }
}

}  // namespace

void write_design_artifacts(const std::string& dir, const PlantConfig& cfg, const BsKernelSolution& bs,
                            const DecKernelSolution& dec, const FeedbackGains& gains,
                            const BsResidualReport& rbs, const DecResidualReport& rdec,
                            const CouplingInputs& inputs) {
    fs::create_directories(dir);
    int n = bs.n, n2 = 2 * n;
    std::vector<std::string> files;

    for (int i = 0; i < n2; ++i)
        for (int j = 0; j < n2; ++j) {
            std::string name = "kernel_K_" + std::to_string(i + 1) + "_" + std::to_string(j + 1) + ".csv";
            write_kernel_csv(fs::path(dir) / name, bs.zgrid, bs.K[bs.cidx(i, j)], true);
            files.push_back(name);
        }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            std::string np = "kernel_P_" + std::to_string(i + 1) + "_" + std::to_string(j + 1) + ".csv";
            std::string nq = "kernel_Q_" + std::to_string(i + 1) + "_" + std::to_string(j + 1) + ".csv";
            write_kernel_csv(fs::path(dir) / np, dec.zgrid, dec.P[dec.cidx(i, j)], false);
            write_kernel_csv(fs::path(dir) / nq, dec.zgrid, dec.Q[dec.cidx(i, j)], true);
            files.push_back(np);
            files.push_back(nq);
        }

    {
        auto f = open_out(fs::path(dir) / "gains_R.csv");
        f << "node,zhat,side";
        for (int i = 0; i < n2; ++i)
            for (int j = 0; j < n; ++j) f << ",R_" << i + 1 << "_" << j + 1;
        f << '\n';
        int m = gains.fold_index();
        for (int k = 0; k <= m; ++k) {
            f << k << ',' << gains.grid[k] << ",L";
            for (int i = 0; i < n2; ++i)
                for (int j = 0; j < n; ++j) f << ',' << gains.Rleft[k](i, j);
            f << '\n';
        }
        for (int k = 0; k <= m; ++k) {
            f << m + k << ',' << gains.grid[m + k] << ",R";
            for (int i = 0; i < n2; ++i)
                for (int j = 0; j < n; ++j) f << ',' << gains.Rright[k](i, j);
            f << '\n';
        }
        files.push_back("gains_R.csv");
    }
    {
        std::vector<Eigen::VectorXd> a0(n * n), a1(n * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                a0[i * n + j] = bs.At0[bs.cidx(i, j)];
                a1[i * n + j] = bs.At1[bs.cidx(i, j)];
            }
        write_branch_traces(fs::path(dir) / "traces_target_left.csv", n, bs.tgrid, a0, a1);
    }
    write_branch_traces(fs::path(dir) / "traces_target_right.csv", n, dec.tgrid, dec.Ac0r, dec.Ac1r);
    files.push_back("traces_target_left.csv");
    files.push_back("traces_target_right.csv");

    json man;
    man["config_hash"] = fnv1a(cfg.raw);
    man["n"] = n;
    man["y0"] = bs.y0;
    man["yt"] = bs.yt;
    man["mu"] = bs.mu;
    man["n_z"] = static_cast<int>(bs.zgrid.size());
    man["nodes_per_side"] = gains.fold_index();
    man["trace_nodes"] = static_cast<int>(bs.tgrid.size());
    man["iterations_K"] = bs.iterations;
    man["iterations_PQ"] = dec.iterations;
    man["sweep_log_K"] = bs.sweep_log;
    man["sweep_log_PQ"] = dec.sweep_log;
    man["gamma_bound"] = bs.gamma_lo;
    man["gamma"] = bs.gamma;
    man["gamma_bound_right"] = dec.gamma_lo_right;
    man["rewrite_residual"] = inputs.rewrite_residual;
    man["residuals"] = {
        {"pde", rbs.pde},           {"diag_trace", rbs.diag_trace}, {"offdiag_diag", rbs.offdiag_diag},
        {"corner", rbs.corner},     {"fold_bc1", rbs.fold_bc1},     {"fold_bc2", rbs.fold_bc2},
        {"pde_p", rdec.pde_p},      {"pde_q", rdec.pde_q},          {"q_diag", rdec.q_diag},
        {"q_corner", rdec.q_corner}, {"p_left", rdec.p_left},       {"p_left_deriv", rdec.p_left_deriv},
        {"p_robin", rdec.p_robin},  {"coupling_bc1", rdec.coupling_bc1}, {"coupling_bc2", rdec.coupling_bc2}};
    man["R0"] = mat_to_json(gains.R0);
    man["R1"] = mat_to_json(gains.R1);
    man["B0"] = mat_to_json(gains.B0);
    man["B1"] = mat_to_json(gains.B1);
    man["artifacts"] = files;

    auto f = open_out(fs::path(dir) / "manifest.json");
    f << man.dump(2) << '\n';
}

DesignArtifacts load_design_artifacts(const std::string& dir) {
    fs::path base(dir);
    std::ifstream mf(base / "manifest.json");
    if (!mf) throw ConfigError("cannot read manifest in " + dir);
    json man;
    try {
        man = json::parse(mf);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("corrupted manifest: ") + e.what());
    }

    DesignArtifacts art;
    int n = man.at("n").get<int>();
    int n2 = 2 * n;
    int nz = man.at("n_z").get<int>();
    int m = man.at("nodes_per_side").get<int>();
    art.mu = man.at("mu").get<double>();

    KernelTables& kt = art.kernels;
    kt.n = n;
    kt.y0 = man.at("y0").get<double>();
    kt.yt = man.at("yt").get<double>();
    kt.zgrid = linspace(0.0, 1.0, nz);
    kt.K.assign(n2 * n2, Eigen::MatrixXd::Zero(nz, nz));
    kt.P.assign(n * n, Eigen::MatrixXd::Zero(nz, nz));
    kt.Q.assign(n * n, Eigen::MatrixXd::Zero(nz, nz));
    auto fill = [&](const std::string& prefix, Eigen::MatrixXd& M, bool triangle) {
        auto rows = read_csv(base / prefix, 3);
        double h = kt.zgrid[1] - kt.zgrid[0];
        std::size_t expect = triangle ? static_cast<std::size_t>(nz) * (nz + 1) / 2
                                      : static_cast<std::size_t>(nz) * nz;
        if (rows.size() != expect) throw ConfigError("corrupted kernel table " + prefix);
        for (const auto& r : rows) {
            int a = static_cast<int>(std::lround(r[0] / h));
            int b = static_cast<int>(std::lround(r[1] / h));
            M(a, b) = r[2];
        }
    };
    for (int i = 0; i < n2; ++i)
        for (int j = 0; j < n2; ++j)
            fill("kernel_K_" + std::to_string(i + 1) + "_" + std::to_string(j + 1) + ".csv",
                 kt.K[i * n2 + j], true);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            fill("kernel_P_" + std::to_string(i + 1) + "_" + std::to_string(j + 1) + ".csv",
                 kt.P[i * n + j], false);
            fill("kernel_Q_" + std::to_string(i + 1) + "_" + std::to_string(j + 1) + ".csv",
                 kt.Q[i * n + j], true);
        }

    FeedbackGains& g = art.gains;
    g.n = n;
    g.y0 = kt.y0;
    g.yt = kt.yt;
    g.R0 = mat_from_json(man.at("R0"));
    g.R1 = mat_from_json(man.at("R1"));
    g.B0 = mat_from_json(man.at("B0"));
    g.B1 = mat_from_json(man.at("B1"));
    g.grid = make_orig_grid(g.y0, m);
    g.Rleft.assign(m + 1, Eigen::MatrixXd::Zero(n2, n));
    g.Rright.assign(m + 1, Eigen::MatrixXd::Zero(n2, n));
    {
        std::ifstream f(base / "gains_R.csv");
        if (!f) throw ConfigError("cannot read gains table in " + dir);
        std::string line;
        std::getline(f, line);  // header
        int kl = 0, kr = 0;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string cell;
            std::vector<std::string> cells;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            if (cells.size() != static_cast<std::size_t>(3 + n2 * n)) throw ConfigError("corrupted gains row");
            bool left = cells[2] == "L";
            Eigen::MatrixXd R(n2, n);
            int c = 3;
            try {
                for (int i = 0; i < n2; ++i)
                    for (int j = 0; j < n; ++j) R(i, j) = std::stod(cells[c++]);
            } catch (const std::exception&) {
                throw ConfigError("corrupted gains row");
            }
            if (left) {
                if (kl > m) throw ConfigError("corrupted gains table");
                g.Rleft[kl++] = R;
            } else {
                if (kr > m) throw ConfigError("corrupted gains table");
                g.Rright[kr++] = R;
            }
        }
        if (kl != m + 1 || kr != m + 1) throw ConfigError("corrupted gains table");
    }

    TargetData& td = art.target;
    td.mu = art.mu;
    td.y0 = kt.y0;
    td.n = n;
    {
        auto rows = read_csv(base / "traces_target_left.csv", 1 + 2 * n * n);
        td.tgrid.resize(rows.size());
        td.A0l.assign(n * n, Eigen::VectorXd::Zero(rows.size()));
        td.A1l.assign(n * n, Eigen::VectorXd::Zero(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            td.tgrid[k] = rows[k][0];
            for (int c = 0; c < n * n; ++c) {
                td.A0l[c](k) = rows[k][1 + c];
                td.A1l[c](k) = rows[k][1 + n * n + c];
            }
        }
    }
    {
        auto rows = read_csv(base / "traces_target_right.csv", 1 + 2 * n * n);
        td.A0r.assign(n * n, Eigen::VectorXd::Zero(rows.size()));
        td.A1r.assign(n * n, Eigen::VectorXd::Zero(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k)
            for (int c = 0; c < n * n; ++c) {
                td.A0r[c](k) = rows[k][1 + c];
                td.A1r[c](k) = rows[k][1 + n * n + c];
            }
    }
    return art;
}

void write_trajectory(const std::string& dir, const std::string& tag, const std::vector<double>& grid,
                      const Trajectory& tr) {
    fs::create_directories(dir);
    int n = tr.w.empty() ? 0 : static_cast<int>(tr.w.front().rows());
    {
        auto f = open_out(fs::path(dir) / ("trajectory_" + tag + "_state.csv"));
        f << "t,zhat";
        for (int i = 0; i < n; ++i) f << ",w_" << i + 1;
        f << '\n';
        for (std::size_t s = 0; s < tr.t.size(); ++s)
            for (std::size_t k = 0; k < grid.size(); ++k) {
                f << tr.t[s] << ',' << grid[k];
                for (int i = 0; i < n; ++i) f << ',' << tr.w[s](i, k);
                f << '\n';
            }
    }
    {
        auto f = open_out(fs::path(dir) / ("trajectory_" + tag + "_inputs.csv"));
        f << "t";
        for (int i = 0; i < n; ++i) f << ",u0_" << i + 1;
        for (int i = 0; i < n; ++i) f << ",u1_" << i + 1;
        f << ",norm\n";
        for (std::size_t s = 0; s < tr.t.size(); ++s) {
            f << tr.t[s];
            for (int i = 0; i < n; ++i) f << ',' << tr.u0[s](i);
            for (int i = 0; i < n; ++i) f << ',' << tr.u1[s](i);
            f << ',' << tr.norm[s] << '\n';
        }
    }
}

void write_scan_csv(const std::string& path, const std::vector<FoldScanInterval>& intervals) {
    auto f = open_out(path);
    f << "lo,hi,descending\n";
    for (const auto& iv : intervals) f << iv.lo << ',' << iv.hi << ',' << (iv.descending ? 1 : 0) << '\n';
}

}  // namespace backstep
