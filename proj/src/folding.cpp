#include "backstep/folding.hpp"

#include <cmath>

#include "backstep/numerics.hpp"

namespace backstep {

double FoldedPlant::lambda(int i, double z) const {
    return lam_[i % n].eval(arg(i, z)) / scale(i);
}

double FoldedPlant::lambda_d(int i, double z) const {
    return lam_d_[i % n].eval(arg(i, z)) * chain(i) / scale(i);
}

double FoldedPlant::lambda_dd(int i, double z) const {
    double c = chain(i);
    return lam_dd_[i % n].eval(arg(i, z)) * c * c / scale(i);
}

double FoldedPlant::A(int i, int j, double z) const {
    if ((i < n) != (j < n)) return 0.0;  // block diagonal
    return plant_->A[i % n][j % n].eval(arg(i, z));
}

namespace {

// Strict descending order of the folded coefficients, checked on `nodes`
// grid points plus interval midpoints. Returns first violation, if any.
bool check_descending(const FoldedPlant& fp, int nodes, double* bad_z, int* bad_i, int* bad_j) {
    int n2 = 2 * fp.n;
    auto grid = linspace(0.0, 1.0, nodes);
    std::vector<double> pts;
    pts.reserve(2 * grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        pts.push_back(grid[k]);
        if (k + 1 < grid.size()) pts.push_back(0.5 * (grid[k] + grid[k + 1]));
    }
    for (double z : pts) {
        double prev = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n2; ++i) {
            double v = fp.lambda(i, z);
            if (!(v > 0.0) || !(v < prev)) {
                if (bad_z) *bad_z = z;
                if (bad_i) *bad_i = i;      // 1-based reported by caller
                if (bad_j) *bad_j = i + 1;
                return false;
            }
            prev = v;
        }
    }
    return true;
}

}  // namespace

FoldedPlant fold(const PlantSpec& plant, double y0) {
    if (!(y0 > 0.0 && y0 < 1.0)) throw ConfigError("folding point must lie in (0,1)");
    FoldedPlant fp;
    fp.plant_ = std::make_shared<PlantSpec>(plant);
    fp.n = plant.n;
    fp.y0 = y0;
    fp.yt = y0 / (1.0 - y0);
    fp.lam_ = plant.lambda;
    for (const Expr& l : plant.lambda) {
        fp.lam_d_.push_back(l.derivative());
        fp.lam_dd_.push_back(l.derivative().derivative());
    }
    double z;
    int i, j;
    if (!check_descending(fp, 201, &z, &i, &j)) throw OrderingViolation(z, i, j + 1);
    return fp;
}

namespace {

// Pairwise non-intersection of the 2n folded coefficients over z in [0,1],
// plus whether the natural index order is already strictly descending.
void probe_folding_point(const PlantSpec& plant, double y0, int z_nodes, bool* feasible, bool* descending) {
    int n = plant.n, n2 = 2 * n;
    auto grid = linspace(0.0, 1.0, z_nodes);
    std::vector<double> vals(n2);
    // sign[i][j] tracks the sign of lambda_i - lambda_j seen so far
    std::vector<int> sign(n2 * n2, 0);
    bool ok = true, desc = true;
    for (double z : grid) {
        for (int i = 0; i < n2; ++i) {
            double zh = i < n ? y0 - y0 * z : y0 + (1.0 - y0) * z;
            double sc = i < n ? y0 * y0 : (1.0 - y0) * (1.0 - y0);
            vals[i] = plant.lambda[i % n].eval(zh) / sc;
        }
        for (int i = 0; i < n2 && ok; ++i) {
            for (int j = i + 1; j < n2; ++j) {
                double d = vals[i] - vals[j];
                if (d == 0.0) {
                    ok = false;
                    break;
                }
                int s = d > 0.0 ? 1 : -1;
                int& prev = sign[i * n2 + j];
                if (prev == 0) {
                    prev = s;
                } else if (prev != s) {
                    ok = false;
                    break;
                }
                if (s < 0) desc = false;
            }
        }
        if (!ok) break;
    }
    *feasible = ok;
    *descending = ok && desc;
}

}  // namespace

std::vector<FoldScanInterval> scan_folding_points(const PlantSpec& plant, int resolution) {
    if (resolution < 100) throw ConfigError("scan resolution must be >= 100");
    const int z_nodes = 201;
    int samples = resolution;
    std::vector<double> y(samples);
    std::vector<char> feas(samples), desc(samples);
    for (int k = 0; k < samples; ++k) y[k] = (k + 1) / static_cast<double>(samples + 1);
    parallel_for(samples, [&](int k) {
        bool f, d;
        probe_folding_point(plant, y[k], z_nodes, &f, &d);
        feas[k] = f;
        desc[k] = d;
    });

    auto refine = [&](double lo, double hi, bool want_feasible_left) {
        // bisect the feasibility transition between lo and hi
        for (int it = 0; it < 40; ++it) {
            double mid = 0.5 * (lo + hi);
            bool f, d;
            probe_folding_point(plant, mid, z_nodes, &f, &d);
            if (f == want_feasible_left)
                lo = mid;
            else
                hi = mid;
        }
        return 0.5 * (lo + hi);
    };

    std::vector<FoldScanInterval> out;
    int k = 0;
    while (k < samples) {
        if (!feas[k]) {
            ++k;
            continue;
        }
        int begin = k;
        while (k + 1 < samples && feas[k + 1]) ++k;
        int end = k;
        FoldScanInterval iv;
        iv.lo = begin == 0 ? 0.0 : refine(y[begin - 1], y[begin], false);
        iv.hi = end == samples - 1 ? 1.0 : refine(y[end], y[end + 1], true);
        iv.descending = desc[begin];
        out.push_back(iv);
        ++k;
    }
    return out;
}

std::vector<double> make_orig_grid(double y0, int nodes_per_side) {
    int m = nodes_per_side;
    std::vector<double> g(2 * m + 1);
    for (int k = 0; k <= m; ++k) g[k] = y0 * k / m;
    for (int k = 1; k <= m; ++k) g[m + k] = y0 + (1.0 - y0) * k / m;
    g[m] = y0;
    g.back() = 1.0;
    return g;
}

namespace {

// Sample a single component at query points, snapping to grid nodes when the
// query lands on one; monotone cubic interpolation otherwise.
std::vector<double> resample(const std::vector<double>& grid, const Eigen::VectorXd& vals,
                             const std::vector<double>& queries) {
    std::vector<double> out(queries.size());
    std::vector<double> v(vals.data(), vals.data() + vals.size());
    Pchip interp;
    bool have_interp = false;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        double x = std::min(std::max(queries[q], grid.front()), grid.back());
        auto it = std::lower_bound(grid.begin(), grid.end(), x - 1e-12);
        if (it != grid.end() && std::abs(*it - x) <= 1e-12) {
            out[q] = vals[it - grid.begin()];
            continue;
        }
        if (!have_interp) {
            interp = Pchip(grid, v);
            have_interp = true;
        }
        out[q] = interp(x);
    }
    return out;
}

}  // namespace

StateField fold_state(const StateField& w, const FoldedPlant& fp, const std::vector<double>& zgrid) {
    int n = fp.n;
    StateField x;
    x.grid = zgrid;
    x.values.resize(2 * n, zgrid.size());
    std::vector<double> ql(zgrid.size()), qr(zgrid.size());
    for (std::size_t k = 0; k < zgrid.size(); ++k) {
        ql[k] = fp.y0 - fp.y0 * zgrid[k];
        qr[k] = fp.y0 + (1.0 - fp.y0) * zgrid[k];
    }
    for (int i = 0; i < n; ++i) {
        auto left = resample(w.grid, w.values.row(i), ql);
        auto right = resample(w.grid, w.values.row(i), qr);
        for (std::size_t k = 0; k < zgrid.size(); ++k) {
            x.values(i, k) = left[k];
            x.values(n + i, k) = right[k];
        }
    }
    return x;
}

StateField unfold_state(const StateField& x, const FoldedPlant& fp, const std::vector<double>& orig_grid) {
    int n = fp.n;
    StateField w;
    w.grid = orig_grid;
    w.values.resize(n, orig_grid.size());
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd xl = x.values.row(i), xr = x.values.row(n + i);
        for (std::size_t k = 0; k < orig_grid.size(); ++k) {
            double zh = orig_grid[k];
            if (std::abs(zh - fp.y0) <= 1e-14) {
                // continuity at the fold: average the one-sided values
                auto l = resample(x.grid, xl, {0.0});
                auto r = resample(x.grid, xr, {0.0});
                w.values(i, k) = 0.5 * (l[0] + r[0]);
            } else if (zh < fp.y0) {
                w.values(i, k) = resample(x.grid, xl, {(fp.y0 - zh) / fp.y0})[0];
            } else {
                w.values(i, k) = resample(x.grid, xr, {(zh - fp.y0) / (1.0 - fp.y0)})[0];
            }
        }
    }
    return w;
}

}  // namespace backstep
