#pragma once

#include <functional>
#include <memory>
#include <vector>

namespace backstep {

// Travel-time coordinate phi(z) = int_0^z dzbar / sqrt(lambda(zbar)),
// tabulated by cumulative trapezoid on a uniform grid. The inverse inverts
// the stored linear segments, so phi(inv(p)) == p up to roundoff.
class TravelTimeMap {
public:
    TravelTimeMap() = default;
    explicit TravelTimeMap(const std::function<double(double)>& lambda, int grid_nodes = 2001);

    double phi(double z) const;
    double inv(double p) const;
    double phi1() const { return phi_.back(); }

private:
    std::vector<double> phi_;
    double h_ = 0.0;
    int n_ = 0;
};

// Characteristic coordinates (xi, eta) for one kernel component (i, j).
//
// Triangle charts map {0 <= zeta <= z <= 1}; the lower boundary eta_l is the
// image of the diagonal zeta = z, tabulated parametrically. Fredholm charts
// map the unit square; eta_l has two straight branches meeting at
// xi = phi_j(1). Orientation flips with s = +-1 so every chart has the left
// edge xi = eta for eta >= 0 and a strictly decreasing lower boundary.
class CanonicalChart {
public:
    enum class Kind { Triangle, Fredholm };

    CanonicalChart() = default;
    CanonicalChart(Kind kind, int i, int j, std::shared_ptr<const TravelTimeMap> phi_i,
                   std::shared_ptr<const TravelTimeMap> phi_j,
                   std::function<double(double)> lambda_i, std::function<double(double)> lambda_j);

    Kind kind() const { return kind_; }
    int i() const { return i_; }
    int j() const { return j_; }
    double s() const { return s_; }
    double phi_i1() const { return phi_i1_; }
    double phi_j1() const { return phi_j1_; }
    double eta_bar() const { return eta_bar_; }  // top of the left edge
    double b_plus() const { return b_plus_; }    // xi extent

    void to_canonical(double z, double zeta, double* xi, double* eta) const;
    void to_physical(double xi, double eta, double* z, double* zeta) const;

    double eta_l(double xi) const;        // lower boundary
    double eta_l_prime(double xi) const;  // its slope (never crosses s*eta_l' = 1)
    double xi_l(double eta) const;        // left boundary
    double eta_up(double xi) const { return std::min(xi, 2.0 * eta_bar_ - xi); }

    bool contains(double xi, double eta, double slack = 1e-12) const {
        return xi >= -slack && xi <= b_plus_ + slack && eta >= eta_l(xi) - slack &&
               eta <= eta_up(xi) + slack;
    }

private:
    Kind kind_ = Kind::Triangle;
    int i_ = 0, j_ = 0;
    double s_ = 1.0;
    std::shared_ptr<const TravelTimeMap> pi_, pj_;
    std::function<double(double)> lam_i_, lam_j_;
    double phi_i1_ = 0.0, phi_j1_ = 0.0, eta_bar_ = 0.0, b_plus_ = 0.0;
    // diagonal image for triangle charts, ascending in xi
    std::vector<double> diag_xi_, diag_eta_, diag_z_;
};

}  // namespace backstep
