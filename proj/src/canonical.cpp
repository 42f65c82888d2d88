#include "backstep/canonical.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "backstep/numerics.hpp"

namespace backstep {

TravelTimeMap::TravelTimeMap(const std::function<double(double)>& lambda, int grid_nodes) {
    if (grid_nodes < 2) throw std::invalid_argument("TravelTimeMap needs >= 2 grid nodes");
    n_ = grid_nodes;
    h_ = 1.0 / (n_ - 1);
    std::vector<double> f(n_);
    for (int k = 0; k < n_; ++k) {
        double lam = lambda(k * h_);
        if (!(lam > 0.0)) throw std::domain_error("diffusion coefficient must be positive");
        f[k] = 1.0 / std::sqrt(lam);
    }
    phi_.assign(n_, 0.0);
    for (int k = 1; k < n_; ++k) phi_[k] = phi_[k - 1] + 0.5 * h_ * (f[k] + f[k - 1]);
}

double TravelTimeMap::phi(double z) const {
    if (z <= 0.0) return 0.0;
    if (z >= 1.0) return phi_.back();
    double u = z / h_;
    int k = std::min(static_cast<int>(u), n_ - 2);
    double t = u - k;
    return phi_[k] + t * (phi_[k + 1] - phi_[k]);
}

double TravelTimeMap::inv(double p) const {
    if (p <= 0.0) return 0.0;
    if (p >= phi_.back()) return 1.0;
    auto it = std::upper_bound(phi_.begin(), phi_.end(), p);
    int k = static_cast<int>(it - phi_.begin()) - 1;
    double t = (p - phi_[k]) / (phi_[k + 1] - phi_[k]);
    return (k + t) * h_;
}

CanonicalChart::CanonicalChart(Kind kind, int i, int j, std::shared_ptr<const TravelTimeMap> phi_i,
                               std::shared_ptr<const TravelTimeMap> phi_j,
                               std::function<double(double)> lambda_i,
                               std::function<double(double)> lambda_j)
    : kind_(kind), i_(i), j_(j), pi_(std::move(phi_i)), pj_(std::move(phi_j)),
      lam_i_(std::move(lambda_i)), lam_j_(std::move(lambda_j)) {
    s_ = (kind_ == Kind::Fredholm || i <= j) ? 1.0 : -1.0;
    phi_i1_ = pi_->phi1();
    phi_j1_ = pj_->phi1();
    b_plus_ = phi_i1_ + phi_j1_;
    eta_bar_ = kind_ == Kind::Fredholm ? phi_i1_ : std::min(phi_i1_, phi_j1_);

    if (kind_ == Kind::Triangle && i_ != j_) {
        const int samples = 4001;
        diag_z_.resize(samples);
        diag_xi_.resize(samples);
        diag_eta_.resize(samples);
        for (int k = 0; k < samples; ++k) {
            double z = static_cast<double>(k) / (samples - 1);
            double xi, eta;
            to_canonical(z, z, &xi, &eta);
            diag_z_[k] = z;
            diag_xi_[k] = xi;
            diag_eta_[k] = eta;
        }
        if (diag_xi_.front() > diag_xi_.back()) {
            std::reverse(diag_z_.begin(), diag_z_.end());
            std::reverse(diag_xi_.begin(), diag_xi_.end());
            std::reverse(diag_eta_.begin(), diag_eta_.end());
        }
        diag_xi_.front() = 0.0;
        diag_eta_.front() = 0.0;
        diag_xi_.back() = b_plus_;
    }
}

void CanonicalChart::to_canonical(double z, double zeta, double* xi, double* eta) const {
    double fi = pi_->phi(z), fj = pj_->phi(zeta);
    *xi = 0.5 * (1.0 - s_) * (phi_i1_ + phi_j1_) + s_ * (fi + fj);
    *eta = -0.5 * (1.0 - s_) * (phi_i1_ - phi_j1_) + fi - fj;
}

void CanonicalChart::to_physical(double xi, double eta, double* z, double* zeta) const {
    *z = pi_->inv(0.5 * (s_ * xi + eta) + 0.5 * (1.0 - s_) * phi_i1_);
    *zeta = pj_->inv(0.5 * (s_ * xi - eta) + 0.5 * (1.0 - s_) * phi_j1_);
}

double CanonicalChart::eta_l(double xi) const {
    if (kind_ == Kind::Fredholm) return xi <= phi_j1_ ? -xi : xi - 2.0 * phi_j1_;
    if (i_ == j_) return 0.0;
    if (xi <= 0.0) return 0.0;
    if (xi >= b_plus_) return diag_eta_.back();
    return lerp_table(diag_xi_, diag_eta_, xi);
}

double CanonicalChart::eta_l_prime(double xi) const {
    if (kind_ == Kind::Fredholm) return xi <= phi_j1_ ? -1.0 : 1.0;
    if (i_ == j_) return 0.0;
    double z = lerp_table(diag_xi_, diag_z_, std::clamp(xi, 0.0, b_plus_));
    double ri = 1.0 / std::sqrt(lam_i_(z)), rj = 1.0 / std::sqrt(lam_j_(z));
    return (ri - rj) / (s_ * (ri + rj));
}

double CanonicalChart::xi_l(double eta) const {
    if (eta >= 0.0) return eta;
    if (kind_ == Kind::Fredholm) return -eta;
    if (diag_eta_.empty()) return 0.0;  // i == j: the domain has no eta < 0 part
    // invert the (descending) diagonal table
    if (eta <= diag_eta_.back()) return b_plus_;
    auto it = std::lower_bound(diag_eta_.begin(), diag_eta_.end(), eta, std::greater<double>());
    int k = static_cast<int>(it - diag_eta_.begin());
    if (k == 0) return diag_xi_.front();
    double t = (eta - diag_eta_[k - 1]) / (diag_eta_[k] - diag_eta_[k - 1]);
    return diag_xi_[k - 1] + t * (diag_xi_[k] - diag_xi_[k - 1]);
}

}  // namespace backstep
