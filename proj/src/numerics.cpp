#include "backstep/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>

namespace backstep {

double trapz(const std::vector<double>& x, const std::vector<double>& f) {
    double acc = 0.0;
    for (std::size_t k = 1; k < x.size(); ++k) acc += 0.5 * (x[k] - x[k - 1]) * (f[k] + f[k - 1]);
    return acc;
}

std::vector<double> cumtrapz(const std::vector<double>& x, const std::vector<double>& f) {
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t k = 1; k < x.size(); ++k)
        out[k] = out[k - 1] + 0.5 * (x[k] - x[k - 1]) * (f[k] + f[k - 1]);
    return out;
}

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> out(n);
    for (int k = 0; k < n; ++k) out[k] = a + (b - a) * static_cast<double>(k) / (n - 1);
    out.back() = b;
    return out;
}

double lerp_table(const std::vector<double>& x, const std::vector<double>& y, double xq) {
    if (xq <= x.front()) return y.front();
    if (xq >= x.back()) return y.back();
    auto it = std::upper_bound(x.begin(), x.end(), xq);
    std::size_t k = static_cast<std::size_t>(it - x.begin());
    double t = (xq - x[k - 1]) / (x[k] - x[k - 1]);
    return y[k - 1] + t * (y[k] - y[k - 1]);
}

Pchip::Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    std::size_t n = x_.size();
    if (n < 2 || n != y_.size()) throw std::invalid_argument("Pchip needs >= 2 matching samples");
    d_.assign(n, 0.0);
    std::vector<double> h(n - 1), s(n - 1);
    for (std::size_t k = 0; k + 1 < n; ++k) {
        h[k] = x_[k + 1] - x_[k];
        s[k] = (y_[k + 1] - y_[k]) / h[k];
    }
    if (n == 2) {
        d_[0] = d_[1] = s[0];
        return;
    }
    for (std::size_t k = 1; k + 1 < n; ++k) {
        if (s[k - 1] * s[k] <= 0.0) {
            d_[k] = 0.0;
        } else {
            double w1 = 2.0 * h[k] + h[k - 1];
            double w2 = h[k] + 2.0 * h[k - 1];
            d_[k] = (w1 + w2) / (w1 / s[k - 1] + w2 / s[k]);
        }
    }
    auto end_slope = [](double h0, double h1, double s0, double s1) {
        double d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
        if (d * s0 <= 0.0) return 0.0;
        if (s0 * s1 < 0.0 && std::abs(d) > 3.0 * std::abs(s0)) return 3.0 * s0;
        return d;
    };
    d_[0] = end_slope(h[0], h[1], s[0], s[1]);
    d_[n - 1] = end_slope(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
}

double Pchip::operator()(double xq) const {
    if (xq <= x_.front()) return y_.front();
    if (xq >= x_.back()) return y_.back();
    auto it = std::upper_bound(x_.begin(), x_.end(), xq);
    std::size_t k = static_cast<std::size_t>(it - x_.begin()) - 1;
    double h = x_[k + 1] - x_[k];
    double t = (xq - x_[k]) / h;
    double h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
    double h10 = t * (1.0 - t) * (1.0 - t);
    double h01 = t * t * (3.0 - 2.0 * t);
    double h11 = t * t * (t - 1.0);
    return h00 * y_[k] + h10 * h * d_[k] + h01 * y_[k + 1] + h11 * h * d_[k + 1];
}

CubicSpline::CubicSpline(const std::vector<double>& x, const std::vector<double>& y) : x_(x), y_(y) {
    std::size_t n = x.size();
    if (n != y.size() || n < 2) throw std::invalid_argument("CubicSpline needs >= 2 matching samples");
    m_.assign(n, 0.0);
    if (n == 2) return;
    // Tridiagonal solve for natural end conditions.
    std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), r(n, 0.0);
    b[0] = 1.0;
    b[n - 1] = 1.0;
    for (std::size_t k = 1; k + 1 < n; ++k) {
        double hl = x[k] - x[k - 1], hr = x[k + 1] - x[k];
        a[k] = hl / 6.0;
        b[k] = (hl + hr) / 3.0;
        c[k] = hr / 6.0;
        r[k] = (y[k + 1] - y[k]) / hr - (y[k] - y[k - 1]) / hl;
    }
    for (std::size_t k = 1; k < n; ++k) {
        double w = a[k] / b[k - 1];
        b[k] -= w * c[k - 1];
        r[k] -= w * r[k - 1];
    }
    m_[n - 1] = r[n - 1] / b[n - 1];
    for (std::size_t k = n - 1; k-- > 0;) m_[k] = (r[k] - c[k] * m_[k + 1]) / b[k];
}

double CubicSpline::operator()(double xq) const {
    std::size_t n = x_.size();
    if (n == 2) {
        double t = (xq - x_[0]) / (x_[1] - x_[0]);
        return y_[0] + t * (y_[1] - y_[0]);
    }
    std::size_t k;
    if (xq <= x_.front()) {
        k = 0;
    } else if (xq >= x_.back()) {
        k = n - 2;
    } else {
        k = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), xq) - x_.begin()) - 1;
    }
    double h = x_[k + 1] - x_[k];
    double A = (x_[k + 1] - xq) / h, B = 1.0 - A;
    return A * y_[k] + B * y_[k + 1] +
           ((A * A * A - A) * m_[k] + (B * B * B - B) * m_[k + 1]) * h * h / 6.0;
}

namespace {

int worker_count() {
    unsigned hw = std::thread::hardware_concurrency();
    int n = hw == 0 ? 1 : static_cast<int>(hw);
    if (const char* cap = std::getenv("BACKSTEP_THREADS")) {
        int c = std::atoi(cap);
        if (c > 0) n = std::min(n, c);
    }
    return n;
}

}  // namespace

void parallel_for(int count, const std::function<void(int)>& fn) {
    int workers = std::min(worker_count(), count);
    if (workers <= 1) {
        for (int k = 0; k < count; ++k) fn(k);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int k = w; k < count; k += workers) fn(k);
        });
    }
    for (auto& t : pool) t.join();
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace backstep
