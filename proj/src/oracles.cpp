#include "eegdir/oracles.hpp"

#include <cmath>
#include <numbers>

namespace eegdir::oracle {

std::vector<double> matmul(std::span<const double> a, std::span<const double> b, std::size_t m,
                           std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t q = 0; q < k; ++q) acc += a[i * k + q] * b[q * n + j];
            c[i * n + j] = acc;
        }
    }
    return c;
}

std::vector<std::complex<double>> dft(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        double re = 0.0, im = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = 2.0 * std::numbers::pi * static_cast<double>(k) * static_cast<double>(t) /
                               static_cast<double>(n);
            re += x[t] * std::cos(ang);
            im -= x[t] * std::sin(ang);
        }
        out[k] = {re, im};
    }
    return out;
}

std::vector<double> psd(std::span<const double> x) {
    const auto bins = dft(x);
    std::vector<double> p(x.size() / 2 + 1);
    for (std::size_t k = 0; k < p.size(); ++k) {
        p[k] = (bins[k].real() * bins[k].real() + bins[k].imag() * bins[k].imag()) /
               static_cast<double>(x.size());
    }
    return p;
}

namespace {

double root_mean_square(std::span<const double> v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

double rrmse_temporal(std::span<const double> xhat, std::span<const double> x) {
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = xhat[i] - x[i];
    return root_mean_square(d) / root_mean_square(x);
}

double rrmse_spectral(std::span<const double> xhat, std::span<const double> x) {
    const auto ph = psd(xhat);
    const auto px = psd(x);
    std::vector<double> d(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) d[i] = ph[i] - px[i];
    return root_mean_square(d) / root_mean_square(px);
}

double pearson(std::span<const double> a, std::span<const double> b) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

std::vector<double> group_norm(std::span<const double> x, std::size_t groups,
                               std::span<const double> gamma, std::span<const double> beta,
                               double eps) {
    const std::size_t width = x.size() / groups;
    std::vector<double> out(x.size());
    for (std::size_t g = 0; g < groups; ++g) {
        const auto slice = x.subspan(g * width, width);
        double mu = 0.0;
        for (double v : slice) mu += v;
        mu /= static_cast<double>(width);
        double var = 0.0;
        for (double v : slice) var += (v - mu) * (v - mu);
        var /= static_cast<double>(width);
        for (std::size_t j = 0; j < width; ++j) {
            const std::size_t c = g * width + j;
            out[c] = (x[c] - mu) / std::sqrt(var + eps) * gamma[c] + beta[c];
        }
    }
    return out;
}

std::vector<double> rotate(std::span<const double> row, std::size_t pos, int sign, double theta_base) {
    const std::size_t d = row.size();
    std::vector<double> out(d);
    for (std::size_t j = 0; j < d / 2; ++j) {
        const double theta = std::pow(theta_base, -2.0 * static_cast<double>(j) / static_cast<double>(d));
        const std::complex<double> z(row[2 * j], row[2 * j + 1]);
        const auto r = z * std::exp(std::complex<double>(0.0, sign * static_cast<double>(pos) * theta));
        out[2 * j] = r.real();
        out[2 * j + 1] = r.imag();
    }
    return out;
}

std::vector<double> retention(std::span<const double> x, std::size_t len, std::size_t d,
                              std::span<const double> wq, std::span<const double> wk,
                              std::span<const double> wv, double gamma, double theta_base) {
    std::vector<std::vector<double>> q(len), k(len), v(len);
    for (std::size_t n = 0; n < len; ++n) {
        const auto xn = x.subspan(n * d, d);
        q[n] = rotate(matmul(xn, wq, 1, d, d), n, +1, theta_base);
        k[n] = rotate(matmul(xn, wk, 1, d, d), n, +1, theta_base);
        v[n] = matmul(xn, wv, 1, d, d);
    }
    std::vector<double> out(len * d, 0.0);
    for (std::size_t n = 0; n < len; ++n) {
        for (std::size_t m = 0; m <= n; ++m) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += q[n][c] * k[m][c];
            const double w = std::pow(gamma, static_cast<double>(n - m)) * dot;
            for (std::size_t c = 0; c < d; ++c) out[n * d + c] += w * v[m][c];
        }
    }
    return out;
}

AdamWTrace adamw_quadratic(double theta0, std::size_t steps, double lr, double beta1, double beta2,
                           double eps, double weight_decay) {
    AdamWTrace tr;
    double theta = theta0, m = 0.0, v = 0.0;
    double b1t = 1.0, b2t = 1.0;
    for (std::size_t t = 1; t <= steps; ++t) {
        const double g = 2.0 * theta;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        b1t *= beta1;
        b2t *= beta2;
        const double update = (m / (1.0 - b1t)) / (std::sqrt(v / (1.0 - b2t)) + eps);
        theta = theta - lr * update - lr * weight_decay * theta;
        tr.theta.push_back(theta);
    }
    return tr;
}

}  // namespace eegdir::oracle
