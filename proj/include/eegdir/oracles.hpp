#pragma once

// Brute-force reference implementations used by the self-verification suite
// and the test binaries. They share no code with the production paths they
// check: plain loops, complex arithmetic, and two-pass statistics.

#include <complex>
#include <span>
#include <vector>

namespace eegdir::oracle {

// Row-major [m, k] x [k, n], inner-product loop order.
std::vector<double> matmul(std::span<const double> a, std::span<const double> b, std::size_t m,
                           std::size_t k, std::size_t n);

std::vector<std::complex<double>> dft(std::span<const double> x);
std::vector<double> psd(std::span<const double> x);

double rrmse_temporal(std::span<const double> xhat, std::span<const double> x);
double rrmse_spectral(std::span<const double> xhat, std::span<const double> x);
double pearson(std::span<const double> a, std::span<const double> b);

// Standardize each group of channels of one position vector.
std::vector<double> group_norm(std::span<const double> x, std::size_t groups,
                               std::span<const double> gamma, std::span<const double> beta,
                               double eps);

// Multiplies channel pair j at position `pos` by e^{i sign pos theta_j}.
std::vector<double> rotate(std::span<const double> row, std::size_t pos, int sign, double theta_base);

// Single-head retention for one sequence x[T, d]:
//   out_n = sum_{m <= n} gamma^(n-m) (q_n . k_m) v_m
// with q_n = rot(x_n W_Q, n), k_m = rot(x_m W_K, m), v_m = x_m W_V.
std::vector<double> retention(std::span<const double> x, std::size_t len, std::size_t d,
                              std::span<const double> wq, std::span<const double> wk,
                              std::span<const double> wv, double gamma, double theta_base);

struct AdamWTrace {
    std::vector<double> theta;  // value after each step
};

// Scalar AdamW on f(theta) = theta^2, gradient 2 theta.
AdamWTrace adamw_quadratic(double theta0, std::size_t steps, double lr, double beta1, double beta2,
                           double eps, double weight_decay);

}  // namespace eegdir::oracle
