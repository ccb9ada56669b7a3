#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eegdir/data.hpp"
#include "eegdir/model.hpp"

namespace eegdir {

// In-place DFT. Radix-2 for power-of-two lengths, direct summation otherwise.
void dft(std::vector<std::complex<double>>& x);

// One-sided periodogram |DFT(x)[k]|^2 / N for k = 0..N/2. No window.
std::vector<double> periodogram_psd(std::span<const double> x);

double rrmse_temporal(std::span<const double> xhat, std::span<const double> x);
double rrmse_spectral(std::span<const double> xhat, std::span<const double> x);
double correlation_coefficient(std::span<const double> xhat, std::span<const double> x);

struct MetricsRow {
    std::optional<std::int32_t> snr_db;  // empty for the all-SNR row
    double rrmse_temporal = 0.0;
    double rrmse_spectral = 0.0;
    double cc = 0.0;
    std::size_t n_samples = 0;
};

// Rows sorted by SNR, followed by the all-SNR average.
struct MetricsReport {
    std::vector<MetricsRow> rows;

    const MetricsRow& overall() const { return rows.back(); }
};

// Maps a batch of normalized noisy segments [B, S] to estimates [B, S].
using Denoiser = std::function<Tensor(const Tensor&)>;

MetricsReport evaluate(const Denoiser& denoise, const Dataset& data, std::size_t workers = 1,
                       std::size_t batch = 64);
MetricsReport evaluate(const ModelParams& params, const ModelConfig& cfg, const Dataset& data,
                       std::size_t workers = 1);
// x_hat = y reference rows.
MetricsReport evaluate_identity(const Dataset& data);

std::string report_csv(const MetricsReport& report);
void write_report_csv(const std::filesystem::path& path, const MetricsReport& report);

}  // namespace eegdir
