#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "eegdir/errors.hpp"

namespace eegdir {

// One record, stored in the sigma_y-normalized domain: clean = x / sigma_y,
// noisy = y / sigma_y, sigma_y = population std of the raw mixture y.
struct SamplePair {
    std::vector<double> clean;
    std::vector<double> noisy;
    double sigma_y = 1.0;
    std::int32_t snr_db = 0;

    bool operator==(const SamplePair&) const = default;
};

struct Dataset {
    std::size_t seq_len = 0;
    std::vector<std::int32_t> snr_grid;
    std::vector<SamplePair> samples;

    bool operator==(const Dataset&) const = default;
};

double rms(std::span<const double> x);
// Signal-to-noise in dB: 10 log10(RMS(x) / RMS(scaled_noise)).
double measure_snr(std::span<const double> x, std::span<const double> scaled_noise);
// Noise scale giving measure_snr(x, lambda * n) == snr_db.
double lambda_for_snr(std::span<const double> x, std::span<const double> n, double snr_db);
// y = x + lambda n, then both divided by the population std of y.
SamplePair mix_pair(std::span<const double> x, std::span<const double> n, std::int32_t snr_db);

inline constexpr double kSampleRate = 256.0;

std::vector<double> synth_clean(std::size_t len, std::uint64_t seed, double sample_rate = kSampleRate);
std::vector<double> synth_eog_noise(std::size_t len, std::uint64_t seed,
                                    double sample_rate = kSampleRate);
std::vector<double> synth_emg_noise(std::size_t len, std::uint64_t seed,
                                    double sample_rate = kSampleRate);

enum class NoiseKind { Eog, Emg };

struct BuildOptions {
    std::size_t clean_count = 50;
    // 0 means "same as clean_count". The shorter source list is cycled.
    std::size_t noise_count = 0;
    NoiseKind noise = NoiseKind::Eog;
    std::vector<std::int32_t> snr_grid = {-7, -6, -5, -4, -3, -2, -1, 0, 1, 2};
    double split_ratio = 0.8;
    std::uint64_t seed = 42;
    std::size_t seq_len = 512;
    std::size_t workers = 1;
};

struct BuildResult {
    Dataset train;
    Dataset test;
    // Clean-source index of each sample, parallel to train.samples / test.samples.
    std::vector<std::size_t> train_sources;
    std::vector<std::size_t> test_sources;
    std::size_t skipped = 0;
};

std::vector<std::int32_t> snr_range(std::int32_t lo, std::int32_t hi);

// Pairs sources, splits by clean-source index, then expands every pair into one
// sample per grid level. Deterministic for a given seed regardless of workers.
BuildResult build_dataset(const BuildOptions& opts);

// "EDIR" container, little-endian, 32-bit float payload.
std::vector<std::uint8_t> encode_dataset(const Dataset& data);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace eegdir
