#include "eegdir/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>

#include "binary_io.hpp"
#include "parallel.hpp"

namespace eegdir {

double rms(std::span<const double> x) {
    if (x.empty()) throw ContractError("rms: empty input");
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

double measure_snr(std::span<const double> x, std::span<const double> scaled_noise) {
    const double rn = rms(scaled_noise);
    if (rn == 0.0) throw ContractError("measure_snr: noise is silent");
    return 10.0 * std::log10(rms(x) / rn);
}

double lambda_for_snr(std::span<const double> x, std::span<const double> n, double snr_db) {
    const double rn = rms(n);
    if (rn == 0.0) throw ContractError("lambda_for_snr: noise is silent");
    return rms(x) / (rn * std::pow(10.0, snr_db / 10.0));
}

SamplePair mix_pair(std::span<const double> x, std::span<const double> n, std::int32_t snr_db) {
    if (x.size() != n.size()) {
        throw DimensionError("mix_pair: clean length " + std::to_string(x.size()) +
                             " != noise length " + std::to_string(n.size()));
    }
    const double lambda = lambda_for_snr(x, n, snr_db);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + lambda * n[i];
    const double mu = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double var = 0.0;
    for (double v : y) var += (v - mu) * (v - mu);
    const double sigma = std::sqrt(var / static_cast<double>(y.size()));
    if (!(sigma > 0.0)) throw DegenerateSampleError("mix_pair: mixture has zero variance");

    SamplePair s;
    s.clean.resize(x.size());
    s.noisy.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        s.clean[i] = x[i] / sigma;
        s.noisy[i] = y[i] / sigma;
    }
    s.sigma_y = sigma;
    s.snr_db = snr_db;
    return s;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

void remove_mean(std::vector<double>& x) {
    const double mu = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    for (auto& v : x) v -= mu;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

enum Stream : std::uint64_t { kClean = 1, kEog = 2, kEmg = 3, kSplit = 4 };

}  // namespace

std::vector<double> synth_clean(std::size_t len, std::uint64_t seed, double sample_rate) {
    if (len < 16) throw ContractError("synth_clean: length must be >= 16");
    auto rng = make_rng(seed, kClean);
    std::vector<double> x(len, 0.0);
    const int tones = std::uniform_int_distribution<int>(3, 6)(rng);
    for (int k = 0; k < tones; ++k) {
        const double f = uniform(rng, 4.0, 30.0);
        const double phase = uniform(rng, 0.0, kTwoPi);
        const double amp = uniform(rng, 0.5, 1.5);
        for (std::size_t i = 0; i < len; ++i) {
            x[i] += amp * std::sin(kTwoPi * f * static_cast<double>(i) / sample_rate + phase);
        }
    }
    // 1/f background: power ~ 1/f across 1..40 Hz, scaled 20 dB below the tones.
    std::vector<double> bg(len, 0.0);
    for (double f = 1.0; f <= 40.0; f += 0.5) {
        const double phase = uniform(rng, 0.0, kTwoPi);
        const double amp = 1.0 / std::sqrt(f);
        for (std::size_t i = 0; i < len; ++i) {
            bg[i] += amp * std::sin(kTwoPi * f * static_cast<double>(i) / sample_rate + phase);
        }
    }
    const double tone_rms = rms(x);
    const double bg_rms = rms(bg);
    const double k = bg_rms > 0.0 ? 0.1 * tone_rms / bg_rms : 0.0;
    for (std::size_t i = 0; i < len; ++i) x[i] += k * bg[i];
    remove_mean(x);
    return x;
}

std::vector<double> synth_eog_noise(std::size_t len, std::uint64_t seed, double sample_rate) {
    auto rng = make_rng(seed, kEog);
    std::vector<double> n(len, 0.0);
    const int waves = std::uniform_int_distribution<int>(2, 3)(rng);
    for (int k = 0; k < waves; ++k) {
        const double f = uniform(rng, 0.5, 4.0);
        const double phase = uniform(rng, 0.0, kTwoPi);
        const double amp = uniform(rng, 2.0, 6.0);
        for (std::size_t i = 0; i < len; ++i) {
            n[i] += amp * std::sin(kTwoPi * f * static_cast<double>(i) / sample_rate + phase);
        }
    }
    // Smoothed steps stand in for blinks and saccades.
    const double duration = static_cast<double>(len) / sample_rate;
    const int steps = std::uniform_int_distribution<int>(1, 3)(rng);
    for (int k = 0; k < steps; ++k) {
        const double at = uniform(rng, 0.0, duration);
        const double width = uniform(rng, 0.04, 0.1);
        const double amp = uniform(rng, -6.0, 6.0);
        for (std::size_t i = 0; i < len; ++i) {
            const double t = static_cast<double>(i) / sample_rate;
            n[i] += amp / (1.0 + std::exp(-(t - at) / width));
        }
    }
    remove_mean(n);
    return n;
}

std::vector<double> synth_emg_noise(std::size_t len, std::uint64_t seed, double sample_rate) {
    auto rng = make_rng(seed, kEmg);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> carrier(len, 0.0);
    for (int k = 0; k < 48; ++k) {
        const double f = uniform(rng, 20.0, 80.0);
        const double phase = uniform(rng, 0.0, kTwoPi);
        const double amp = normal(rng);
        for (std::size_t i = 0; i < len; ++i) {
            carrier[i] += amp * std::sin(kTwoPi * f * static_cast<double>(i) / sample_rate + phase);
        }
    }
    const double duration = static_cast<double>(len) / sample_rate;
    std::vector<double> envelope(len, 0.3);
    const int bursts = std::uniform_int_distribution<int>(1, 4)(rng);
    for (int k = 0; k < bursts; ++k) {
        const double at = uniform(rng, 0.0, duration);
        const double width = uniform(rng, 0.1, 0.3);
        const double amp = uniform(rng, 0.5, 2.0);
        for (std::size_t i = 0; i < len; ++i) {
            const double u = (static_cast<double>(i) / sample_rate - at) / width;
            envelope[i] += amp * std::exp(-u * u);
        }
    }
    std::vector<double> n(len);
    for (std::size_t i = 0; i < len; ++i) n[i] = envelope[i] * carrier[i];
    return n;
}

std::vector<std::int32_t> snr_range(std::int32_t lo, std::int32_t hi) {
    if (lo > hi) {
        throw ConfigError("snr range: min " + std::to_string(lo) + " exceeds max " + std::to_string(hi));
    }
    std::vector<std::int32_t> g;
    for (std::int32_t s = lo; s <= hi; ++s) g.push_back(s);
    return g;
}


BuildResult build_dataset(const BuildOptions& opts) {
    if (opts.clean_count == 0) throw ConfigError("build_dataset: clean_count must be positive");
    if (!(opts.split_ratio > 0.0 && opts.split_ratio < 1.0)) {
        throw ConfigError("build_dataset: split ratio must lie in (0, 1)");
    }
    if (opts.snr_grid.empty()) throw ConfigError("build_dataset: empty SNR grid");
    if (opts.seq_len < 16) throw ConfigError("build_dataset: seq_len must be >= 16");

    const std::size_t n_clean = opts.clean_count;
    const std::size_t n_noise = opts.noise_count ? opts.noise_count : opts.clean_count;
    const std::size_t n_pairs = std::max(n_clean, n_noise);

    std::vector<std::vector<double>> clean(n_clean), noise(n_noise);
    detail::parallel_for(n_clean, opts.workers, [&](std::size_t i) {
        clean[i] = synth_clean(opts.seq_len, opts.seed * 1000003ULL + i);
    });
    detail::parallel_for(n_noise, opts.workers, [&](std::size_t i) {
        const std::uint64_t s = opts.seed * 1000003ULL + i;
        noise[i] = opts.noise == NoiseKind::Eog ? synth_eog_noise(opts.seq_len, s)
                                                : synth_emg_noise(opts.seq_len, s);
    });

    // Split clean sources before mixing so no clean segment lands in both sets.
    std::vector<std::size_t> order(n_clean);
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(opts.seed, kSplit);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(
        std::llround(opts.split_ratio * static_cast<double>(n_clean)));
    std::vector<bool> in_train(n_clean, false);
    for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

    const std::size_t levels = opts.snr_grid.size();
    std::vector<std::optional<SamplePair>> mixed(n_pairs * levels);
    detail::parallel_for(n_pairs, opts.workers, [&](std::size_t k) {
        const auto& x = clean[k % n_clean];
        const auto& n = noise[k % n_noise];
        for (std::size_t g = 0; g < levels; ++g) {
            try {
                mixed[k * levels + g] = mix_pair(x, n, opts.snr_grid[g]);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::DegenerateSample && e.kind() != ErrorKind::Contract) throw;
            }
        }
    });

    BuildResult res;
    res.train.seq_len = res.test.seq_len = opts.seq_len;
    res.train.snr_grid = res.test.snr_grid = opts.snr_grid;
    for (std::size_t k = 0; k < n_pairs; ++k) {
        const std::size_t src = k % n_clean;
        auto& split = in_train[src] ? res.train : res.test;
        auto& sources = in_train[src] ? res.train_sources : res.test_sources;
        for (std::size_t g = 0; g < levels; ++g) {
            auto& m = mixed[k * levels + g];
            if (!m) {
                ++res.skipped;
                std::cerr << "warning: skipping degenerate pair " << k << " at "
                          << opts.snr_grid[g] << " dB\n";
                continue;
            }
            split.samples.push_back(std::move(*m));
            sources.push_back(src);
        }
    }
    return res;
}

namespace {
constexpr char kDatasetMagic[4] = {'E', 'D', 'I', 'R'};
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& data) {
    detail::ByteWriter w;
    w.bytes(kDatasetMagic, 4);
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(data.samples.size()));
    w.u32(static_cast<std::uint32_t>(data.seq_len));
    w.u32(static_cast<std::uint32_t>(data.snr_grid.size()));
    for (auto s : data.snr_grid) w.i32(s);
    for (const auto& s : data.samples) {
        if (s.clean.size() != data.seq_len || s.noisy.size() != data.seq_len) {
            throw DimensionError("encode_dataset: sample length does not match seq_len " +
                                 std::to_string(data.seq_len));
        }
        for (double v : s.clean) w.f32(static_cast<float>(v));
        for (double v : s.noisy) w.f32(static_cast<float>(v));
        w.f32(static_cast<float>(s.sigma_y));
        w.i32(s.snr_db);
    }
    return w.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
    const std::size_t head = std::min<std::size_t>(bytes.size(), 4);
    if (!std::equal(kDatasetMagic, kDatasetMagic + head, bytes.begin())) {
        throw FormatError(ErrorKind::BadMagic, "dataset: bad magic");
    }
    if (head < 4) throw FormatError(ErrorKind::Truncated, "dataset: truncated payload");
    detail::ByteReader r(bytes.subspan(4), "dataset");
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion) {
        throw FormatError(ErrorKind::VersionMismatch,
                          "dataset: version " + std::to_string(version) + " unsupported");
    }
    Dataset d;
    const std::uint32_t count = r.u32();
    d.seq_len = r.u32();
    const std::uint32_t grid = r.u32();
    r.need(static_cast<std::size_t>(grid) * 4);
    for (std::uint32_t i = 0; i < grid; ++i) d.snr_grid.push_back(r.i32());
    const std::size_t record = (2 * d.seq_len + 2) * 4;
    if (r.remaining() / record < count) {
        throw FormatError(ErrorKind::Truncated, "dataset: truncated payload");
    }
    d.samples.resize(count);
    auto finite = [](float v) {
        if (!std::isfinite(v)) throw NumericError("dataset: non-finite value in payload");
        return static_cast<double>(v);
    };
    for (auto& s : d.samples) {
        s.clean.resize(d.seq_len);
        s.noisy.resize(d.seq_len);
        for (auto& v : s.clean) v = finite(r.f32());
        for (auto& v : s.noisy) v = finite(r.f32());
        s.sigma_y = finite(r.f32());
        s.snr_db = r.i32();
    }
    if (r.remaining() != 0) {
        throw FormatError(ErrorKind::Truncated, "dataset: " + std::to_string(r.remaining()) +
                                                    " bytes past the declared payload");
    }
    return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
    const auto bytes = encode_dataset(data);
    detail::write_file(path, bytes);
}

Dataset read_dataset(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    try {
        return decode_dataset(bytes);
    } catch (const FormatError& e) {
        throw FormatError(e.kind(), path.string() + ": " + e.what());
    }
}

}  // namespace eegdir
