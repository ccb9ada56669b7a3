#include "eegdir/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>

#include "binary_io.hpp"
#include "parallel.hpp"

namespace eegdir {

namespace {

bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                // Twiddles evaluated directly rather than by recurrence to keep
                // rounding error flat across the transform.
                const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

void dft_direct(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) /
                               static_cast<double>(n);
            acc += a[t] * std::polar(1.0, ang);
        }
        out[k] = acc;
    }
    a = std::move(out);
}

void require_same_length(const char* op, std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError(std::string(op) + ": lengths differ (" + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()) + ")");
    }
}

double rms_of(std::span<const double> v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

void dft(std::vector<std::complex<double>>& x) {
    if (is_pow2(x.size())) {
        fft_radix2(x);
    } else {
        dft_direct(x);
    }
}

std::vector<double> periodogram_psd(std::span<const double> x) {
    if (x.size() < 2) throw ContractError("periodogram_psd: need at least 2 samples");
    std::vector<std::complex<double>> bins(x.begin(), x.end());
    dft(bins);
    const std::size_t n = x.size();
    std::vector<double> psd(n / 2 + 1);
    for (std::size_t k = 0; k < psd.size(); ++k) psd[k] = std::norm(bins[k]) / static_cast<double>(n);
    return psd;
}

double rrmse_temporal(std::span<const double> xhat, std::span<const double> x) {
    require_same_length("rrmse_temporal", xhat, x);
    if (x.empty()) throw ContractError("rrmse_temporal: empty input");
    const double denom = rms_of(x);
    if (denom == 0.0) throw ContractError("rrmse_temporal: ground truth is silent");
    std::vector<double> diff(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) diff[i] = xhat[i] - x[i];
    return rms_of(diff) / denom;
}

double rrmse_spectral(std::span<const double> xhat, std::span<const double> x) {
    require_same_length("rrmse_spectral", xhat, x);
    const auto ph = periodogram_psd(xhat);
    const auto px = periodogram_psd(x);
    const double denom = rms_of(px);
    if (denom == 0.0) throw ContractError("rrmse_spectral: ground-truth spectrum is zero");
    std::vector<double> diff(px.size());
    for (std::size_t k = 0; k < px.size(); ++k) diff[k] = ph[k] - px[k];
    return rms_of(diff) / denom;
}

double correlation_coefficient(std::span<const double> xhat, std::span<const double> x) {
    require_same_length("correlation_coefficient", xhat, x);
    if (x.size() < 2) throw ContractError("correlation_coefficient: need at least 2 samples");
    // Streaming co-moments.
    double ma = 0.0, mb = 0.0, caa = 0.0, cbb = 0.0, cab = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double n = static_cast<double>(i + 1);
        const double da = xhat[i] - ma;
        const double db = x[i] - mb;
        ma += da / n;
        mb += db / n;
        caa += da * (xhat[i] - ma);
        cbb += db * (x[i] - mb);
        cab += da * (x[i] - mb);
    }
    if (caa == 0.0 || cbb == 0.0) throw ContractError("correlation_coefficient: zero variance input");
    return std::clamp(cab / std::sqrt(caa * cbb), -1.0, 1.0);
}

MetricsReport evaluate(const Denoiser& denoise, const Dataset& data, std::size_t workers,
                       std::size_t batch) {
    if (data.samples.empty()) throw ContractError("evaluate: dataset is empty");
    batch = std::max<std::size_t>(batch, 1);
    const std::size_t n = data.samples.size();
    const std::size_t s = data.seq_len;
    const std::size_t chunks = (n + batch - 1) / batch;

    struct Scores {
        double rt, rs, cc;
    };
    std::vector<Scores> scores(n);
    detail::parallel_for(chunks, workers, [&](std::size_t c) {
        const std::size_t lo = c * batch, hi = std::min(n, lo + batch);
        Tensor in({hi - lo, s});
        for (std::size_t i = lo; i < hi; ++i) {
            std::copy(data.samples[i].noisy.begin(), data.samples[i].noisy.end(),
                      in.data.begin() + static_cast<std::ptrdiff_t>((i - lo) * s));
        }
        const Tensor out = denoise(in);
        if (out.shape != in.shape) {
            throw DimensionError("evaluate: denoiser returned " + shape_str(out.shape) +
                                 " for input " + shape_str(in.shape));
        }
        for (std::size_t i = lo; i < hi; ++i) {
            const std::span<const double> xhat(out.data.data() + (i - lo) * s, s);
            const auto& x = data.samples[i].clean;
            scores[i] = {rrmse_temporal(xhat, x), rrmse_spectral(xhat, x),
                         correlation_coefficient(xhat, x)};
        }
    });

    std::map<std::int32_t, MetricsRow> groups;
    MetricsRow all;
    for (std::size_t i = 0; i < n; ++i) {
        auto& row = groups[data.samples[i].snr_db];
        row.snr_db = data.samples[i].snr_db;
        for (MetricsRow* r : {&row, &all}) {
            r->rrmse_temporal += scores[i].rt;
            r->rrmse_spectral += scores[i].rs;
            r->cc += scores[i].cc;
            ++r->n_samples;
        }
    }
    MetricsReport report;
    for (auto& [snr, row] : groups) report.rows.push_back(row);
    report.rows.push_back(all);
    for (auto& r : report.rows) {
        const double k = static_cast<double>(r.n_samples);
        r.rrmse_temporal /= k;
        r.rrmse_spectral /= k;
        r.cc /= k;
    }
    return report;
}

MetricsReport evaluate(const ModelParams& params, const ModelConfig& cfg, const Dataset& data,
                       std::size_t workers) {
    if (data.seq_len != cfg.seq_len) {
        throw ConfigError("evaluate: model seq_len " + std::to_string(cfg.seq_len) +
                          " does not match dataset seq_len " + std::to_string(data.seq_len));
    }
    return evaluate([&](const Tensor& in) { return predict(params, cfg, in); }, data, workers);
}

MetricsReport evaluate_identity(const Dataset& data) {
    return evaluate([](const Tensor& in) { return in; }, data);
}

std::string report_csv(const MetricsReport& report) {
    std::string out = "snr_db,rrmse_temporal,rrmse_spectral,cc,n_samples\n";
    char line[160];
    for (const auto& r : report.rows) {
        const std::string label = r.snr_db ? std::to_string(*r.snr_db) : "all";
        std::snprintf(line, sizeof line, "%s,%.10g,%.10g,%.10g,%zu\n", label.c_str(),
                      r.rrmse_temporal, r.rrmse_spectral, r.cc, r.n_samples);
        out += line;
    }
    return out;
}

void write_report_csv(const std::filesystem::path& path, const MetricsReport& report) {
    const std::string csv = report_csv(report);
    detail::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
}

}  // namespace eegdir
