#include "eegdir/eegdir.h"

#include <cmath>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <span>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eegdir/autodiff.hpp"
#include "eegdir/data.hpp"
#include "eegdir/errors.hpp"
#include "eegdir/metrics.hpp"
#include "eegdir/model.hpp"
#include "eegdir/training.hpp"
#include "eegdir/verify.hpp"

struct eegdir_dataset {
    eegdir::Dataset data;
};

struct eegdir_model {
    eegdir::ModelConfig cfg;
    eegdir::ModelParams params;
};

struct eegdir_report {
    eegdir::MetricsReport report;
};

namespace {

thread_local std::string g_last_error;

// Raised for null pointers and out-of-range arguments at the API boundary.
struct InvalidArgument : std::runtime_error {
    using std::runtime_error::runtime_error;
};

eegdir_status status_for(eegdir::ErrorKind kind) {
    using K = eegdir::ErrorKind;
    switch (kind) {
        case K::Dimension: return EEGDIR_ERR_DIMENSION;
        case K::Config: return EEGDIR_ERR_CONFIG;
        case K::Contract: return EEGDIR_ERR_CONTRACT;
        case K::Numeric: return EEGDIR_ERR_NUMERIC;
        case K::Io: return EEGDIR_ERR_IO;
        case K::BadMagic: return EEGDIR_ERR_BAD_MAGIC;
        case K::VersionMismatch: return EEGDIR_ERR_VERSION;
        case K::Truncated: return EEGDIR_ERR_TRUNCATED;
        case K::ConfigMismatch: return EEGDIR_ERR_CONFIG_MISMATCH;
        case K::ShapeMismatch: return EEGDIR_ERR_SHAPE_MISMATCH;
        case K::DegenerateSample: return EEGDIR_ERR_DEGENERATE_SAMPLE;
    }
    return EEGDIR_ERR_INTERNAL;
}

template <class F>
eegdir_status guard(F&& fn) {
    g_last_error.clear();
    try {
        fn();
        return EEGDIR_OK;
    } catch (const eegdir::Error& e) {
        g_last_error = e.what();
        return status_for(e.kind());
    } catch (const InvalidArgument& e) {
        g_last_error = e.what();
        return EEGDIR_ERR_INVALID_ARGUMENT;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return EEGDIR_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return EEGDIR_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return EEGDIR_ERR_INTERNAL;
    }
}

void require(const void* p, const char* what) {
    if (!p) throw InvalidArgument(std::string(what) + " is NULL");
}

eegdir::ModelConfig to_cpp(const eegdir_model_config& c) {
    eegdir::ModelConfig m;
    m.seq_len = c.seq_len;
    m.patch = c.patch;
    m.d_model = c.d_model;
    m.heads = c.heads;
    m.layers = c.layers;
    m.ffn_mult = c.ffn_mult;
    m.eps_ln = c.eps_ln;
    m.eps_gn = c.eps_gn;
    m.stabilized_retention = c.stabilized_retention != 0;
    m.theta_base = c.theta_base;
    return m;
}

eegdir_model_config to_c(const eegdir::ModelConfig& m) {
    eegdir_model_config c{};
    c.seq_len = static_cast<uint32_t>(m.seq_len);
    c.patch = static_cast<uint32_t>(m.patch);
    c.d_model = static_cast<uint32_t>(m.d_model);
    c.heads = static_cast<uint32_t>(m.heads);
    c.layers = static_cast<uint32_t>(m.layers);
    c.ffn_mult = static_cast<uint32_t>(m.ffn_mult);
    c.eps_ln = m.eps_ln;
    c.eps_gn = m.eps_gn;
    c.stabilized_retention = m.stabilized_retention ? 1 : 0;
    c.theta_base = m.theta_base;
    return c;
}

double population_std(const double* x, std::size_t n) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (x[i] - mean) * (x[i] - mean);
    return std::sqrt(ss / static_cast<double>(n));
}

}  // namespace

extern "C" {

const char* eegdir_version(void) { return "0.1.0"; }

const char* eegdir_last_error(void) { return g_last_error.c_str(); }

const char* eegdir_status_name(eegdir_status status) {
    switch (status) {
        case EEGDIR_OK: return "ok";
        case EEGDIR_ERR_INVALID_ARGUMENT: return "invalid argument";
        case EEGDIR_ERR_DIMENSION: return "dimension error";
        case EEGDIR_ERR_CONFIG: return "config error";
        case EEGDIR_ERR_CONTRACT: return "contract error";
        case EEGDIR_ERR_NUMERIC: return "numeric error";
        case EEGDIR_ERR_IO: return "io error";
        case EEGDIR_ERR_BAD_MAGIC: return "bad magic";
        case EEGDIR_ERR_VERSION: return "version mismatch";
        case EEGDIR_ERR_TRUNCATED: return "truncated";
        case EEGDIR_ERR_CONFIG_MISMATCH: return "config mismatch";
        case EEGDIR_ERR_SHAPE_MISMATCH: return "shape mismatch";
        case EEGDIR_ERR_DEGENERATE_SAMPLE: return "degenerate sample";
        case EEGDIR_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

void eegdir_model_config_default(eegdir_model_config* cfg) {
    if (cfg) *cfg = to_c(eegdir::ModelConfig{});
}

eegdir_status eegdir_model_config_validate(const eegdir_model_config* cfg) {
    return guard([&] {
        require(cfg, "cfg");
        to_cpp(*cfg).validate();
    });
}

void eegdir_train_config_default(eegdir_train_config* cfg) {
    if (!cfg) return;
    const eegdir::TrainConfig t;
    cfg->epochs = static_cast<uint32_t>(t.epochs);
    cfg->batch_size = static_cast<uint32_t>(t.batch_size);
    cfg->seed = t.seed;
    cfg->lr = t.lr;
    cfg->beta1 = t.beta1;
    cfg->beta2 = t.beta2;
    cfg->eps_adam = t.eps_adam;
    cfg->weight_decay = t.weight_decay;
    cfg->log_every = static_cast<uint32_t>(t.log_every);
    cfg->checkpoint_path = nullptr;
    cfg->log_path = nullptr;
}

void eegdir_build_options_default(eegdir_build_options* opts) {
    if (!opts) return;
    const eegdir::BuildOptions b;
    opts->clean_count = static_cast<uint32_t>(b.clean_count);
    opts->noise_count = static_cast<uint32_t>(b.noise_count);
    opts->noise = EEGDIR_NOISE_EOG;
    opts->snr_min = b.snr_grid.front();
    opts->snr_max = b.snr_grid.back();
    opts->split_ratio = b.split_ratio;
    opts->seed = b.seed;
    opts->seq_len = static_cast<uint32_t>(b.seq_len);
    opts->workers = static_cast<uint32_t>(b.workers);
}

eegdir_status eegdir_dataset_build(const eegdir_build_options* opts, eegdir_dataset** train,
                                   eegdir_dataset** test) {
    return guard([&] {
        require(opts, "opts");
        require(train, "train");
        require(test, "test");
        eegdir::BuildOptions b;
        b.clean_count = opts->clean_count;
        b.noise_count = opts->noise_count;
        b.noise = opts->noise == EEGDIR_NOISE_EMG ? eegdir::NoiseKind::Emg : eegdir::NoiseKind::Eog;
        b.snr_grid = eegdir::snr_range(opts->snr_min, opts->snr_max);
        b.split_ratio = opts->split_ratio;
        b.seed = opts->seed;
        b.seq_len = opts->seq_len;
        b.workers = opts->workers;
        auto res = eegdir::build_dataset(b);
        auto tr = std::make_unique<eegdir_dataset>(eegdir_dataset{std::move(res.train)});
        auto te = std::make_unique<eegdir_dataset>(eegdir_dataset{std::move(res.test)});
        *train = tr.release();
        *test = te.release();
    });
}

eegdir_status eegdir_dataset_read(const char* path, eegdir_dataset** out) {
    return guard([&] {
        require(path, "path");
        require(out, "out");
        *out = new eegdir_dataset{eegdir::read_dataset(path)};
    });
}

eegdir_status eegdir_dataset_write(const eegdir_dataset* ds, const char* path) {
    return guard([&] {
        require(ds, "dataset");
        require(path, "path");
        eegdir::write_dataset(path, ds->data);
    });
}

size_t eegdir_dataset_size(const eegdir_dataset* ds) { return ds ? ds->data.samples.size() : 0; }

uint32_t eegdir_dataset_seq_len(const eegdir_dataset* ds) {
    return ds ? static_cast<uint32_t>(ds->data.seq_len) : 0;
}

size_t eegdir_dataset_snr_grid(const eegdir_dataset* ds, int32_t* out, size_t cap) {
    if (!ds) return 0;
    const auto& g = ds->data.snr_grid;
    if (out) {
        for (std::size_t i = 0; i < g.size() && i < cap; ++i) out[i] = g[i];
    }
    return g.size();
}

eegdir_status eegdir_dataset_sample(const eegdir_dataset* ds, size_t index, double* clean,
                                    double* noisy, double* sigma_y, int32_t* snr_db) {
    return guard([&] {
        require(ds, "dataset");
        if (index >= ds->data.samples.size()) {
            throw InvalidArgument("sample index " + std::to_string(index) + " out of range (size " +
                                  std::to_string(ds->data.samples.size()) + ")");
        }
        const auto& s = ds->data.samples[index];
        if (clean) std::copy(s.clean.begin(), s.clean.end(), clean);
        if (noisy) std::copy(s.noisy.begin(), s.noisy.end(), noisy);
        if (sigma_y) *sigma_y = s.sigma_y;
        if (snr_db) *snr_db = s.snr_db;
    });
}

void eegdir_dataset_free(eegdir_dataset* ds) { delete ds; }

eegdir_status eegdir_model_create(const eegdir_model_config* cfg, uint64_t seed, eegdir_model** out) {
    return guard([&] {
        require(cfg, "cfg");
        require(out, "out");
        auto c = to_cpp(*cfg);
        c.validate();
        *out = new eegdir_model{c, eegdir::init_params(c, seed)};
    });
}

eegdir_status eegdir_model_create_identity(const eegdir_model_config* cfg, eegdir_model** out) {
    return guard([&] {
        require(cfg, "cfg");
        require(out, "out");
        auto c = to_cpp(*cfg);
        c.validate();
        *out = new eegdir_model{c, eegdir::identity_params(c)};
    });
}

eegdir_status eegdir_model_load(const char* path, const eegdir_model_config* expected,
                                eegdir_model** out) {
    return guard([&] {
        require(path, "path");
        require(out, "out");
        std::optional<eegdir::ModelConfig> exp;
        if (expected) exp = to_cpp(*expected);
        auto ck = eegdir::load_checkpoint(path, exp ? &*exp : nullptr);
        *out = new eegdir_model{ck.cfg, std::move(ck.params)};
    });
}

eegdir_status eegdir_model_save(const eegdir_model* model, const char* path) {
    return guard([&] {
        require(model, "model");
        require(path, "path");
        eegdir::save_checkpoint(path, model->cfg, model->params);
    });
}

eegdir_status eegdir_model_get_config(const eegdir_model* model, eegdir_model_config* cfg) {
    return guard([&] {
        require(model, "model");
        require(cfg, "cfg");
        *cfg = to_c(model->cfg);
    });
}

size_t eegdir_model_param_count(const eegdir_model* model) {
    if (!model) return 0;
    std::size_t n = 0;
    eegdir::for_each_param(model->params,
                           [&](const std::string&, const eegdir::Tensor& t, eegdir::ParamRole) { n += t.size(); });
    return n;
}

eegdir_status eegdir_model_forward(const eegdir_model* model, const double* input, size_t batch,
                                   double* output) {
    return guard([&] {
        require(model, "model");
        require(input, "input");
        require(output, "output");
        if (batch == 0) return;
        const std::size_t s = model->cfg.seq_len;
        eegdir::Tensor x({batch, s}, std::vector<double>(input, input + batch * s));
        auto y = eegdir::predict(model->params, model->cfg, x);
        std::copy(y.data.begin(), y.data.end(), output);
    });
}

eegdir_status eegdir_model_denoise(const eegdir_model* model, const double* input, size_t batch,
                                   double* output) {
    return guard([&] {
        require(model, "model");
        require(input, "input");
        require(output, "output");
        if (batch == 0) return;
        const std::size_t s = model->cfg.seq_len;
        std::vector<double> sigma(batch);
        eegdir::Tensor x({batch, s}, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* row = input + b * s;
            sigma[b] = population_std(row, s);
            if (!(sigma[b] > 0.0) || !std::isfinite(sigma[b])) {
                throw eegdir::DegenerateSampleError("denoise: row " + std::to_string(b) +
                                                    " has zero or non-finite variance");
            }
            for (std::size_t i = 0; i < s; ++i) x.data[b * s + i] = row[i] / sigma[b];
        }
        auto y = eegdir::predict(model->params, model->cfg, x);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t i = 0; i < s; ++i) output[b * s + i] = y.data[b * s + i] * sigma[b];
        }
    });
}

void eegdir_model_free(eegdir_model* model) { delete model; }

eegdir_status eegdir_train(eegdir_model* model, const eegdir_dataset* train,
                           const eegdir_train_config* cfg, eegdir_progress_fn progress, void* user) {
    return guard([&] {
        require(model, "model");
        require(train, "train");
        require(cfg, "cfg");
        eegdir::TrainConfig tc;
        tc.epochs = cfg->epochs;
        tc.batch_size = cfg->batch_size;
        tc.seed = cfg->seed;
        tc.lr = cfg->lr;
        tc.beta1 = cfg->beta1;
        tc.beta2 = cfg->beta2;
        tc.eps_adam = cfg->eps_adam;
        tc.weight_decay = cfg->weight_decay;
        tc.log_every = cfg->log_every;
        if (cfg->checkpoint_path) tc.checkpoint_path = cfg->checkpoint_path;
        if (cfg->log_path) tc.log_path = cfg->log_path;
        eegdir::EpochCallback cb;
        if (progress) {
            cb = [&](std::size_t epoch, double loss) {
                progress(static_cast<uint32_t>(epoch), cfg->epochs, loss, user);
            };
        }
        // Train a copy so a diverged run leaves the handle's weights intact.
        auto params = model->params;
        eegdir::train(params, model->cfg, train->data, tc, cb);
        model->params = std::move(params);
    });
}

eegdir_status eegdir_evaluate(const eegdir_model* model, const eegdir_dataset* ds, uint32_t workers,
                              eegdir_report** out) {
    return guard([&] {
        require(ds, "dataset");
        require(out, "out");
        eegdir::MetricsReport r = model
            ? eegdir::evaluate(model->params, model->cfg, ds->data, workers ? workers : 1)
            : eegdir::evaluate_identity(ds->data);
        *out = new eegdir_report{std::move(r)};
    });
}

size_t eegdir_report_rows(const eegdir_report* report) { return report ? report->report.rows.size() : 0; }

eegdir_status eegdir_report_row_get(const eegdir_report* report, size_t index, eegdir_report_row* row) {
    return guard([&] {
        require(report, "report");
        require(row, "row");
        if (index >= report->report.rows.size()) throw InvalidArgument("report row index out of range");
        const auto& r = report->report.rows[index];
        row->is_all = r.snr_db ? 0 : 1;
        row->snr_db = r.snr_db.value_or(0);
        row->rrmse_temporal = r.rrmse_temporal;
        row->rrmse_spectral = r.rrmse_spectral;
        row->cc = r.cc;
        row->n_samples = r.n_samples;
    });
}

eegdir_status eegdir_report_write_csv(const eegdir_report* report, const char* path) {
    return guard([&] {
        require(report, "report");
        require(path, "path");
        eegdir::write_report_csv(path, report->report);
    });
}

void eegdir_report_free(eegdir_report* report) { delete report; }

eegdir_status eegdir_metrics(const double* xhat, const double* x, size_t n, double* rrmse_temporal,
                             double* rrmse_spectral, double* cc) {
    return guard([&] {
        require(xhat, "xhat");
        require(x, "x");
        std::span<const double> a(xhat, n), b(x, n);
        if (rrmse_temporal) *rrmse_temporal = eegdir::rrmse_temporal(a, b);
        if (rrmse_spectral) *rrmse_spectral = eegdir::rrmse_spectral(a, b);
        if (cc) *cc = eegdir::correlation_coefficient(a, b);
    });
}

eegdir_status eegdir_verify(const char* const* only, size_t n_only, uint64_t seed,
                            eegdir_verify_fn on_result, void* user, int* all_passed) {
    return guard([&] {
        if (n_only) require(only, "only");
        std::vector<std::string> names;
        for (std::size_t i = 0; i < n_only; ++i) {
            require(only[i], "only[i]");
            names.emplace_back(only[i]);
        }
        bool ok = true;
        eegdir::run_verify(names, seed, [&](const eegdir::VerifyResult& r) {
            ok = ok && r.passed;
            if (on_result) on_result(r.name.c_str(), r.passed ? 1 : 0, r.detail.c_str(), r.seconds, user);
        });
        if (all_passed) *all_passed = ok ? 1 : 0;
    });
}

eegdir_status eegdir_debug_inject_fault(eegdir_fault fault) {
    return guard([&] {
        switch (fault) {
            case EEGDIR_FAULT_NONE: eegdir::ad::testing::set_fault(eegdir::ad::testing::Fault::None); break;
            case EEGDIR_FAULT_RETENTION_BACKWARD:
                eegdir::ad::testing::set_fault(eegdir::ad::testing::Fault::DecayMaskBackward);
                break;
            default: throw InvalidArgument("unknown fault id " + std::to_string(static_cast<int>(fault)));
        }
    });
}

}  // extern "C"
