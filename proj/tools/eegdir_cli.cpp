// eegdir command-line front end. Talks to the library only through eegdir.h.

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eegdir/eegdir.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ApiError : std::runtime_error {
    eegdir_status status;
    ApiError(eegdir_status s, const std::string& what) : std::runtime_error(what), status(s) {}
};

void check(eegdir_status s, const std::string& context) {
    if (s == EEGDIR_OK) return;
    std::string msg = context + ": " + eegdir_last_error();
    if (s == EEGDIR_ERR_CONFIG || s == EEGDIR_ERR_INVALID_ARGUMENT) throw UsageError(msg);
    throw ApiError(s, msg);
}

template <class T, void (*Free)(T*)>
struct Handle {
    T* p = nullptr;
    Handle() = default;
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;
    ~Handle() { Free(p); }
    T** out() { return &p; }
    T* get() const { return p; }
};

using Dataset = Handle<eegdir_dataset, eegdir_dataset_free>;
using Model = Handle<eegdir_model, eegdir_model_free>;
using Report = Handle<eegdir_report, eegdir_report_free>;

std::string quote(const std::string& s) {
    if (!s.empty() && s.find_first_of(" \t\n'\"\\$`") == std::string::npos) return s;
    std::string q = "'";
    for (char c : s) {
        if (c == '\'') q += "'\\''";
        else q += c;
    }
    return q + "'";
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// Accumulates the resolved configuration as a re-runnable argument list.
class Echo {
public:
    explicit Echo(std::string sub) : line_("eegdir " + std::move(sub)) {}
    Echo& flag(const std::string& name) {
        line_ += " --" + name;
        return *this;
    }
    Echo& opt(const std::string& name, const std::string& v) {
        line_ += " --" + name + " " + quote(v);
        return *this;
    }
    Echo& opt(const std::string& name, long long v) { return opt(name, std::to_string(v)); }
    Echo& opt(const std::string& name, unsigned long long v) { return opt(name, std::to_string(v)); }
    Echo& opt(const std::string& name, int v) { return opt(name, std::to_string(v)); }
    Echo& opt(const std::string& name, unsigned v) { return opt(name, std::to_string(v)); }
    Echo& opt(const std::string& name, double v) { return opt(name, fmt(v)); }
    void emit() const { std::cerr << "# config: " << line_ << '\n'; }

private:
    std::string line_;
};

// Writes go to a sibling temp file and are renamed into place on commit, so an
// aborted command never leaves a partial output behind.
class StagedFile {
public:
    explicit StagedFile(fs::path target) : target_(std::move(target)) {
        tmp_ = target_;
        tmp_ += ".partial";
    }
    StagedFile(const StagedFile&) = delete;
    ~StagedFile() {
        if (!committed_) {
            std::error_code ec;
            fs::remove(tmp_, ec);
        }
    }
    const fs::path& tmp() const { return tmp_; }
    void commit() {
        std::error_code ec;
        fs::rename(tmp_, target_, ec);
        if (ec) throw ApiError(EEGDIR_ERR_IO, "cannot write " + target_.string() + ": " + ec.message());
        committed_ = true;
    }

private:
    fs::path target_, tmp_;
    bool committed_ = false;
};

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
    std::string noise = "eog";
    unsigned pairs = 50;
    unsigned noise_count = 0;
    int snr_min = -7;
    int snr_max = 2;
    double split = 0.8;
    unsigned len = 512;
    std::string out;
};

int run_synth(const SynthArgs& a, std::uint64_t seed, unsigned workers) {
    if (a.snr_min > a.snr_max) {
        throw UsageError("--snr-min (" + std::to_string(a.snr_min) + ") exceeds --snr-max (" +
                         std::to_string(a.snr_max) + ")");
    }
    if (!(a.split > 0.0 && a.split < 1.0)) throw UsageError("--split must lie in (0, 1)");
    if (a.pairs == 0) throw UsageError("--pairs must be positive");
    Echo("synth")
        .opt("noise", a.noise)
        .opt("pairs", a.pairs)
        .opt("noise-count", a.noise_count)
        .opt("snr-min", a.snr_min)
        .opt("snr-max", a.snr_max)
        .opt("split", a.split)
        .opt("len", a.len)
        .opt("seed", static_cast<unsigned long long>(seed))
        .opt("workers", workers)
        .opt("out", a.out)
        .emit();

    eegdir_build_options opts;
    eegdir_build_options_default(&opts);
    opts.clean_count = a.pairs;
    opts.noise_count = a.noise_count;
    opts.noise = a.noise == "emg" ? EEGDIR_NOISE_EMG : EEGDIR_NOISE_EOG;
    opts.snr_min = a.snr_min;
    opts.snr_max = a.snr_max;
    opts.split_ratio = a.split;
    opts.seed = seed;
    opts.seq_len = a.len;
    opts.workers = workers;

    Dataset train, test;
    check(eegdir_dataset_build(&opts, train.out(), test.out()), "synth");

    const fs::path dir(a.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ApiError(EEGDIR_ERR_IO, "cannot create " + dir.string() + ": " + ec.message());
    StagedFile tr(dir / "train.edir"), te(dir / "test.edir");
    check(eegdir_dataset_write(train.get(), tr.tmp().c_str()), "synth");
    check(eegdir_dataset_write(test.get(), te.tmp().c_str()), "synth");
    tr.commit();
    te.commit();

    for (auto [name, ds] : {std::pair{"train", train.get()}, std::pair{"test", test.get()}}) {
        std::map<int, std::size_t> per_snr;
        const std::size_t n = eegdir_dataset_size(ds);
        for (std::size_t i = 0; i < n; ++i) {
            int32_t snr = 0;
            check(eegdir_dataset_sample(ds, i, nullptr, nullptr, nullptr, &snr), "synth");
            ++per_snr[snr];
        }
        std::cout << name << ": " << n << " samples -> " << (dir / (std::string(name) + ".edir")).string()
                  << '\n';
        for (auto [snr, count] : per_snr) std::cout << "  snr " << snr << " dB: " << count << '\n';
    }
    return 0;
}

// ---- train -----------------------------------------------------------------

struct ModelArgs {
    unsigned len = 512;
    unsigned patch = 16;
    unsigned dim = 64;
    unsigned heads = 4;
    unsigned layers = 2;
    unsigned ffn_mult = 2;
    bool stabilized = false;
    double theta_base = 10000.0;
};

struct TrainArgs {
    std::string data;
    std::string checkpoint;
    std::string log;
    unsigned epochs = 100;
    unsigned batch = 32;
    double lr = 5e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double eps_adam = 1e-8;
    double weight_decay = 1e-2;
    unsigned log_every = 10;
    bool dry_run = false;
};

eegdir_model_config model_config(const ModelArgs& m) {
    eegdir_model_config c;
    eegdir_model_config_default(&c);
    c.seq_len = m.len;
    c.patch = m.patch;
    c.d_model = m.dim;
    c.heads = m.heads;
    c.layers = m.layers;
    c.ffn_mult = m.ffn_mult;
    c.stabilized_retention = m.stabilized ? 1 : 0;
    c.theta_base = m.theta_base;
    return c;
}

void progress(uint32_t epoch, uint32_t epochs, double loss, void*) {
    std::cerr << "epoch " << epoch << "/" << epochs << " loss " << loss << '\n';
}

int run_train(const ModelArgs& m, TrainArgs t, std::uint64_t seed, unsigned workers) {
    const auto cfg = model_config(m);
    check(eegdir_model_config_validate(&cfg), "train");
    if (t.epochs == 0) throw UsageError("--epochs must be at least 1");
    if (t.batch == 0) throw UsageError("--batch must be at least 1");
    if (t.log.empty()) t.log = t.checkpoint + ".log.csv";

    Echo e("train");
    e.opt("data", t.data)
        .opt("checkpoint", t.checkpoint)
        .opt("log", t.log)
        .opt("len", m.len)
        .opt("patch", m.patch)
        .opt("dim", m.dim)
        .opt("heads", m.heads)
        .opt("layers", m.layers)
        .opt("ffn-mult", m.ffn_mult)
        .opt("theta-base", m.theta_base);
    if (m.stabilized) e.flag("stabilized");
    e.opt("epochs", t.epochs)
        .opt("batch", t.batch)
        .opt("lr", t.lr)
        .opt("beta1", t.beta1)
        .opt("beta2", t.beta2)
        .opt("eps-adam", t.eps_adam)
        .opt("weight-decay", t.weight_decay)
        .opt("log-every", t.log_every)
        .opt("seed", static_cast<unsigned long long>(seed))
        .opt("workers", workers);
    if (t.dry_run) e.flag("dry-run");
    e.emit();
    if (t.dry_run) return 0;

    Dataset data;
    check(eegdir_dataset_read(t.data.c_str(), data.out()), "train");
    if (eegdir_dataset_seq_len(data.get()) != cfg.seq_len) {
        throw UsageError("dataset " + t.data + " has seq_len " +
                         std::to_string(eegdir_dataset_seq_len(data.get())) + " but --len is " +
                         std::to_string(cfg.seq_len));
    }

    Model model;
    check(eegdir_model_create(&cfg, seed, model.out()), "train");
    eegdir_train_config tc;
    eegdir_train_config_default(&tc);
    tc.epochs = t.epochs;
    tc.batch_size = t.batch;
    tc.seed = seed;
    tc.lr = t.lr;
    tc.beta1 = t.beta1;
    tc.beta2 = t.beta2;
    tc.eps_adam = t.eps_adam;
    tc.weight_decay = t.weight_decay;
    tc.log_every = t.log_every;
    tc.checkpoint_path = t.checkpoint.c_str();
    tc.log_path = t.log.c_str();
    check(eegdir_train(model.get(), data.get(), &tc, progress, nullptr), "train");
    std::cout << "checkpoint: " << t.checkpoint << "\nlog: " << t.log << '\n';
    return 0;
}

// ---- denoise ---------------------------------------------------------------

std::vector<std::vector<double>> read_csv_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ApiError(EEGDIR_ERR_IO, "cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            errno = 0;
            const double v = std::strtod(cell.c_str(), &end);
            while (end && (*end == ' ' || *end == '\t' || *end == '\r')) ++end;
            if (end == cell.c_str() || (end && *end != '\0') || errno == ERANGE) {
                throw ApiError(EEGDIR_ERR_IO, path + ":" + std::to_string(lineno) + ": not a number: '" +
                                                  cell + "'");
            }
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

struct DenoiseArgs {
    std::string checkpoint;
    std::string input;
    std::string out;
};

int run_denoise(const DenoiseArgs& a) {
    Echo("denoise").opt("checkpoint", a.checkpoint).opt("input", a.input).opt("out", a.out).emit();

    Model model;
    check(eegdir_model_load(a.checkpoint.c_str(), nullptr, model.out()), "denoise");
    eegdir_model_config cfg;
    check(eegdir_model_get_config(model.get(), &cfg), "denoise");
    const std::size_t s = cfg.seq_len;

    std::vector<std::vector<double>> rows;
    Dataset ds;
    const eegdir_status st = eegdir_dataset_read(a.input.c_str(), ds.out());
    if (st == EEGDIR_OK) {
        // Containers hold sigma-normalized samples; rebuild the raw mixture.
        const std::size_t n = eegdir_dataset_size(ds.get());
        const std::size_t len = eegdir_dataset_seq_len(ds.get());
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> row(len);
            double sigma = 1.0;
            check(eegdir_dataset_sample(ds.get(), i, nullptr, row.data(), &sigma, nullptr), "denoise");
            for (double& v : row) v *= sigma;
            rows.push_back(std::move(row));
        }
    } else if (st == EEGDIR_ERR_BAD_MAGIC || st == EEGDIR_ERR_TRUNCATED) {
        rows = read_csv_rows(a.input);
    } else {
        check(st, "denoise");
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != s) {
            throw UsageError("denoise: input row " + std::to_string(i) + " has " +
                             std::to_string(rows[i].size()) + " samples but the checkpoint expects " +
                             std::to_string(s));
        }
    }

    std::vector<double> in(rows.size() * s), out(rows.size() * s);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), in.begin() + i * s);
    if (!rows.empty()) check(eegdir_model_denoise(model.get(), in.data(), rows.size(), out.data()), "denoise");

    StagedFile file{fs::path(a.out)};
    {
        std::FILE* f = std::fopen(file.tmp().c_str(), "w");
        if (!f) throw ApiError(EEGDIR_ERR_IO, "cannot open for writing " + a.out);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t j = 0; j < s; ++j) std::fprintf(f, j ? ",%.17g" : "%.17g", out[i * s + j]);
            std::fputc('\n', f);
        }
        if (std::fclose(f) != 0) throw ApiError(EEGDIR_ERR_IO, "write failed: " + a.out);
    }
    file.commit();
    std::cout << rows.size() << " signals denoised -> " << a.out << '\n';
    return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::string baseline;
};

int run_eval(const EvalArgs& a, unsigned workers) {
    if (a.baseline.empty() && a.checkpoint.empty()) {
        throw UsageError("eval needs --checkpoint or --baseline identity");
    }
    Echo e("eval");
    if (!a.checkpoint.empty()) e.opt("checkpoint", a.checkpoint);
    if (!a.baseline.empty()) e.opt("baseline", a.baseline);
    e.opt("data", a.data).opt("workers", workers);
    if (!a.out.empty()) e.opt("out", a.out);
    e.emit();

    Dataset ds;
    check(eegdir_dataset_read(a.data.c_str(), ds.out()), "eval");
    Model model;
    if (a.baseline.empty()) {
        check(eegdir_model_load(a.checkpoint.c_str(), nullptr, model.out()), "eval");
        eegdir_model_config cfg;
        check(eegdir_model_get_config(model.get(), &cfg), "eval");
        if (cfg.seq_len != eegdir_dataset_seq_len(ds.get())) {
            throw ApiError(EEGDIR_ERR_CONFIG_MISMATCH,
                           "eval: checkpoint seq_len " + std::to_string(cfg.seq_len) + " vs dataset seq_len " +
                               std::to_string(eegdir_dataset_seq_len(ds.get())));
        }
    }
    Report report;
    check(eegdir_evaluate(model.get(), ds.get(), workers, report.out()), "eval");

    if (!a.out.empty()) {
        StagedFile file{fs::path(a.out)};
        check(eegdir_report_write_csv(report.get(), file.tmp().c_str()), "eval");
        file.commit();
    }
    std::printf("%-6s %15s %15s %10s %6s\n", "snr_db", "rrmse_temporal", "rrmse_spectral", "cc", "n");
    for (std::size_t i = 0; i < eegdir_report_rows(report.get()); ++i) {
        eegdir_report_row r;
        check(eegdir_report_row_get(report.get(), i, &r), "eval");
        const std::string label = r.is_all ? "all" : std::to_string(r.snr_db);
        std::printf("%-6s %15.6f %15.6f %10.6f %6zu\n", label.c_str(), r.rrmse_temporal, r.rrmse_spectral,
                    r.cc, r.n_samples);
    }
    return 0;
}

// ---- verify ----------------------------------------------------------------

struct VerifyArgs {
    std::vector<std::string> only;
    std::string fault;
};

void print_result(const char* name, int passed, const char* detail, double seconds, void*) {
    std::printf("%-10s %-4s %7.2fs  %s\n", name, passed ? "PASS" : "FAIL", seconds, detail);
    std::fflush(stdout);
}

int run_verify(const VerifyArgs& a, std::uint64_t seed) {
    Echo e("verify");
    for (const auto& o : a.only) e.opt("only", o);
    if (!a.fault.empty()) e.opt("inject-fault", a.fault);
    e.opt("seed", static_cast<unsigned long long>(seed)).emit();

    if (a.fault == "retention-backward") check(eegdir_debug_inject_fault(EEGDIR_FAULT_RETENTION_BACKWARD), "verify");

    std::vector<std::string> names;
    for (const auto& o : a.only) {
        std::stringstream ss(o);
        std::string part;
        while (std::getline(ss, part, ',')) {
            if (!part.empty()) names.push_back(part);
        }
    }
    std::vector<const char*> ptrs;
    for (const auto& n : names) ptrs.push_back(n.c_str());
    int all = 0;
    std::vector<std::string> failed;
    auto collect = [](const char* name, int passed, const char* detail, double seconds, void* user) {
        print_result(name, passed, detail, seconds, nullptr);
        if (!passed) static_cast<std::vector<std::string>*>(user)->push_back(name);
    };
    check(eegdir_verify(ptrs.data(), ptrs.size(), seed, collect, &failed, &all), "verify");
    if (all) {
        std::cout << "all properties passed\n";
        return 0;
    }
    std::cout << "failing:";
    for (const auto& f : failed) std::cout << ' ' << f;
    std::cout << '\n';
    return kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EEG artifact removal with a retention-based denoiser"};
    app.require_subcommand(1);
    app.set_version_flag("--version", eegdir_version());

    std::uint64_t seed = 42;
    unsigned workers = 1;
    auto add_common = [&](CLI::App* sub, bool with_workers) {
        sub->add_option("--seed", seed, "RNG seed")->capture_default_str();
        if (with_workers) {
            sub->add_option("--workers", workers, "parallel workers for dataset build / evaluation")
                ->check(CLI::Range(1u, 1024u))
                ->capture_default_str();
        }
    };

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "build synthetic train/test containers");
    synth->add_option("--noise", sa.noise, "artifact type")->check(CLI::IsMember({"eog", "emg"}))->capture_default_str();
    synth->add_option("--pairs", sa.pairs, "clean source segments")->capture_default_str();
    synth->add_option("--noise-count", sa.noise_count, "artifact source segments (0 = same as --pairs)")
        ->capture_default_str();
    synth->add_option("--snr-min", sa.snr_min, "lowest SNR level in dB")->capture_default_str();
    synth->add_option("--snr-max", sa.snr_max, "highest SNR level in dB")->capture_default_str();
    synth->add_option("--split", sa.split, "train fraction of sources")->capture_default_str();
    synth->add_option("--len", sa.len, "segment length in samples")->capture_default_str();
    synth->add_option("--out", sa.out, "output directory for train.edir / test.edir")->required();
    add_common(synth, true);

    ModelArgs ma;
    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train a model on a dataset container");
    train->add_option("--data", ta.data, "training container")->required();
    train->add_option("--checkpoint", ta.checkpoint, "checkpoint output path")->required();
    train->add_option("--log", ta.log, "CSV training log (default <checkpoint>.log.csv)");
    train->add_option("--len", ma.len, "segment length")->capture_default_str();
    train->add_option("--patch", ma.patch, "samples per token")->capture_default_str();
    train->add_option("--dim", ma.dim, "model width")->capture_default_str();
    train->add_option("--heads", ma.heads, "retention heads")->capture_default_str();
    train->add_option("--layers", ma.layers, "DiR blocks")->capture_default_str();
    train->add_option("--ffn-mult", ma.ffn_mult, "feed-forward expansion")->capture_default_str();
    train->add_flag("--stabilized", ma.stabilized, "scaled, row-normalized retention scores");
    train->add_option("--theta-base", ma.theta_base, "rotation frequency base")->capture_default_str();
    train->add_option("--epochs", ta.epochs)->capture_default_str();
    train->add_option("--batch", ta.batch)->capture_default_str();
    train->add_option("--lr", ta.lr)->capture_default_str();
    train->add_option("--beta1", ta.beta1)->capture_default_str();
    train->add_option("--beta2", ta.beta2)->capture_default_str();
    train->add_option("--eps-adam", ta.eps_adam)->capture_default_str();
    train->add_option("--weight-decay", ta.weight_decay)->capture_default_str();
    train->add_option("--log-every", ta.log_every, "checkpoint cadence in epochs")->capture_default_str();
    train->add_flag("--dry-run", ta.dry_run, "validate and echo the configuration only");
    add_common(train, true);

    DenoiseArgs da;
    auto* denoise = app.add_subcommand("denoise", "denoise raw signals with a checkpoint");
    denoise->add_option("--checkpoint", da.checkpoint)->required();
    denoise->add_option("--input", da.input, "dataset container or CSV, one signal per row")->required();
    denoise->add_option("--out", da.out, "output CSV, one signal per row")->required();
    add_common(denoise, false);

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "per-SNR metrics on a dataset container");
    eval->add_option("--checkpoint", ea.checkpoint);
    eval->add_option("--data", ea.data)->required();
    eval->add_option("--out", ea.out, "report CSV path");
    eval->add_option("--baseline", ea.baseline, "reference rows instead of a model")
        ->check(CLI::IsMember({"identity"}))
        ->excludes("--checkpoint");
    add_common(eval, true);

    VerifyArgs va;
    auto* verify = app.add_subcommand("verify", "run the built-in property suites");
    verify->add_option("--only", va.only, "suite name(s): gradcheck retention causality relpos snr metrics adamw")
        ->delimiter(',');
    verify->add_option("--inject-fault", va.fault)->check(CLI::IsMember({"retention-backward"}))->group("");
    add_common(verify, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (*synth) return run_synth(sa, seed, workers);
        if (*train) return run_train(ma, ta, seed, workers);
        if (*denoise) return run_denoise(da);
        if (*eval) return run_eval(ea, workers);
        if (*verify) return run_verify(va, seed);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ApiError& e) {
        std::cerr << "error (" << eegdir_status_name(e.status) << "): " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}
