// Release checks. One line per criterion; exit status is nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "eegdir/data.hpp"
#include "eegdir/metrics.hpp"
#include "eegdir/training.hpp"
#include "eegdir/verify.hpp"

using namespace eegdir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Outcome from_suites(std::initializer_list<VerifyResult> results) {
    Outcome o{true, {}};
    for (const auto& r : results) {
        o.passed = o.passed && r.passed;
        if (!o.detail.empty()) o.detail += "; ";
        o.detail += r.name + ": " + r.detail;
    }
    return o;
}

Outcome gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    auto r = verify_gradcheck(42, 20);
    const double t = seconds_since(t0);
    return {r.passed && t < 120.0, r.detail + ", " + fmt("%.1f", t) + "s (limit 120s)"};
}

std::vector<double> flatten(const ModelParams& p) {
    std::vector<double> out;
    for_each_param(p, [&](const std::string&, const Tensor& t, ParamRole) {
        out.insert(out.end(), t.data.begin(), t.data.end());
    });
    return out;
}

Tensor stack(const Dataset& d, bool noisy) {
    Tensor t({d.samples.size(), d.seq_len});
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        const auto& src = noisy ? d.samples[i].noisy : d.samples[i].clean;
        std::copy(src.begin(), src.end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * d.seq_len));
    }
    return t;
}

Outcome overfit() {
    ModelConfig cfg;
    cfg.seq_len = 64;
    cfg.patch = 8;
    cfg.d_model = 32;
    cfg.heads = 4;
    cfg.layers = 2;

    BuildOptions bo;
    bo.clean_count = 8;
    bo.seq_len = 64;
    bo.snr_grid = {0};
    bo.split_ratio = 0.5;
    bo.seed = 7;
    auto split = build_dataset(bo);
    Dataset pairs = split.train;
    pairs.samples.insert(pairs.samples.end(), split.test.samples.begin(), split.test.samples.end());

    TrainConfig tc;
    tc.epochs = 2000;
    tc.batch_size = pairs.samples.size();
    tc.log_every = 0;

    auto params = init_params(cfg, 42);
    const auto t0 = std::chrono::steady_clock::now();
    auto res = train(params, cfg, pairs, tc);
    const double t = seconds_since(t0);

    const Tensor pred = predict(params, cfg, stack(pairs, true));
    const Tensor clean = stack(pairs, false);
    double mse = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) mse += (pred.data[i] - clean.data[i]) * (pred.data[i] - clean.data[i]);
    mse /= static_cast<double>(clean.size());

    std::size_t first_below = 0;
    for (const auto& row : res.log) {
        if (row.loss < 1e-2) {
            first_below = row.step;
            break;
        }
    }
    const bool ok = mse < 1e-2 && res.state.step <= 2000 && t < 300.0;
    return {ok, std::to_string(pairs.samples.size()) + " pairs, " + std::to_string(res.state.step) +
                    " steps, final MSE " + fmt("%.3e", mse) + " (tol 1e-2), first below at step " +
                    std::to_string(first_below) + ", " + fmt("%.1f", t) + "s (limit 300s)"};
}

Outcome denoising() {
    BuildOptions bo;
    bo.clean_count = 50;
    bo.seq_len = 256;
    bo.noise = NoiseKind::Eog;
    auto split = build_dataset(bo);

    ModelConfig cfg;
    cfg.seq_len = 256;
    cfg.patch = 16;
    cfg.d_model = 64;
    cfg.heads = 4;
    cfg.layers = 2;

    TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 32;
    tc.log_every = 0;

    auto params = init_params(cfg, 42);
    const auto t0 = std::chrono::steady_clock::now();
    train(params, cfg, split.train, tc);
    const auto model = evaluate(params, cfg, split.test, 1).overall();
    const auto ident = evaluate_identity(split.test).overall();
    const double t = seconds_since(t0);

    const bool ok = split.train.samples.size() == 400 && split.test.samples.size() == 100 &&
                    model.cc >= ident.cc + 0.05 && model.rrmse_temporal <= 0.95 * ident.rrmse_temporal &&
                    t < 1800.0;
    return {ok, std::to_string(split.train.samples.size()) + "/" + std::to_string(split.test.samples.size()) +
                    " pairs, " + std::to_string(tc.epochs) + " epochs: CC " + fmt("%.4f", model.cc) +
                    " vs identity " + fmt("%.4f", ident.cc) + " (need +0.05), RRMSE_t " +
                    fmt("%.4f", model.rrmse_temporal) + " vs identity " + fmt("%.4f", ident.rrmse_temporal) +
                    " (need <= 0.95x), " + fmt("%.1f", t) + "s (limit 1800s)"};
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome persistence() {
    const fs::path dir = fs::temp_directory_path() / "eegdir_acceptance";
    fs::create_directories(dir);

    BuildOptions bo;
    bo.clean_count = 10;
    bo.seq_len = 64;
    auto split = build_dataset(bo);
    write_dataset(dir / "train.edir", split.train);
    const auto ds_bytes = slurp(dir / "train.edir");
    const Dataset back = read_dataset(dir / "train.edir");
    write_dataset(dir / "again.edir", back);
    // the container holds 32-bit payloads, so compare against the rounded build output
    Dataset rounded = split.train;
    for (auto& smp : rounded.samples) {
        for (auto* v : {&smp.clean, &smp.noisy}) {
            for (auto& e : *v) e = static_cast<float>(e);
        }
        smp.sigma_y = static_cast<float>(smp.sigma_y);
    }
    const bool ds_ok = back == rounded && slurp(dir / "again.edir") == ds_bytes &&
                       decode_dataset(ds_bytes) == rounded;

    ModelConfig cfg;
    cfg.seq_len = 64;
    cfg.patch = 8;
    cfg.d_model = 16;
    cfg.heads = 2;
    auto params = init_params(cfg, 11);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 16;
    auto res = train(params, cfg, split.train, tc);
    save_checkpoint(dir / "m.edck", cfg, params, &res.state);
    const auto ck_bytes = slurp(dir / "m.edck");
    auto ck = load_checkpoint(dir / "m.edck", &cfg);
    save_checkpoint(dir / "m2.edck", ck.cfg, ck.params, ck.state ? &*ck.state : nullptr);
    const bool ck_ok = ck.cfg == cfg && flatten(ck.params) == flatten(params) && ck.state &&
                       ck.state->m == res.state.m && ck.state->v == res.state.v &&
                       slurp(dir / "m2.edck") == ck_bytes;

    const Tensor x = stack(split.test, true);
    const bool fwd_ok = predict(params, cfg, x) == predict(ck.params, cfg, x);
    fs::remove_all(dir);

    return {ds_ok && ck_ok && fwd_ok, std::string("dataset ") + (ds_ok ? "bit-exact" : "MISMATCH") +
                                          ", checkpoint " + (ck_ok ? "bit-exact" : "MISMATCH") +
                                          ", forward " + (fwd_ok ? "bit-identical" : "DIFFERS")};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* title;
        std::function<Outcome()> run;
    };
    const std::uint64_t seed = 42;
    const std::vector<Criterion> criteria = {
        {1, "gradient correctness", gradients},
        {2, "retention semantics",
         [&] { return from_suites({verify_retention(seed), verify_causality(seed)}); }},
        {3, "relative position", [&] { return from_suites({verify_relpos(seed)}); }},
        {4, "snr pipeline", [&] { return from_suites({verify_snr(seed)}); }},
        {5, "metric oracles", [&] { return from_suites({verify_metrics(seed)}); }},
        {6, "optimizer oracle", [] { return from_suites({verify_adamw()}); }},
        {7, "learning capability", overfit},
        {8, "denoising improvement", denoising},
        {9, "persistence", persistence},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.passed) ++failed;
        std::printf("criterion %d %-22s %s  %s\n", c.id, c.title, o.passed ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%s\n", failed ? (std::to_string(failed) + " criteria failed").c_str() : "all criteria passed");
    return failed ? 1 : 0;
}
