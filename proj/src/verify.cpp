#include "eegdir/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "eegdir/data.hpp"
#include "eegdir/metrics.hpp"
#include "eegdir/model.hpp"
#include "eegdir/oracles.hpp"
#include "eegdir/training.hpp"

namespace eegdir {

namespace {

using ad::NdValue;
using ad::Tape;

constexpr double kGradTol = 1e-4;

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

template <class F>
VerifyResult timed(std::string name, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    VerifyResult r;
    r.name = std::move(name);
    try {
        body(r);
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

struct PrimitiveCase {
    std::string name;
    std::function<std::vector<Tensor>(std::mt19937_64&)> inputs;
    std::function<NdValue(std::span<const NdValue>)> op;
};

std::vector<PrimitiveCase> primitive_cases() {
    auto shapes = [](std::vector<Shape> ss) {
        return [ss](std::mt19937_64& rng) {
            std::vector<Tensor> out;
            for (const auto& s : ss) out.push_back(random_tensor(s, rng));
            return out;
        };
    };
    auto scaled = [](Shape s, double k) {
        return [s, k](std::mt19937_64& rng) { return std::vector<Tensor>{random_tensor(s, rng, -k, k)}; };
    };
    std::vector<PrimitiveCase> cases;
    cases.push_back({"add", shapes({{3, 4}, {3, 4}}), [](auto v) { return ad::add(v[0], v[1]); }});
    cases.push_back({"sub", shapes({{3, 4}, {3, 4}}), [](auto v) { return ad::sub(v[0], v[1]); }});
    cases.push_back({"mul", shapes({{3, 4}, {3, 4}}), [](auto v) { return ad::mul(v[0], v[1]); }});
    cases.push_back({"scale", shapes({{3, 4}}), [](auto v) { return ad::scale(v[0], -1.7); }});
    cases.push_back({"add_bias", shapes({{2, 3, 4}, {4}}), [](auto v) { return ad::add_bias(v[0], v[1]); }});
    cases.push_back({"matmul", shapes({{4, 5}, {5, 3}}), [](auto v) { return ad::matmul(v[0], v[1]); }});
    cases.push_back({"matmul_batched", shapes({{2, 3, 4}, {2, 4, 5}}),
                     [](auto v) { return ad::matmul(v[0], v[1]); }});
    cases.push_back({"matmul_broadcast_rhs", shapes({{2, 3, 4}, {4, 5}}),
                     [](auto v) { return ad::matmul(v[0], v[1]); }});
    cases.push_back({"matmul_broadcast_lhs", shapes({{3, 4}, {2, 4, 5}}),
                     [](auto v) { return ad::matmul(v[0], v[1]); }});
    cases.push_back({"transpose", shapes({{2, 3, 4}}), [](auto v) { return ad::transpose(v[0]); }});
    cases.push_back({"reshape", shapes({{2, 6}}), [](auto v) { return ad::reshape(v[0], {3, 4}); }});
    cases.push_back({"slice_last", shapes({{3, 6}}), [](auto v) { return ad::slice_last(v[0], 2, 3); }});
    cases.push_back({"concat_last", shapes({{2, 3}, {2, 2}}), [](auto v) { return ad::concat_last(v); }});
    cases.push_back({"sigmoid", scaled({10}, 4.0), [](auto v) { return ad::sigmoid(v[0]); }});
    cases.push_back({"tanh", scaled({10}, 3.0), [](auto v) { return ad::tanh(v[0]); }});
    cases.push_back({"swish", scaled({10}, 4.0), [](auto v) { return ad::swish(v[0]); }});
    cases.push_back({"gelu", scaled({10}, 4.0), [](auto v) { return ad::gelu(v[0]); }});
    cases.push_back({"sum", shapes({{3, 4}}), [](auto v) { return ad::sum(v[0]); }});
    cases.push_back({"mean", shapes({{3, 4}}), [](auto v) { return ad::mean(v[0]); }});
    cases.push_back({"layer_norm", shapes({{3, 5}, {5}, {5}}),
                     [](auto v) { return ad::layer_norm(v[0], v[1], v[2], 1e-5); }});
    cases.push_back({"group_norm", shapes({{2, 3, 8}, {8}, {8}}),
                     [](auto v) { return ad::group_norm(v[0], 2, v[1], v[2], 1e-5); }});
    cases.push_back({"rotate_pos", shapes({{2, 5, 6}}), [](auto v) { return ad::rotate(v[0], +1, 10000.0); }});
    cases.push_back({"rotate_neg", shapes({{2, 5, 6}}), [](auto v) { return ad::rotate(v[0], -1, 10000.0); }});
    cases.push_back({"decay_mask", shapes({{2, 4, 4}}),
                     [](auto v) { return ad::decay_mask(v[0], decay_matrix(0.8, 4)); }});
    cases.push_back({"row_normalize_clamped",
                     [](std::mt19937_64& rng) {
                         // Rows well inside and well outside the clamp so the
                         // kink at |row sum| = 1 is never straddled.
                         Tensor t = random_tensor({4, 5}, rng, 0.2, 1.0);
                         for (std::size_t j = 0; j < 5; ++j) {
                             t.data[1 * 5 + j] *= -1.0;
                             t.data[2 * 5 + j] *= 0.05;
                         }
                         return std::vector<Tensor>{t};
                     },
                     [](auto v) { return ad::row_normalize_clamped(v[0]); }});
    cases.push_back({"retention_stabilized", shapes({{2, 5, 4}, {4, 4}, {4, 4}, {4, 4}}), [](auto v) {
                         RetentionHeadT<NdValue> h{v[1], v[2], v[3], 0.9};
                         return retention(v[0], h, true, 10000.0);
                     }});
    return cases;
}

GradCheckResult check_primitive(const PrimitiveCase& c, std::mt19937_64& rng) {
    const auto inputs = c.inputs(rng);
    Tensor weights;
    {
        Tape t;
        std::vector<NdValue> vs;
        for (const auto& in : inputs) vs.push_back(t.constant(in));
        weights = random_tensor(c.op(vs).shape(), rng);
    }
    // Random projection so the check sees every output coordinate.
    const ScalarFn f = [&](Tape& t, std::span<const NdValue> v) {
        return ad::sum(ad::mul(c.op(v), t.constant(weights)));
    };
    return finite_diff_check(f, inputs);
}

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.seq_len = 32;
    cfg.patch = 8;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.layers = 2;
    return cfg;
}

// Initialized parameters with biases and norm affines jittered off their
// defaults so every path carries a non-trivial gradient.
ModelParams jittered_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams p = init_params(cfg, seed);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> dist(-0.2, 0.2);
    for_each_param(p, [&](const std::string&, Tensor& t, ParamRole role) {
        if (role != ParamRole::Weight) {
            for (auto& v : t.data) v += dist(rng);
        }
    });
    return p;
}

GradCheckResult check_model(const ModelConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const ModelParams params = jittered_params(cfg, seed);
    std::vector<Tensor> inputs;
    for_each_param(params, [&](const std::string&, const Tensor& t, ParamRole) { inputs.push_back(t); });
    inputs.push_back(random_tensor({2, cfg.seq_len}, rng, -2.0, 2.0));
    const Tensor target = random_tensor({2, cfg.seq_len}, rng);

    const ScalarFn f = [&](Tape& t, std::span<const NdValue> v) {
        const BoundParams bp = bind_values(params, v.first(v.size() - 1));
        return mse_loss(forward(v.back(), bp, cfg), t.constant(target));
    };
    return finite_diff_check(f, inputs);
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double e : v) m = std::max(m, std::abs(e));
    return m;
}

}  // namespace

VerifyResult verify_gradcheck(std::uint64_t seed, std::size_t seeds) {
    return timed("gradcheck", [&](VerifyResult& r) {
        double worst = 0.0;
        std::string worst_where = "none";
        auto note = [&](const std::string& where, const GradCheckResult& g) {
            if (g.max_rel_err >= worst) {
                worst = g.max_rel_err;
                worst_where = where + " (input " + std::to_string(g.worst_input) + "[" +
                              std::to_string(g.worst_index) + "], analytic " + fmt("%.6g", g.analytic) +
                              ", numeric " + fmt("%.6g", g.numeric) + ")";
            }
        };
        const auto cases = primitive_cases();
        const ModelConfig cfg = toy_config();
        for (std::size_t s = 0; s < seeds; ++s) {
            std::mt19937_64 rng(seed + s);
            for (const auto& c : cases) note(c.name, check_primitive(c, rng));
            note("model seed " + std::to_string(seed + s), check_model(cfg, seed + s));
        }
        r.passed = worst < kGradTol;
        r.detail = "max rel err " + fmt("%.3e", worst) + " at " + worst_where + " over " +
                   std::to_string(seeds) + " seeds, " + std::to_string(cases.size()) +
                   " primitives + full model";
    });
}

VerifyResult verify_retention(std::uint64_t seed) {
    return timed("retention", [&](VerifyResult& r) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> ug(0.01, 0.99);
        std::uniform_int_distribution<std::size_t> ut(1, 64);
        std::size_t mask_failures = 0;
        for (int trial = 0; trial < 100; ++trial) {
            const double gamma = ug(rng);
            const std::size_t len = ut(rng);
            const Tensor d = decay_matrix(gamma, len);
            for (std::size_t n = 0; n < len; ++n) {
                for (std::size_t m = 0; m < len; ++m) {
                    const double expect = n >= m ? std::pow(gamma, static_cast<double>(n - m)) : 0.0;
                    if (d.data[n * len + m] != expect) ++mask_failures;
                }
            }
        }

        double worst = 0.0;
        std::uniform_int_distribution<std::size_t> ulen(1, 8);
        std::uniform_int_distribution<std::size_t> udim(1, 4);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t len = ulen(rng), dim = 2 * udim(rng);
            const double gamma = ug(rng);
            const Tensor x = random_tensor({1, len, dim}, rng);
            const Tensor wq = random_tensor({dim, dim}, rng);
            const Tensor wk = random_tensor({dim, dim}, rng);
            const Tensor wv = random_tensor({dim, dim}, rng);
            Tape t;
            RetentionHeadT<NdValue> h{t.constant(wq), t.constant(wk), t.constant(wv), gamma};
            const auto got = retention(t.constant(x), h, false, 10000.0).value().data;
            const auto ref = oracle::retention(x.data, len, dim, wq.data, wk.data, wv.data, gamma, 10000.0);
            const double scale = std::max(1.0, max_abs(ref));
            for (std::size_t i = 0; i < ref.size(); ++i) {
                worst = std::max(worst, std::abs(got[i] - ref[i]) / scale);
            }
        }
        r.passed = mask_failures == 0 && worst <= 1e-12;
        r.detail = "decay mask mismatches " + std::to_string(mask_failures) +
                   " over 100 (gamma, T<=64); retention vs summation oracle max err " +
                   fmt("%.3e", worst) + " (tol 1e-12, T<=8)";
    });
}

VerifyResult verify_causality(std::uint64_t seed) {
    return timed("causality", [&](VerifyResult& r) {
        const ModelConfig cfg = toy_config();
        const std::size_t tokens = cfg.tokens();
        std::size_t violations = 0, checks = 0;
        for (int trial = 0; trial < 10; ++trial) {
            std::mt19937_64 rng(seed + static_cast<std::uint64_t>(trial));
            const ModelParams params = jittered_params(cfg, seed + static_cast<std::uint64_t>(trial));
            const Tensor x = random_tensor({1, cfg.seq_len}, rng, -2.0, 2.0);
            const Tensor base = predict(params, cfg, x);
            for (std::size_t t = 0; t < tokens; ++t) {
                Tensor xp = x;
                for (std::size_t i = t * cfg.patch; i < cfg.seq_len; ++i) {
                    xp.data[i] += std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
                }
                const Tensor out = predict(params, cfg, xp);
                ++checks;
                if (!std::equal(base.data.begin(), base.data.begin() + static_cast<std::ptrdiff_t>(t * cfg.patch),
                                out.data.begin())) {
                    ++violations;
                }
            }
        }
        r.passed = violations == 0;
        r.detail = std::to_string(violations) + " prefix violations over " + std::to_string(checks) +
                   " (input, prefix) checks; bit-exact comparison";
    });
}

VerifyResult verify_relpos(std::uint64_t seed) {
    return timed("relpos", [&](VerifyResult& r) {
        constexpr std::size_t len = 16, dim = 8;
        double worst = 0.0;
        for (int trial = 0; trial < 5; ++trial) {
            std::mt19937_64 rng(seed + static_cast<std::uint64_t>(trial));
            const Tensor token = random_tensor({dim}, rng);
            Tensor x({1, len, dim});
            for (std::size_t n = 0; n < len; ++n) {
                std::copy(token.data.begin(), token.data.end(), x.data.begin() + static_cast<std::ptrdiff_t>(n * dim));
            }
            Tape t;
            RetentionHeadT<NdValue> h{t.constant(random_tensor({dim, dim}, rng)),
                                      t.constant(random_tensor({dim, dim}, rng)),
                                      t.constant(random_tensor({dim, dim}, rng)), 0.9};
            const auto s = retention_scores(t.constant(x), h, 10000.0).value().data;
            const double scale = std::max(1.0, max_abs(s));
            for (std::size_t n = 0; n < len; ++n) {
                for (std::size_t m = 0; m < len; ++m) {
                    // Compare against the first entry of the same diagonal.
                    const std::size_t n0 = n >= m ? n - m : 0, m0 = n >= m ? 0 : m - n;
                    worst = std::max(worst, std::abs(s[n * len + m] - s[n0 * len + m0]) / scale);
                }
            }
        }
        r.passed = worst <= 1e-10;
        r.detail = "max diagonal spread " + fmt("%.3e", worst) + " (tol 1e-10, T=16, 5 seeds)";
    });
}

VerifyResult verify_snr(std::uint64_t seed) {
    return timed("snr", [&](VerifyResult& r) {
        double worst_db = 0.0, worst_std = 0.0;
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (int pair = 0; pair < 50; ++pair) {
            std::vector<double> x(512), n(512);
            for (auto& v : x) v = normal(rng);
            for (auto& v : n) v = 3.0 * normal(rng);
            for (std::int32_t snr = -7; snr <= 2; ++snr) {
                const SamplePair sp = mix_pair(x, n, snr);
                std::vector<double> clean(512), noise(512);
                double mu = 0.0;
                for (std::size_t i = 0; i < 512; ++i) {
                    clean[i] = sp.clean[i] * sp.sigma_y;
                    noise[i] = (sp.noisy[i] - sp.clean[i]) * sp.sigma_y;
                    mu += sp.noisy[i];
                }
                worst_db = std::max(worst_db, std::abs(measure_snr(clean, noise) - snr));
                mu /= 512.0;
                double var = 0.0;
                for (double v : sp.noisy) var += (v - mu) * (v - mu);
                worst_std = std::max(worst_std, std::abs(std::sqrt(var / 512.0) - 1.0));
            }
        }
        r.passed = worst_db <= 1e-9 && worst_std <= 1e-12;
        r.detail = "max SNR error " + fmt("%.3e", worst_db) + " dB (tol 1e-9), max |std-1| " +
                   fmt("%.3e", worst_std) + " (tol 1e-12), 50 pairs x 10 levels";
    });
}

VerifyResult verify_metrics(std::uint64_t seed) {
    return timed("metrics", [&](VerifyResult& r) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        double worst = 0.0;
        for (int pair = 0; pair < 100; ++pair) {
            std::vector<double> x(512), xh(512);
            for (std::size_t i = 0; i < 512; ++i) {
                x[i] = normal(rng);
                xh[i] = x[i] + 0.5 * normal(rng);
            }
            worst = std::max({worst, std::abs(rrmse_temporal(xh, x) - oracle::rrmse_temporal(xh, x)),
                              std::abs(rrmse_spectral(xh, x) - oracle::rrmse_spectral(xh, x)),
                              std::abs(correlation_coefficient(xh, x) - oracle::pearson(xh, x))});
        }
        std::vector<double> x(512), twice(512);
        for (std::size_t i = 0; i < 512; ++i) {
            x[i] = normal(rng);
            twice[i] = 2.0 * x[i];
        }
        const double identity_err =
            std::max({std::abs(rrmse_temporal(x, x)), std::abs(rrmse_spectral(x, x)),
                      std::abs(correlation_coefficient(x, x) - 1.0),
                      std::abs(rrmse_temporal(twice, x) - 1.0), std::abs(rrmse_spectral(twice, x) - 3.0),
                      std::abs(correlation_coefficient(twice, x) - 1.0)});
        r.passed = worst <= 1e-10 && identity_err <= 1e-12;
        r.detail = "max oracle deviation " + fmt("%.3e", worst) + " (tol 1e-10, 100 pairs, N=512), " +
                   "identity deviation " + fmt("%.3e", identity_err) + " (tol 1e-12)";
    });
}

VerifyResult verify_adamw() {
    return timed("adamw", [&](VerifyResult& r) {
        double worst = 0.0;
        for (double wd : {0.0, 0.01}) {
            const auto ref = oracle::adamw_quadratic(1.0, 10, 5e-4, 0.5, 0.9, 1e-8, wd);
            Tensor theta = Tensor::scalar(1.0);
            OptimState st;
            st.weight_decay = wd;
            const ParamSlot slot{&theta, true};
            for (std::size_t k = 0; k < 10; ++k) {
                const std::vector<std::vector<double>> g = {{2.0 * theta.data[0]}};
                adamw_step(std::span(&slot, 1), g, st);
                worst = std::max(worst, std::abs(theta.data[0] - ref.theta[k]));
            }
        }
        // Zero gradient: weights decay geometrically, everything else is untouched.
        ModelConfig cfg = toy_config();
        ModelParams p = init_params(cfg, 7);
        const ModelParams p0 = p;
        OptimState st;
        std::vector<std::vector<double>> zeros;
        for_each_param(p, [&](const std::string&, const Tensor& t, ParamRole) { zeros.emplace_back(t.size(), 0.0); });
        for (int k = 0; k < 5; ++k) adamw_step(p, zeros, st);
        const double factor = std::pow(1.0 - st.lr * st.weight_decay, 5.0);
        std::vector<const Tensor*> before;
        for_each_param(p0, [&](const std::string&, const Tensor& t, ParamRole) { before.push_back(&t); });
        std::size_t i = 0;
        double decay_err = 0.0;
        bool others_unchanged = true;
        for_each_param(p, [&](const std::string&, const Tensor& t, ParamRole role) {
            const Tensor& b = *before[i++];
            if (role == ParamRole::Weight) {
                for (std::size_t j = 0; j < t.size(); ++j) {
                    decay_err = std::max(decay_err, std::abs(t.data[j] - b.data[j] * factor));
                }
            } else if (t.data != b.data) {
                others_unchanged = false;
            }
        });
        r.passed = worst <= 1e-12 && decay_err <= 1e-12 && others_unchanged;
        r.detail = "max deviation from reference sequence " + fmt("%.3e", worst) +
                   " (tol 1e-12, wd 0 and 0.01); decay error " + fmt("%.3e", decay_err) +
                   (others_unchanged ? "; biases/norms bit-unchanged" : "; biases/norms CHANGED");
    });
}

const std::vector<std::string>& verify_suite_names() {
    static const std::vector<std::string> names = {"gradcheck", "retention", "causality", "relpos",
                                                   "snr",       "metrics",   "adamw"};
    return names;
}

std::vector<VerifyResult> run_verify(std::span<const std::string> only, std::uint64_t seed,
                                     const std::function<void(const VerifyResult&)>& on_result) {
    const auto& names = verify_suite_names();
    for (const auto& o : only) {
        if (std::find(names.begin(), names.end(), o) == names.end()) {
            throw ConfigError("unknown verify suite '" + o + "'");
        }
    }
    std::vector<VerifyResult> results;
    for (const auto& name : names) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        VerifyResult r;
        if (name == "gradcheck") r = verify_gradcheck(seed);
        else if (name == "retention") r = verify_retention(seed);
        else if (name == "causality") r = verify_causality(seed);
        else if (name == "relpos") r = verify_relpos(seed);
        else if (name == "snr") r = verify_snr(seed);
        else if (name == "metrics") r = verify_metrics(seed);
        else r = verify_adamw();
        if (on_result) on_result(r);
        results.push_back(std::move(r));
    }
    return results;
}

}  // namespace eegdir
