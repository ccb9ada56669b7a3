#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "eegdir/model.hpp"
#include "eegdir/oracles.hpp"
#include "eegdir/training.hpp"
#include "test_util.hpp"

using namespace eegdir;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

ModelConfig small_config(std::size_t len = 32, std::size_t patch = 8, std::size_t dim = 8,
                         std::size_t heads = 2, std::size_t layers = 2) {
    ModelConfig c;
    c.seq_len = len;
    c.patch = patch;
    c.d_model = dim;
    c.heads = heads;
    c.layers = layers;
    return c;
}

ModelParams randomized(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams p = init_params(cfg, seed);
    std::mt19937_64 rng(seed + 1000);
    std::uniform_real_distribution<double> d(-0.3, 0.3);
    for_each_param(p, [&](const std::string&, Tensor& t, ParamRole role) {
        if (role != ParamRole::Weight)
            for (auto& v : t.data) v += d(rng);
    });
    return p;
}

std::string config_error(const ModelConfig& c) {
    try {
        c.validate();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("config validation") {
    CHECK(config_error(ModelConfig{}).empty());
    CHECK(config_error(small_config(64, 7)).find("seq_len not divisible by patch") != std::string::npos);
    CHECK_FALSE(config_error(small_config(32, 8, 10, 4)).empty());  // d_model % heads
    CHECK_FALSE(config_error(small_config(32, 8, 6, 2)).empty());   // odd head dim
    CHECK_FALSE(config_error(small_config(32, 8, 8, 2, 0)).empty());
    ModelConfig f = small_config();
    f.ffn_mult = 0;
    CHECK_FALSE(config_error(f).empty());
    CHECK(small_config(512, 16).tokens() == 32);
}

TEST_CASE("patchify is a lossless reshape") {
    std::mt19937_64 rng(1);
    ad::Tape t;
    auto x = random_tensor({2, 512}, rng);
    auto p = patchify(t.constant(x), 16);
    CHECK(p.shape() == Shape{2, 32, 16});
    CHECK(p.value().data == x.data);
    auto whole = patchify(t.constant(x), 512);
    CHECK(whole.shape() == Shape{2, 1, 512});
    CHECK_THROWS_AS(patchify(t.constant(x), 7), ConfigError);
}

TEST_CASE("signal embedding") {
    std::mt19937_64 rng(2);
    ad::Tape t;
    auto x = random_tensor({2, 16}, rng);
    Tensor eye({4, 4});
    for (int i = 0; i < 4; ++i) eye.data[i * 5] = 1.0;
    auto e = signal_embedding(t.constant(x), t.constant(eye), t.constant(Tensor({4})));
    CHECK(e.shape() == Shape{2, 4, 4});
    CHECK(e.value().data == x.data);

    auto b = random_tensor({6}, rng);
    auto eb = signal_embedding(t.constant(x), t.constant(Tensor({4, 6})), t.constant(b));
    for (std::size_t tok = 0; tok < 8; ++tok)
        for (std::size_t c = 0; c < 6; ++c) CHECK(eb.value().data[tok * 6 + c] == b.data[c]);

    auto W = random_tensor({4, 6}, rng);
    auto er = signal_embedding(t.constant(x), t.constant(W), t.constant(b));
    for (std::size_t tok = 0; tok < 8; ++tok) {
        auto ref = oracle::matmul(std::span(x.data).subspan(tok * 4, 4), W.data, 1, 4, 6);
        for (std::size_t c = 0; c < 6; ++c) ref[c] += b.data[c];
        CHECK(max_abs_diff(std::span(er.value().data).subspan(tok * 6, 6), ref) < 1e-12);
    }
    CHECK_THROWS_AS(signal_embedding(t.constant(x), t.constant(Tensor({4, 6})), t.constant(Tensor({5}))),
                    DimensionError);
}

TEST_CASE("head gammas") {
    auto g = head_gammas(4);
    CHECK(g[0] == 0.96875);
    CHECK(g[3] == 0.99609375);
    auto g16 = head_gammas(16);
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(g16[i] > 0.0);
        CHECK(g16[i] < 1.0);
        if (i) CHECK(g16[i] > g16[i - 1]);
    }
}

TEST_CASE("decay matrix") {
    auto d = decay_matrix(0.5, 3);
    CHECK(d.data == std::vector<double>{1, 0, 0, 0.5, 1, 0, 0.25, 0.5, 1});
    for (std::size_t T : {1u, 17u, 64u}) {
        auto m = decay_matrix(0.9, T);
        for (std::size_t n = 0; n < T; ++n) {
            CHECK(m.data[n * T + n] == 1.0);
            for (std::size_t k = n + 1; k < T; ++k) CHECK(m.data[n * T + k] == 0.0);
        }
    }
    CHECK_THROWS_AS(decay_matrix(1.0, 3), ConfigError);
    CHECK_THROWS_AS(decay_matrix(0.0, 3), ConfigError);
}

TEST_CASE("retention single token collapses to (q.k) v") {
    std::mt19937_64 rng(3);
    ad::Tape t;
    const std::size_t d = 4;
    auto x = random_tensor({1, 1, d}, rng);
    RetentionHeadT<ad::NdValue> h{t.constant(random_tensor({d, d}, rng)), t.constant(random_tensor({d, d}, rng)),
                                  t.constant(random_tensor({d, d}, rng)), 0.5};
    auto out = retention(t.constant(x), h, false, 1e4).value().data;
    auto q = oracle::matmul(x.data, h.W_Q.value().data, 1, d, d);
    auto k = oracle::matmul(x.data, h.W_K.value().data, 1, d, d);
    auto v = oracle::matmul(x.data, h.W_V.value().data, 1, d, d);
    double qk = 0;
    for (std::size_t i = 0; i < d; ++i) qk += q[i] * k[i];
    for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(out[i] - qk * v[i]) < 1e-12);

    h.gamma = 0.99;
    CHECK(retention(t.constant(x), h, false, 1e4).value().data == out);
}

TEST_CASE("retention matches summation oracle") {
    std::mt19937_64 rng(4);
    for (auto [T, d] : {std::pair<std::size_t, std::size_t>{3, 2}, {5, 4}, {8, 6}}) {
        ad::Tape t;
        auto x = random_tensor({1, T, d}, rng);
        auto wq = random_tensor({d, d}, rng), wk = random_tensor({d, d}, rng), wv = random_tensor({d, d}, rng);
        RetentionHeadT<ad::NdValue> h{t.constant(wq), t.constant(wk), t.constant(wv), 0.8};
        auto out = retention(t.constant(x), h, false, 1e4).value().data;
        auto ref = oracle::retention(x.data, T, d, wq.data, wk.data, wv.data, 0.8, 1e4);
        CHECK(max_abs_diff(out, ref) < 1e-12);
    }
}

TEST_CASE("multi-scale retention against unrolled computation") {
    std::mt19937_64 rng(5);
    ModelConfig cfg = small_config(4, 2, 4, 2, 1);
    const std::size_t T = 2, D = 4, h = 2, d = 2;
    auto x = random_tensor({1, T, D}, rng);
    MsrParams m;
    for (double g : head_gammas(h)) {
        m.heads.push_back({random_tensor({d, d}, rng), random_tensor({d, d}, rng), random_tensor({d, d}, rng), g});
    }
    m.W_G = random_tensor({D, D}, rng);
    m.W_O = random_tensor({D, D}, rng);
    m.gn_gamma = random_tensor({D}, rng);
    m.gn_beta = random_tensor({D}, rng);

    ad::Tape t;
    MsrParamsT<ad::NdValue> bm;
    for (auto& hp : m.heads) bm.heads.push_back({t.constant(hp.W_Q), t.constant(hp.W_K), t.constant(hp.W_V), hp.gamma});
    bm.W_G = t.constant(m.W_G);
    bm.W_O = t.constant(m.W_O);
    bm.gn_gamma = t.constant(m.gn_gamma);
    bm.gn_beta = t.constant(m.gn_beta);
    auto out = multi_scale_retention(t.constant(x), bm, cfg).value().data;

    std::vector<double> y(T * D);
    for (std::size_t i = 0; i < h; ++i) {
        std::vector<double> slice(T * d);
        for (std::size_t n = 0; n < T; ++n)
            for (std::size_t c = 0; c < d; ++c) slice[n * d + c] = x.data[n * D + i * d + c];
        auto r = oracle::retention(slice, T, d, m.heads[i].W_Q.data, m.heads[i].W_K.data, m.heads[i].W_V.data,
                                   m.heads[i].gamma, cfg.theta_base);
        for (std::size_t n = 0; n < T; ++n)
            for (std::size_t c = 0; c < d; ++c) y[n * D + i * d + c] = r[n * d + c];
    }
    std::vector<double> expect;
    for (std::size_t n = 0; n < T; ++n) {
        auto yn = oracle::group_norm(std::span(y).subspan(n * D, D), h, m.gn_gamma.data, m.gn_beta.data, cfg.eps_gn);
        auto g = oracle::matmul(std::span(x.data).subspan(n * D, D), m.W_G.data, 1, D, D);
        std::vector<double> gated(D);
        for (std::size_t c = 0; c < D; ++c) gated[c] = g[c] / (1.0 + std::exp(-g[c])) * yn[c];
        auto o = oracle::matmul(gated, m.W_O.data, 1, D, D);
        expect.insert(expect.end(), o.begin(), o.end());
    }
    CHECK(max_abs_diff(out, expect) < 1e-10);

    SUBCASE("closed gate silences the block") {
        for (auto& v : m.W_G.data) v = 0.0;
        ad::Tape t2;
        auto xs = random_tensor({1, T, D}, rng, 1.0, 2.0);
        MsrParamsT<ad::NdValue> b2 = bm;
        Tensor wg({D, D});
        for (std::size_t c = 0; c < D; ++c) wg.data[c * D + c] = -200.0;
        b2.heads.clear();
        for (auto& hp : m.heads) b2.heads.push_back({t2.constant(hp.W_Q), t2.constant(hp.W_K), t2.constant(hp.W_V), hp.gamma});
        b2.W_G = t2.constant(wg);
        b2.W_O = t2.constant(m.W_O);
        b2.gn_gamma = t2.constant(m.gn_gamma);
        b2.gn_beta = t2.constant(m.gn_beta);
        for (double v : multi_scale_retention(t2.constant(xs), b2, cfg).value().data) CHECK(std::abs(v) < 1e-60);
    }
}

TEST_CASE("zeroed block is the identity and shapes are preserved") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t heads = 1 + trial % 3;
        const std::size_t dim = heads * 2 * (1 + trial % 2);
        ModelConfig cfg = small_config(24, 3, dim, heads, 1);
        ModelParams p = init_params(cfg, 100 + trial);
        ad::Tape t;
        auto bp = bind(t, p, false);
        auto x = random_tensor({2, 8, dim}, rng);
        auto y = dir_block(t.constant(x), bp.blocks[0], cfg);
        CHECK(y.shape() == x.shape);
    }
    ModelConfig cfg = small_config(32, 8, 8, 2, 1);
    ModelParams z = zero_params(cfg);
    ad::Tape t;
    auto x = random_tensor({2, 4, 8}, rng);
    auto y = dir_block(t.constant(x), bind(t, z, false).blocks[0], cfg);
    CHECK(y.value().data == x.data);
}

TEST_CASE("gradient check through one block") {
    ModelConfig cfg = small_config(32, 8, 8, 2, 1);
    ModelParams p = randomized(cfg, 7);
    std::mt19937_64 rng(7);
    std::vector<Tensor> inputs;
    ModelParams layout = p;
    for_each_param(layout, [&](const std::string& name, Tensor& tns, ParamRole) {
        if (name.rfind("blocks.0.", 0) == 0) inputs.push_back(tns);
    });
    inputs.push_back(random_tensor({2, 4, 8}, rng));
    const Tensor w = random_tensor({2, 4, 8}, rng, 0.5, 1.5);
    ScalarFn f = [&](ad::Tape& t, std::span<const ad::NdValue> v) {
        DirBlockT<ad::NdValue> b;
        std::size_t i = 0;
        b.ln1_gamma = v[i++];
        b.ln1_beta = v[i++];
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            RetentionHeadT<ad::NdValue> hd;
            hd.W_Q = v[i++];
            hd.W_K = v[i++];
            hd.W_V = v[i++];
            hd.gamma = layout.blocks[0].msr.heads[h].gamma;
            b.msr.heads.push_back(hd);
        }
        b.msr.W_G = v[i++];
        b.msr.W_O = v[i++];
        b.msr.gn_gamma = v[i++];
        b.msr.gn_beta = v[i++];
        b.ln2_gamma = v[i++];
        b.ln2_beta = v[i++];
        b.ffn_W1 = v[i++];
        b.ffn_b1 = v[i++];
        b.ffn_W2 = v[i++];
        b.ffn_b2 = v[i++];
        return ad::sum(ad::mul(dir_block(v[i], b, cfg), t.constant(w)));
    };
    CHECK(finite_diff_check(f, inputs).max_rel_err < 1e-4);
}

TEST_CASE("forward shape, length check, and causality") {
    std::mt19937_64 rng(8);
    ModelConfig cfg = small_config(32, 8, 8, 2, 2);
    ModelParams p = randomized(cfg, 8);
    auto x = random_tensor({3, 32}, rng);
    auto y = predict(p, cfg, x);
    CHECK(y.shape == Shape{3, 32});
    CHECK_THROWS_AS(predict(p, cfg, random_tensor({3, 24}, rng)), ConfigError);

    for (std::size_t tok = 0; tok < cfg.tokens(); ++tok) {
        Tensor x2 = x;
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t i = tok * 8; i < 32; ++i) x2.data[b * 32 + i] += 0.5;
        auto y2 = predict(p, cfg, x2);
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t i = 0; i < tok * 8; ++i) CHECK(y2.data[b * 32 + i] == y.data[b * 32 + i]);
    }
}

TEST_CASE("pre-mask scores depend only on relative position") {
    std::mt19937_64 rng(9);
    const std::size_t T = 16, d = 8;
    auto token = random_tensor({d}, rng);
    Tensor x({1, T, d});
    for (std::size_t n = 0; n < T; ++n) std::copy(token.data.begin(), token.data.end(), x.data.begin() + n * d);
    ad::Tape t;
    RetentionHeadT<ad::NdValue> h{t.constant(random_tensor({d, d}, rng)), t.constant(random_tensor({d, d}, rng)),
                                  t.constant(random_tensor({d, d}, rng)), 0.9};
    auto s = retention_scores(t.constant(x), h, 1e4).value().data;
    for (std::size_t n = 1; n < T; ++n)
        for (std::size_t m = 1; m < T; ++m)
            CHECK(std::abs(s[n * T + m] - s[(n - 1) * T + (m - 1)]) < 1e-10);
}

TEST_CASE("init params") {
    ModelConfig cfg = small_config(32, 4, 8, 2, 2);
    CHECK(init_params(cfg, 5).embed_W == init_params(cfg, 5).embed_W);
    ModelParams p = init_params(cfg, 5);
    for (double v : p.embed_W.data) CHECK(std::abs(v) <= 0.5);  // fan_in 4
    for (double v : p.embed_b.data) CHECK(v == 0.0);
    for (double v : p.blocks[0].ln1_gamma.data) CHECK(v == 1.0);
    for (double v : p.blocks[1].msr.gn_beta.data) CHECK(v == 0.0);

    ModelConfig big = small_config(64, 64, 160, 2, 1);
    ModelParams q = init_params(big, 11);
    const auto& w = q.blocks[0].ffn_W1.data;  // 160 x 320, bound sqrt(1/160)
    double mean = 0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    const double sd = std::sqrt(1.0 / 160.0) / std::sqrt(3.0) / std::sqrt(static_cast<double>(w.size()));
    CHECK(std::abs(mean) < 3 * sd);
}

TEST_CASE("identity configuration reproduces the signal") {
    std::mt19937_64 rng(10);
    ModelConfig cfg = small_config(32, 8, 8, 2, 3);
    auto x = random_tensor({2, 32}, rng, -3, 3);
    CHECK(predict(identity_params(cfg), cfg, x).data == x.data);
    CHECK_THROWS_AS(identity_params(small_config(32, 4, 8, 2, 1)), ConfigError);
}

TEST_CASE("every parameter receives gradient with four blocks") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ModelConfig cfg = small_config(32, 8, 8, 2, 4);
        ModelParams p = init_params(cfg, seed);
        std::mt19937_64 rng(seed);
        auto x = random_tensor({2, 32}, rng);
        auto y = random_tensor({2, 32}, rng);
        std::vector<std::vector<double>> grads;
        loss_and_grads(p, cfg, x, y, grads);
        std::size_t k = 0;
        for_each_param(p, [&](const std::string& name, const Tensor&, ParamRole) {
            CAPTURE(name);
            for (double g : grads[k]) CHECK(g != 0.0);
            ++k;
        });
    }
}

TEST_CASE("check_params rejects wrong shapes and non-finite values") {
    ModelConfig cfg = small_config();
    ModelParams p = init_params(cfg, 1);
    CHECK_NOTHROW(check_params(p, cfg));
    ModelParams bad = p;
    bad.out_b = Tensor({3});
    CHECK_THROWS_AS(check_params(bad, cfg), FormatError);
    ModelParams nan = p;
    nan.embed_W.data[0] = std::nan("");
    CHECK_THROWS_AS(check_params(nan, cfg), NumericError);
}

TEST_CASE("stabilized retention stays finite where the plain form overflows") {
    std::mt19937_64 rng(12);
    const std::size_t T = 64, d = 4;
    ad::Tape t;
    auto x = random_tensor({1, T, d}, rng, 1e4, 2e4);
    RetentionHeadT<ad::NdValue> h{t.constant(random_tensor({d, d}, rng, 50, 60)),
                                  t.constant(random_tensor({d, d}, rng, 50, 60)),
                                  t.constant(random_tensor({d, d}, rng, 1e290, 2e290)), 0.99};
    CHECK_THROWS_AS(retention(t.constant(x), h, false, 1e4), NumericError);
    CHECK_NOTHROW(retention(t.constant(x), h, true, 1e4));
}
