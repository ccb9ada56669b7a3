#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "eegdir/autodiff.hpp"
#include "eegdir/oracles.hpp"
#include "test_util.hpp"

using namespace eegdir;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

double scalar_of(ad::NdValue v) { return v.value().data.at(0); }

// sum(w * op(x)) with fixed random weights, so every output element matters.
ScalarFn weighted(std::function<ad::NdValue(std::span<const ad::NdValue>)> op, const Tensor& w) {
    return [op, w](ad::Tape& t, std::span<const ad::NdValue> v) {
        return ad::sum(ad::mul(op(v), t.constant(w)));
    };
}

struct ForceFault {
    explicit ForceFault(ad::testing::Fault f) { ad::testing::set_fault(f); }
    ~ForceFault() { ad::testing::set_fault(ad::testing::Fault::None); }
};

}  // namespace

TEST_CASE("tensor construction checks sizes") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.dim(-1) == 3);
    CHECK_THROWS_AS(t.dim(2), DimensionError);
}

TEST_CASE("matmul small cases") {
    ad::Tape t;
    auto a = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    auto b = t.constant(Tensor({2, 2}, {3, 4, 5, 6}));
    CHECK(ad::matmul(a, b).value().data == std::vector<double>{3, 4, 5, 6});

    auto r = t.constant(Tensor({1, 2}, {1, 2}));
    auto c = t.constant(Tensor({2, 1}, {3, 4}));
    CHECK(ad::matmul(r, c).value().data == std::vector<double>{11});
}

TEST_CASE("matmul matches triple loop") {
    std::mt19937_64 rng(3);
    ad::Tape t;
    auto A = random_tensor({4, 5}, rng);
    auto B = random_tensor({5, 3}, rng);
    auto C = ad::matmul(t.constant(A), t.constant(B));
    CHECK(C.shape() == Shape{4, 3});
    CHECK(max_abs_diff(C.value().data, oracle::matmul(A.data, B.data, 4, 5, 3)) < 1e-12);
}

TEST_CASE("matmul batched against per-batch loop") {
    std::mt19937_64 rng(4);
    ad::Tape t;
    auto A = random_tensor({3, 2, 4}, rng);
    auto B = random_tensor({4, 5}, rng);
    auto C = ad::matmul(t.constant(A), t.constant(B));
    REQUIRE(C.shape() == Shape{3, 2, 5});
    for (std::size_t b = 0; b < 3; ++b) {
        auto ref = oracle::matmul(std::span(A.data).subspan(b * 8, 8), B.data, 2, 4, 5);
        CHECK(max_abs_diff(std::span(C.value().data).subspan(b * 10, 10), ref) < 1e-12);
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    ad::Tape t;
    auto a = t.constant(Tensor({2, 3}));
    auto b = t.constant(Tensor({4, 2}));
    try {
        ad::matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("layer_norm cases") {
    ad::Tape t;
    auto ones = t.constant(Tensor({3}, 1.0));
    auto zeros = t.constant(Tensor({3}, 0.0));
    auto y = ad::layer_norm(t.constant(Tensor({3}, {1, 1, 1})), ones, zeros, 1e-5);
    for (double v : y.value().data) CHECK(v == 0.0);

    auto g2 = t.constant(Tensor({2}, 1.0));
    auto b2 = t.constant(Tensor({2}, 0.0));
    auto y2 = ad::layer_norm(t.constant(Tensor({2}, {-1, 1})), g2, b2, 1e-15);
    CHECK(y2.value().data[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(y2.value().data[1] == doctest::Approx(1.0).epsilon(1e-12));

    std::mt19937_64 rng(5);
    auto x = random_tensor({4, 16}, rng, -3, 3);
    auto g = t.constant(Tensor({16}, 1.0));
    auto b = t.constant(Tensor({16}, 0.0));
    auto z = ad::layer_norm(t.constant(x), g, b, 1e-5);
    for (std::size_t r = 0; r < 4; ++r) {
        double m = 0, v = 0;
        for (std::size_t c = 0; c < 16; ++c) m += z.value().data[r * 16 + c];
        m /= 16;
        for (std::size_t c = 0; c < 16; ++c) v += std::pow(z.value().data[r * 16 + c] - m, 2);
        v /= 16;
        CHECK(std::abs(m) < 1e-12);
        CHECK(std::abs(v - 1.0) < 1e-4);
    }

    CHECK_THROWS_AS(ad::layer_norm(t.constant(Tensor({2, 0})), t.constant(Tensor({0})),
                                   t.constant(Tensor({0})), 1e-5),
                    DimensionError);
}

TEST_CASE("group_norm cases") {
    ad::Tape t;
    auto g4 = t.constant(Tensor({4}, 1.0));
    auto b4 = t.constant(Tensor({4}, 0.0));
    auto y = ad::group_norm(t.constant(Tensor({4}, {1, 1, 5, 5})), 2, g4, b4, 1e-5);
    for (double v : y.value().data) CHECK(v == 0.0);

    std::mt19937_64 rng(6);
    auto x = random_tensor({3, 8}, rng, -2, 2);
    auto g8 = random_tensor({8}, rng);
    auto b8 = random_tensor({8}, rng);
    auto gn1 = ad::group_norm(t.constant(x), 1, t.constant(g8), t.constant(b8), 1e-5);
    auto ln = ad::layer_norm(t.constant(x), t.constant(g8), t.constant(b8), 1e-5);
    CHECK(max_abs_diff(gn1.value().data, ln.value().data) < 1e-12);

    auto gn4 = ad::group_norm(t.constant(x), 4, t.constant(g8), t.constant(b8), 1e-5);
    for (std::size_t r = 0; r < 3; ++r) {
        auto ref = oracle::group_norm(std::span(x.data).subspan(r * 8, 8), 4, g8.data, b8.data, 1e-5);
        CHECK(max_abs_diff(std::span(gn4.value().data).subspan(r * 8, 8), ref) < 1e-12);
    }

    CHECK_THROWS_AS(ad::group_norm(t.constant(x), 3, t.constant(g8), t.constant(b8), 1e-5), ConfigError);
}

TEST_CASE("swish and gelu values") {
    ad::Tape t;
    auto s = [&](double v) { return scalar_of(ad::swish(t.constant(Tensor::scalar(v)))); };
    auto g = [&](double v) { return scalar_of(ad::gelu(t.constant(Tensor::scalar(v)))); };
    CHECK(s(0.0) == 0.0);
    CHECK(std::abs(s(20.0) - 20.0) < 1e-6);
    CHECK(s(1.0) == doctest::Approx(0.7310585786300049).epsilon(1e-14));
    CHECK(g(0.0) == 0.0);
    CHECK(std::abs(g(20.0) - 20.0) < 1e-6);
    CHECK(std::abs(g(0.7) - g(-0.7) - 0.7) < 1e-15);
}

TEST_CASE("backward basics") {
    ad::Tape t;
    auto x = t.variable(Tensor({2, 3}, 0.25));
    t.backward(ad::sum(x));
    for (double v : x.grad()) CHECK(v == 1.0);

    ad::Tape t2;
    auto y = t2.variable(Tensor({3}, {1, 2, 3}));
    auto unused = t2.variable(Tensor({2}, 7.0));
    t2.backward(ad::sum(ad::mul(y, y)));
    CHECK(y.grad() == std::vector<double>{2, 4, 6});
    CHECK(unused.grad() == std::vector<double>{0, 0});

    ad::Tape t3;
    auto z = t3.variable(Tensor({2}, 1.0));
    CHECK_THROWS_AS(t3.backward(ad::scale(z, 2.0)), ContractError);
}

TEST_CASE("fan-out accumulates") {
    std::mt19937_64 rng(8);
    auto x0 = random_tensor({5}, rng);
    auto grad_of = [&](auto build) {
        ad::Tape t;
        auto x = t.variable(x0);
        t.backward(build(x));
        return x.grad();
    };
    auto g = grad_of([](ad::NdValue x) { return ad::sum(ad::sigmoid(x)); });
    auto h = grad_of([](ad::NdValue x) { return ad::sum(ad::mul(x, ad::tanh(x))); });
    auto gh = grad_of([](ad::NdValue x) {
        return ad::add(ad::sum(ad::sigmoid(x)), ad::sum(ad::mul(x, ad::tanh(x))));
    });
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(gh[i] - (g[i] + h[i])) < 1e-15);

    auto lin = grad_of([](ad::NdValue x) {
        return ad::add(ad::scale(ad::sum(ad::sigmoid(x)), 2.5),
                       ad::scale(ad::sum(ad::mul(x, ad::tanh(x))), -0.75));
    });
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(lin[i] - (2.5 * g[i] - 0.75 * h[i])) < 1e-12);
}

TEST_CASE("non-finite output names the operation") {
    ad::Tape t;
    auto x = t.constant(Tensor({1}, {1e300}));
    try {
        ad::mul(x, x);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("mul") != std::string::npos);
    }
}

TEST_CASE("closures dropped for constant-only graphs") {
    ad::Tape t;
    auto a = t.constant(Tensor({2}, 1.0));
    auto b = ad::add(a, a);
    CHECK_FALSE(b.requires_grad());
    auto v = t.variable(Tensor({2}, 1.0));
    CHECK(ad::add(a, v).requires_grad());
}

TEST_CASE("finite_diff_check self tests") {
    auto sq = [](ad::NdValue x) { return ad::sum(ad::mul(x, x)); };
    CHECK(finite_diff_check(sq, Tensor({2}, {1, 2})).max_rel_err < 1e-8);

    std::mt19937_64 rng(9);
    const Tensor inputs[] = {random_tensor({4, 3}, rng), random_tensor({3, 5}, rng), random_tensor({5}, rng),
                             random_tensor({5, 2}, rng), random_tensor({4, 2}, rng)};
    ScalarFn mlp = [](ad::Tape&, std::span<const ad::NdValue> v) {
        auto h = ad::tanh(ad::add_bias(ad::matmul(v[0], v[1]), v[2]));
        auto d = ad::sub(ad::matmul(h, v[3]), v[4]);
        return ad::mean(ad::mul(d, d));
    };
    CHECK(finite_diff_check(mlp, inputs).max_rel_err < 1e-6);

    CHECK_THROWS_AS(finite_diff_check(sq, Tensor({2}, {1, 2}), 0.0), ContractError);
}

TEST_CASE("corrupted decay-mask backward is caught") {
    std::mt19937_64 rng(10);
    const Tensor mask = [] {
        Tensor m({4, 4});
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t k = 0; k <= n; ++k) m.data[n * 4 + k] = std::pow(0.5, double(n - k));
        return m;
    }();
    const Tensor w = random_tensor({2, 4, 4}, rng);
    const Tensor x = random_tensor({2, 4, 4}, rng);
    auto f = weighted([&](auto v) { return ad::decay_mask(v[0], mask); }, w);
    const Tensor in[] = {x};
    CHECK(finite_diff_check(f, in).max_rel_err < 1e-8);
    ForceFault fault(ad::testing::Fault::DecayMaskBackward);
    CHECK(finite_diff_check(f, in).max_rel_err > 1e-2);
}

TEST_CASE("primitive gradients match central differences") {
    std::mt19937_64 rng(11);
    struct Case {
        const char* name;
        std::vector<Shape> shapes;
        std::function<ad::NdValue(std::span<const ad::NdValue>)> op;
    };
    const std::vector<Case> cases = {
        {"add", {{3, 4}, {3, 4}}, [](auto v) { return ad::add(v[0], v[1]); }},
        {"sub", {{3, 4}, {3, 4}}, [](auto v) { return ad::sub(v[0], v[1]); }},
        {"mul", {{3, 4}, {3, 4}}, [](auto v) { return ad::mul(v[0], v[1]); }},
        {"scale", {{5}}, [](auto v) { return ad::scale(v[0], -1.7); }},
        {"add_bias", {{2, 3, 4}, {4}}, [](auto v) { return ad::add_bias(v[0], v[1]); }},
        {"matmul", {{2, 3, 4}, {2, 4, 2}}, [](auto v) { return ad::matmul(v[0], v[1]); }},
        {"transpose", {{2, 3, 4}}, [](auto v) { return ad::transpose(v[0]); }},
        {"reshape", {{2, 6}}, [](auto v) { return ad::reshape(v[0], {3, 4}); }},
        {"slice_last", {{2, 6}}, [](auto v) { return ad::slice_last(v[0], 2, 3); }},
        {"concat_last", {{2, 2}, {2, 3}},
         [](auto v) {
             const ad::NdValue parts[] = {v[0], v[1]};
             return ad::concat_last(parts);
         }},
        {"sigmoid", {{7}}, [](auto v) { return ad::sigmoid(v[0]); }},
        {"tanh", {{7}}, [](auto v) { return ad::tanh(v[0]); }},
        {"swish", {{7}}, [](auto v) { return ad::swish(v[0]); }},
        {"gelu", {{7}}, [](auto v) { return ad::gelu(v[0]); }},
        {"mean", {{3, 3}}, [](auto v) { return ad::mean(ad::mul(v[0], v[0])); }},
        {"layer_norm", {{3, 6}, {6}, {6}}, [](auto v) { return ad::layer_norm(v[0], v[1], v[2], 1e-5); }},
        {"group_norm", {{2, 3, 8}, {8}, {8}}, [](auto v) { return ad::group_norm(v[0], 2, v[1], v[2], 1e-5); }},
        {"rotate", {{2, 5, 6}}, [](auto v) { return ad::rotate(v[0], 1, 100.0); }},
        {"row_normalize", {{2, 4, 4}}, [](auto v) { return ad::row_normalize_clamped(v[0]); }},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        std::vector<Tensor> inputs;
        for (const auto& s : c.shapes) inputs.push_back(random_tensor(s, rng));
        ad::Tape probe;
        std::vector<ad::NdValue> vs;
        for (const auto& in : inputs) vs.push_back(probe.constant(in));
        const Tensor w = random_tensor(c.op(vs).shape(), rng, 0.5, 1.5);
        CHECK(finite_diff_check(weighted(c.op, w), inputs).max_rel_err < 1e-6);
    }
}

TEST_CASE("rotation properties") {
    std::mt19937_64 rng(12);
    ad::Tape t;
    auto x = random_tensor({2, 7, 8}, rng);
    auto r = ad::rotate(t.constant(x), 1, 10000.0);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t j = 0; j < 8; ++j) CHECK(r.value().data[b * 56 + j] == x.data[b * 56 + j]);
        for (std::size_t n = 0; n < 7; ++n)
            for (std::size_t j = 0; j < 4; ++j) {
                const std::size_t o = b * 56 + n * 8 + 2 * j;
                const double before = std::hypot(x.data[o], x.data[o + 1]);
                const double after = std::hypot(r.value().data[o], r.value().data[o + 1]);
                CHECK(std::abs(before - after) < 1e-12);
            }
    }
    auto back = ad::rotate(r, -1, 10000.0);
    CHECK(max_abs_diff(back.value().data, x.data) < 1e-12);
    for (std::size_t n = 0; n < 7; ++n) {
        auto ref = oracle::rotate(std::span(x.data).subspan(n * 8, 8), n, 1, 10000.0);
        CHECK(max_abs_diff(std::span(r.value().data).subspan(n * 8, 8), ref) < 1e-12);
    }
    CHECK_THROWS_AS(ad::rotate(t.constant(Tensor({2, 3, 5})), 1, 1e4), ConfigError);
}

TEST_CASE("row_normalize_clamped only shrinks large rows") {
    ad::Tape t;
    auto x = t.constant(Tensor({2, 2}, {0.2, 0.3, 3.0, -7.0}));
    auto y = ad::row_normalize_clamped(x).value().data;
    CHECK(y[0] == 0.2);
    CHECK(y[1] == 0.3);
    CHECK(y[2] == doctest::Approx(3.0 / 4.0));
    CHECK(y[3] == doctest::Approx(-7.0 / 4.0));
}

TEST_CASE("forward and backward are deterministic") {
    std::mt19937_64 rng(13);
    auto A = random_tensor({3, 4}, rng);
    auto B = random_tensor({4, 4}, rng);
    auto run = [&] {
        ad::Tape t;
        auto a = t.variable(A);
        auto b = t.variable(B);
        auto y = ad::sum(ad::gelu(ad::layer_norm(ad::matmul(a, b), t.constant(Tensor({4}, 1.0)),
                                                 t.constant(Tensor({4}, 0.0)), 1e-5)));
        t.backward(y);
        auto g = a.grad();
        g.insert(g.end(), b.grad().begin(), b.grad().end());
        g.push_back(y.value().data[0]);
        return g;
    };
    CHECK(run() == run());
}
