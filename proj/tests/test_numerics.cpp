#include <cmath>
#include <random>

#include "doctest.h"
#include "ictsp/autograd.hpp"
#include "ictsp/errors.hpp"
#include "ictsp/optim.hpp"
#include "ictsp/tensor.hpp"

using namespace ictsp;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    Tensor t({r, c});
    for (auto& v : t.values()) v = lo + (hi - lo) * uniform01(rng);
    return t;
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor out({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

// Weighted sum of an op's output so every output entry carries a distinct
// gradient.
Var probe(Tape& tape, Var out, const Tensor& weights) {
    return sum(mul(out, tape.constant(weights.reshaped(out.value().shape()))));
}

}  // namespace

TEST_CASE("matmul matches identity, projector and triple loop") {
    const Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
    const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
    CHECK(matmul(id, m) == m);
    CHECK(matmul(Tensor::matrix({{1, 0}, {0, 0}}), Tensor::matrix({{5, 6}, {7, 8}})) ==
          Tensor::matrix({{5, 6}, {0, 0}}));

    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = random_tensor(rng, 3, 4);
        const Tensor b = random_tensor(rng, 4, 2);
        CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
        CHECK(max_abs_diff(matmul_nt(a, b.transposed()), naive_matmul(a, b)) < 1e-12);
        CHECK(max_abs_diff(matmul_tn(a.transposed(), b), naive_matmul(a, b)) < 1e-12);
    }
    CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
}

TEST_CASE("softmax rows") {
    auto s = softmax_rows(Tensor::matrix({{0, 0}}));
    CHECK(s[0] == doctest::Approx(0.5));
    CHECK(s[1] == doctest::Approx(0.5));

    s = softmax_rows(Tensor::matrix({{std::log(2.0), 0}}));
    CHECK(std::abs(s[0] - 2.0 / 3.0) < 1e-15);
    CHECK(std::abs(s[1] - 1.0 / 3.0) < 1e-15);

    s = softmax_rows(Tensor::matrix({{1000, 0}}));
    CHECK(s.all_finite());
    CHECK(s[0] == doctest::Approx(1.0));
    CHECK(s[1] < 1e-300);

    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor p = softmax_rows(random_tensor(rng, 4, 7, -30, 30));
        for (std::size_t i = 0; i < p.rows(); ++i) {
            double total = 0.0;
            for (double v : p.row(i)) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                total += v;
            }
            CHECK(std::abs(total - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("layer norm") {
    const Tensor ones = Tensor::vector({1, 1, 1, 1});
    const Tensor zeros4 = Tensor::vector({0, 0, 0, 0});
    CHECK(layer_norm(ones, ones, zeros4) == zeros4);

    const Tensor out = layer_norm(Tensor::vector({1, 3}), Tensor::vector({1, 1}), Tensor::vector({0, 0}), 0.0);
    CHECK(out[0] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-15));

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor x = random_tensor(rng, 1, 6, -5, 5);
        const double c = 4.0 * uniform01(rng) - 2.0;
        const Tensor y = layer_norm(x, Tensor({6}, 1.0), Tensor({6}, c), 0.0);
        double mean = 0.0;
        double var = 0.0;
        for (double v : y.values()) mean += v;
        mean /= 6.0;
        for (double v : y.values()) var += (v - mean) * (v - mean);
        CHECK(std::abs(mean - c) < 1e-12);
        CHECK(std::abs(var / 6.0 - 1.0) < 1e-10);
    }
}

TEST_CASE("adam step") {
    SUBCASE("first step moves by lr") {
        Parameter p("p", Tensor::vector({1.0}));
        p.grad = Tensor::vector({0.5});
        AdamState state;
        Parameter* ps[] = {&p};
        adam_step(state, ps, 1e-3);
        // m_hat = 0.5, v_hat = 0.25: update = lr * 0.5 / (0.5 + 1e-8)
        CHECK(std::abs(p.value[0] - (1.0 - 1e-3 * 0.5 / (0.5 + 1e-8))) < 1e-15);
        CHECK(p.value[0] == doctest::Approx(0.999));
        CHECK(state.t == 1);
    }
    SUBCASE("zero gradient leaves the parameter alone") {
        Parameter p("p", Tensor::vector({1.0}));
        p.grad = Tensor::vector({0.0});
        AdamState state;
        Parameter* ps[] = {&p};
        adam_step(state, ps, 1e-3);
        CHECK(p.value[0] == 1.0);
    }
    SUBCASE("two steps match a scalar reference") {
        const double g = -0.3;
        const double lr = 2e-3;
        double theta = 0.7;
        double m = 0.0;
        double v = 0.0;
        for (int t = 1; t <= 2; ++t) {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            theta -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        }
        Parameter p("p", Tensor::vector({0.7}));
        AdamState state;
        Parameter* ps[] = {&p};
        for (int t = 0; t < 2; ++t) {
            p.grad = Tensor::vector({g});
            adam_step(state, ps, lr);
        }
        CHECK(std::abs(p.value[0] - theta) < 1e-12);
        CHECK(state.t == 2);
    }
    SUBCASE("deterministic") {
        std::mt19937_64 rng(5);
        const Tensor init = random_tensor(rng, 3, 3);
        const Tensor grad = random_tensor(rng, 3, 3);
        Tensor results[2];
        for (auto& r : results) {
            Parameter p("w", init);
            AdamState state;
            Parameter* ps[] = {&p};
            for (int t = 0; t < 3; ++t) {
                p.grad = grad;
                adam_step(state, ps, 1e-2);
            }
            r = p.value;
        }
        CHECK(results[0] == results[1]);
    }
    SUBCASE("non-finite gradient is reported") {
        Parameter p("bad", Tensor::vector({1.0}));
        p.grad = Tensor::vector({std::nan("")});
        AdamState state;
        Parameter* ps[] = {&p};
        CHECK_THROWS_AS(adam_step(state, ps, 1e-3), TrainingError);
        CHECK(p.value[0] == 1.0);
        CHECK(state.t == 0);
    }
}

TEST_CASE("check_gradients on closed forms") {
    Parameter theta("theta", Tensor::vector({3.0}));
    Parameter dead("dead", Tensor::vector({1.5}));
    Parameter* ps[] = {&theta, &dead};
    auto f = [&](Tape& t) {
        Var x = t.param(theta);
        t.param(dead);
        return sum(mul(x, x));
    };
    const auto r = check_gradients(f, ps, 1e-5);
    CHECK(theta.grad[0] == doctest::Approx(6.0));
    CHECK(r.max_rel_error < 1e-8);
    CHECK(dead.grad[0] == 0.0);
    CHECK(r.checked == 1);
}

TEST_CASE("every backward rule agrees with central differences") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        Parameter a("a", random_tensor(rng, 3, 4));
        Parameter b("b", random_tensor(rng, 3, 4));
        Parameter w("w", random_tensor(rng, 5, 4));
        Parameter bias("bias", random_tensor(rng, 1, 5).reshaped({5}));
        Parameter row("row", random_tensor(rng, 1, 4).reshaped({4}));
        Parameter gain("gain", random_tensor(rng, 1, 4, 0.5, 1.5).reshaped({4}));
        Parameter shift("shift", random_tensor(rng, 1, 4).reshaped({4}));
        const Tensor target = random_tensor(rng, 3, 4);
        const Tensor w34 = random_tensor(rng, 3, 4);
        const Tensor w35 = random_tensor(rng, 3, 5);
        const Tensor w33 = random_tensor(rng, 3, 3);
        const Tensor w43 = random_tensor(rng, 4, 3);
        const Tensor w38 = random_tensor(rng, 3, 8);
        const Tensor w64 = random_tensor(rng, 6, 4);
        const Tensor w22 = random_tensor(rng, 3, 2);
        const std::uint64_t dropout_seed = rng();
        Parameter vals("vals", random_tensor(rng, 5, 4));
        std::vector<Parameter*> ps = {&a, &b, &w, &bias, &row, &gain, &shift, &vals};

        const std::vector<std::function<Var(Tape&)>> cases = {
            [&](Tape& t) { return probe(t, add(t.param(a), t.param(b)), w34); },
            [&](Tape& t) { return probe(t, sub(t.param(a), t.param(b)), w34); },
            [&](Tape& t) { return probe(t, mul(t.param(a), t.param(b)), w34); },
            [&](Tape& t) { return probe(t, scale(t.param(a), -1.7), w34); },
            [&](Tape& t) { return probe(t, add_row(t.param(a), t.param(row)), w34); },
            [&](Tape& t) { return probe(t, matmul(t.param(a), transpose(t.param(w))), w35); },
            [&](Tape& t) { return probe(t, matmul_nt(t.param(a), t.param(b)), w33); },
            [&](Tape& t) { return probe(t, linear(t.param(a), t.param(w), t.param(bias)), w35); },
            [&](Tape& t) { return probe(t, transpose(t.param(a)), w43); },
            [&](Tape& t) { return probe(t, softmax_rows(scale(t.param(a), 3.0)), w34); },
            [&](Tape& t) { return probe(t, layer_norm_rows(t.param(a), t.param(gain), t.param(shift)), w34); },
            [&](Tape& t) { return probe(t, gelu(scale(t.param(a), 2.0)), w34); },
            [&](Tape& t) {
                std::mt19937_64 drng(dropout_seed);
                return probe(t, dropout(t.param(a), 0.3, drng, true), w34);
            },
            [&](Tape& t) { return probe(t, slice_cols(t.param(a), 1, 2), w22); },
            [&](Tape& t) {
                const Var parts[] = {t.param(a), t.param(b)};
                return probe(t, concat_cols(parts), w38);
            },
            [&](Tape& t) {
                const std::size_t rows[] = {2, 0, 2};
                return probe(t, gather_rows(t.param(a), rows), w34);
            },
            [&](Tape& t) {
                const Var parts[] = {t.param(a), t.param(b)};
                return probe(t, concat_rows(parts), w64);
            },
            [&](Tape& t) { return probe(t, normalize_rows(t.param(a)), w34); },
            [&](Tape& t) { return probe(t, multi_head_attention(t.param(a), t.param(w), t.param(vals), 2), w34); },
            [&](Tape& t) { return probe(t, multi_head_attention(t.param(a), t.param(b), t.param(b), 1), w34); },
            [&](Tape& t) { return mean(mul(t.param(a), t.param(a))); },
            [&](Tape& t) { return mse(t.param(a), target); },
        };
        for (std::size_t i = 0; i < cases.size(); ++i) {
            const auto r = check_gradients(cases[i], ps, 1e-5);
            INFO("case " << i << " seed " << seed << " worst " << r.worst);
            CHECK(r.max_rel_error < 1e-4);
            worst = std::max(worst, r.max_rel_error);
        }
    }
    MESSAGE("worst relative error over all ops and seeds: " << worst);
}

TEST_CASE("multi-head attention equals the per-head composition") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t heads = 1 + rng() % 4, dh = 1 + rng() % 5, n = 1 + rng() % 6, m = 1 + rng() % 6;
        const std::size_t d = heads * dh;
        Tape t;
        Var q = t.constant(random_tensor(rng, n, d, -2.0, 2.0));
        Var k = t.constant(random_tensor(rng, m, d, -2.0, 2.0));
        Var v = t.constant(random_tensor(rng, m, d));
        std::vector<Var> outs;
        Tensor avg({n, m});
        for (std::size_t h = 0; h < heads; ++h) {
            Var p = softmax_rows(scale(matmul_nt(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh)),
                                       1.0 / std::sqrt(static_cast<double>(dh))));
            for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += p.value()[i] / static_cast<double>(heads);
            outs.push_back(matmul(p, slice_cols(v, h * dh, dh)));
        }
        Tensor weights;
        const Tensor fused = multi_head_attention(q, k, v, heads, &weights).value();
        CHECK(max_abs_diff(fused, concat_cols(outs).value()) < 1e-12);
        CHECK(max_abs_diff(weights, avg) < 1e-12);
    }
}

TEST_CASE("dropout is identity at inference and scales kept entries in training") {
    std::mt19937_64 rng(1);
    Tape t;
    Var x = t.constant(Tensor({10, 10}, 1.0));
    CHECK(dropout(x, 0.5, rng, false).id() == x.id());
    Var y = dropout(x, 0.5, rng, true);
    std::size_t zeros = 0;
    for (double v : y.value().values()) {
        CHECK((v == 0.0 || v == 2.0));
        zeros += v == 0.0;
    }
    CHECK(zeros > 20);
    CHECK(zeros < 80);
}

TEST_CASE("normalize_rows leaves a zero row at zero") {
    Tape t;
    Var x = t.constant(Tensor::matrix({{0, 0}, {3, 4}}));
    const Tensor y = normalize_rows(x).value();
    CHECK(y(0, 0) == 0.0);
    CHECK(y(1, 0) == doctest::Approx(0.6));
    CHECK(y(1, 1) == doctest::Approx(0.8));
}
