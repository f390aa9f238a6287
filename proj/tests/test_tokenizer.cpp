#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "ictsp/autograd.hpp"
#include "ictsp/errors.hpp"
#include "ictsp/tokenizer.hpp"

using namespace ictsp;

namespace {

Tensor ramp_window(std::size_t C, std::size_t L) {
    Tensor w({C, L});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < L; ++t) w(c, t) = 1000.0 * static_cast<double>(c) + static_cast<double>(t);
    return w;
}

}  // namespace

TEST_CASE("context counts for the reference configuration") {
    const Tensor w = ramp_window(1, 1440);
    const auto dense = build_tokens(w, 512, 96, 1, 0);
    CHECK(dense.count(TokenKind::context) == 832);
    CHECK(dense.count(TokenKind::target) == 1);
    const auto strided = build_tokens(w, 512, 96, 8, 0);
    CHECK(strided.count(TokenKind::context) == 104);
    CHECK(strided.size() == 105);

    const auto c7 = build_tokens(ramp_window(7, 1440), 512, 96, 8, 0);
    CHECK(c7.size() == 7 * 105);
}

TEST_CASE("non-overlapping windows when m = L_b + L_P") {
    const auto tm = build_tokens(ramp_window(1, 100), 10, 5, 15, 0);
    auto ctx = tm.indices(TokenKind::context);
    REQUIRE(ctx.size() >= 2);
    for (std::size_t i = 1; i < ctx.size(); ++i) {
        CHECK(tm.meta[ctx[i]].window_start - tm.meta[ctx[i - 1]].window_start == 15);
    }
    // Newest window ends at L_I.
    CHECK(tm.meta[ctx.back()].window_start + 15 == 100);
}

TEST_CASE("token content is raw window data with zero placeholders") {
    std::mt19937_64 rng(4);
    Tensor w({3, 40});
    for (auto& v : w.values()) v = uniform01(rng);
    const std::size_t lb = 8, lp = 4;
    const auto tm = build_tokens(w, lb, lp, 3, 1);
    for (std::size_t i = 0; i < tm.size(); ++i) {
        const auto& m = tm.meta[i];
        auto row = tm.tokens.row(i);
        if (m.kind == TokenKind::context) {
            REQUIRE(m.window_start + lb + lp <= 40);
            for (std::size_t j = 0; j < lb + lp; ++j) CHECK(row[j] == w(m.series, m.window_start + j));
        } else {
            for (std::size_t j = 0; j < lb; ++j) CHECK(row[j] == w(m.series, 40 - lb + j));
            for (std::size_t j = lb; j < lb + lp; ++j) CHECK(row[j] == 0.0);
            CHECK(m.recency == 0);
        }
    }
    for (std::size_t c = 0; c < 3; ++c) {
        std::size_t targets = 0;
        for (const auto& m : tm.meta) targets += m.kind == TokenKind::target && m.series == c;
        CHECK(targets == 1);
    }
}

TEST_CASE("sampling shifts tile the candidate starts exactly once") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t lb = 1 + rng() % 10;
        const std::size_t lp = 1 + rng() % 6;
        const std::size_t L = lb + lp + rng() % 40;
        const std::size_t m = 1 + rng() % 9;
        const std::size_t N = L - lb - lp;
        std::multiset<std::size_t> starts;
        for (std::size_t r = 0; r < m; ++r) {
            const auto tm = build_tokens(ramp_window(1, L), lb, lp, m, r);
            CHECK(tm.count(TokenKind::context) == context_per_series(N, m, r));
            for (auto i : tm.indices(TokenKind::context)) starts.insert(tm.meta[i].window_start);
        }
        CHECK(starts.size() == N);
        for (std::size_t s = 1; s <= N; ++s) CHECK(starts.count(s) == 1);
    }
}

TEST_CASE("build_tokens rejects bad configurations") {
    const Tensor w = ramp_window(1, 10);
    CHECK_THROWS_AS(build_tokens(w, 8, 4, 1, 0), ConfigError);
    CHECK_THROWS_AS(build_tokens(w, 4, 2, 0, 0), ConfigError);
    CHECK_THROWS_AS(build_tokens(w, 4, 2, 2, 2), ConfigError);
    // L_b + L_P == L_I leaves only the target.
    const auto only = build_tokens(w, 6, 4, 1, 0);
    CHECK(only.count(TokenKind::context) == 0);
    CHECK(only.size() == 1);
}

TEST_CASE("rationalization") {
    SUBCASE("last lookback value becomes zero") {
        Tensor w({1, 6});
        const double v[] = {1, 2, 5, 7, 9, 5};
        for (std::size_t t = 0; t < 6; ++t) w(0, t) = v[t];
        const auto tm = rationalize_tokens(build_tokens(w, 3, 2, 1, 0));
        for (std::size_t i = 0; i < tm.size(); ++i) CHECK(tm.tokens(i, 2) == 0.0);
        const auto target = tm.indices(TokenKind::target).front();
        CHECK(tm.meta[target].offset == 5.0);
        // Context [2,5,7 | 9,5] with offset 7.
        const auto ctx = tm.indices(TokenKind::context).back();
        CHECK(tm.meta[ctx].offset == 7.0);
        CHECK(tm.tokens(ctx, 0) == -5.0);
        CHECK(tm.tokens(ctx, 4) == -2.0);
        CHECK(tm.tokens(target, 3) == 0.0);
        CHECK(tm.tokens(target, 4) == 0.0);
    }
    SUBCASE("constant series gives all-zero tokens") {
        const auto tm = rationalize_tokens(build_tokens(Tensor({2, 30}, 3.25), 6, 4, 2, 0));
        for (double x : tm.tokens.values()) CHECK(x == 0.0);
    }
    SUBCASE("inverse map restores context tokens") {
        std::mt19937_64 rng(8);
        Tensor w({4, 64});
        for (auto& x : w.values()) x = 10.0 * uniform01(rng) - 5.0;
        const auto raw = build_tokens(w, 12, 6, 3, 2);
        const auto back = derationalize_tokens(rationalize_tokens(raw));
        CHECK(max_abs_diff(back.tokens, raw.tokens) < 1e-12);
    }
}

TEST_CASE("mask_history") {
    std::mt19937_64 rng(2);
    Tensor w({2, 1440});
    for (auto& x : w.values()) x = 1.0 + uniform01(rng);
    CHECK(mask_history(w, 1440) == w);
    const Tensor m = mask_history(w, 512);
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t t = 0; t < 928; ++t) CHECK(m(c, t) == 0.0);
        for (std::size_t t = 928; t < 1440; ++t) CHECK(m(c, t) == w(c, t));
    }
    const Tensor last = mask_history(w, 1);
    CHECK(last(0, 1438) == 0.0);
    CHECK(last(0, 1439) == w(0, 1439));
    CHECK_THROWS_AS(mask_history(w, 0), ConfigError);
}

TEST_CASE("count_context_tokens closed form") {
    const auto reference = count_context_tokens(1440, 512, 96, 8, 7, 0.10, 30);
    CHECK(reference.pre_retrieval == 728);
    CHECK(reference.post_retrieval == 100);

    const auto full = count_context_tokens(1440, 512, 96, 1, 3, 1.0, 0);
    CHECK(full.pre_retrieval == 832 * 3);
    CHECK(full.post_retrieval == full.pre_retrieval);
}
