#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ictsp/data.hpp"
#include "ictsp/errors.hpp"

using namespace ictsp;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& body) {
    const fs::path p = fs::temp_directory_path() / ("ictsp_test_" + name);
    std::ofstream(p) << body;
    return p;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("load_csv") {
    SUBCASE("plain file") {
        const auto p = write_temp("plain.csv", "a,b\n1,2\n3,4\n5,6\n");
        const SeriesFrame f = load_csv(p, false);
        CHECK(f.channels() == 2);
        CHECK(f.length() == 3);
        CHECK(f.values(0, 2) == 5.0);
        CHECK(f.values(1, 0) == 2.0);
        CHECK(f.names == std::vector<std::string>{"a", "b"});
    }
    SUBCASE("ETT layout drops the date column") {
        const auto p = write_temp("ett.csv",
                                  "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n"
                                  "2016-07-01 00:00:00,5.827,2.009,1.599,0.462,4.203,1.340,30.531\r\n"
                                  "2016-07-01 01:00:00,5.693,2.076,1.492,0.426,4.142,1.371,27.787\r\n");
        const SeriesFrame f = load_csv(p, true);
        CHECK(f.channels() == 7);
        CHECK(f.length() == 2);
        CHECK(f.values(6, 1) == doctest::Approx(27.787));
    }
    SUBCASE("non-numeric cell names its row") {
        const auto p = write_temp("bad.csv", "a,b\n1,2\n1,2\n1,2\n1,2\n1,abc\n");
        try {
            load_csv(p, false);
            FAIL("expected IngestError");
        } catch (const IngestError& e) {
            CHECK(std::string(e.what()).find("row 5") != std::string::npos);
            CHECK(std::string(e.what()).find("abc") != std::string::npos);
        }
    }
    SUBCASE("ragged and empty files") {
        CHECK_THROWS_AS(load_csv(write_temp("ragged.csv", "a,b\n1,2\n3\n"), false), IngestError);
        CHECK_THROWS_AS(load_csv(write_temp("empty.csv", ""), false), IngestError);
        CHECK_THROWS_AS(load_csv(write_temp("header.csv", "a,b\n"), false), IngestError);
    }
}

TEST_CASE("split_standardize") {
    SUBCASE("split arithmetic") {
        SeriesFrame f;
        f.values = Tensor({1, 100});
        for (std::size_t t = 0; t < 100; ++t) f.values(0, t) = static_cast<double>(t % 7);
        const auto s = split_standardize(f);
        CHECK(s.train_end == 70);
        CHECK(s.val_end == 80);
        CHECK(s.train_used == 70);
    }
    SUBCASE("population moments of the train slice") {
        SeriesFrame f;
        // T = 10 puts the first 7 steps in the train slice.
        f.values = Tensor({1, 10});
        const double vals[] = {1, 2, 3, 2, 1, 3, 2, 50, 60, 70};
        for (std::size_t t = 0; t < 10; ++t) f.values(0, t) = vals[t];
        const auto s = split_standardize(f);
        REQUIRE(s.scaler);
        CHECK(s.scaler->mean[0] == doctest::Approx(2.0));
        CHECK(s.scaler->stddev[0] == doctest::Approx(std::sqrt(4.0 / 7.0)));

        // Train slice exactly {1, 2, 3}.
        SeriesFrame h;
        h.values = Tensor({1, 5});
        const double hv[] = {1, 2, 3, 4, 5};
        for (std::size_t t = 0; t < 5; ++t) h.values(0, t) = hv[t];
        const auto hs = split_standardize(h, SplitSpec{0.6, 0.2, 0.2});
        CHECK(hs.train_end == 3);
        CHECK(hs.scaler->mean[0] == doctest::Approx(2.0));
        CHECK(hs.scaler->stddev[0] == doctest::Approx(0.8164965809).epsilon(1e-9));
    }
    SUBCASE("standardized train slice and round trip") {
        const auto multi = gen_multi(MultiSpec{2000, {24, 48}, 2, 9});
        const auto s = split_standardize(multi.frame);
        for (std::size_t c = 0; c < s.channels(); ++c) {
            double mean = 0, var = 0;
            for (std::size_t t = 0; t < s.train_end; ++t) mean += s.values(c, t);
            mean /= static_cast<double>(s.train_end);
            for (std::size_t t = 0; t < s.train_end; ++t) var += (s.values(c, t) - mean) * (s.values(c, t) - mean);
            CHECK(std::abs(mean) < 1e-6);
            CHECK(std::abs(std::sqrt(var / static_cast<double>(s.train_end)) - 1.0) < 1e-6);
        }
        CHECK(max_abs_diff(inverse_transform(s), multi.frame.values) < 1e-9);

        const auto again = split_standardize(s);
        CHECK(max_abs_diff(again.values, s.values) < 1e-9);
        for (std::size_t c = 0; c < s.channels(); ++c) {
            CHECK(std::abs(again.scaler->mean[c]) < 1e-9);
            CHECK(std::abs(again.scaler->stddev[c] - 1.0) < 1e-9);
        }
    }
    SUBCASE("constant channel clamps std to 1") {
        SeriesFrame f;
        f.values = Tensor({1, 20}, 4.0);
        const auto s = split_standardize(f);
        CHECK(s.scaler->stddev[0] == 1.0);
        CHECK(s.values(0, 19) == 0.0);
    }
    SUBCASE("bad fractions") {
        SeriesFrame f;
        f.values = Tensor({1, 20});
        CHECK_THROWS_AS(split_standardize(f, SplitSpec{0.7, 0.2, 0.2}), ConfigError);
        SeriesFrame tiny;
        tiny.values = Tensor({1, 2});
        CHECK_THROWS_AS(split_standardize(tiny), ConfigError);
    }
}

TEST_CASE("random walk") {
    const auto a = gen_random_walk(5000, 42);
    const auto b = gen_random_walk(5000, 42);
    CHECK(a.values == b.values);
    CHECK(a.values(0, 0) == 0.0);
    double mean_inc = 0.0;
    for (std::size_t t = 1; t < 5000; ++t) mean_inc += a.values(0, t) - a.values(0, t - 1);
    mean_inc /= 4999.0;
    CHECK(std::abs(mean_inc) < 5.0 / std::sqrt(4999.0));

    const auto one = gen_random_walk(1, 3);
    CHECK(one.length() == 1);
    CHECK(one.values(0, 0) == 0.0);
}

TEST_CASE("gen_multi") {
    SUBCASE("default shape") {
        const auto m = gen_multi(MultiSpec{1000, {96, 192, 336, 720}, 3, 1});
        CHECK(m.frame.channels() == 8);
    }
    SUBCASE("hand shift with master leading") {
        const double master[] = {0, 1, 2, 3};
        CHECK(lag_series(master, 2) == std::vector<double>{0, 0, 0, 1});
        CHECK(lag_series(master, 1) == std::vector<double>{0, 0, 1, 2});
        CHECK(lag_series(master, 0) == std::vector<double>{0, 1, 2, 3});

        const auto m = gen_multi(MultiSpec{4, {2}, 0, 5});
        const auto& v = m.frame.values;
        CHECK(v(1, 0) == v(0, 0));
        CHECK(v(1, 1) == v(0, 0));
        CHECK(v(1, 2) == v(0, 0));
        CHECK(v(1, 3) == v(0, 1));
    }
    SUBCASE("shift identity at every valid step and combination residual") {
        const MultiSpec spec{3000, {24, 48, 96}, 4, 17};
        const auto m = gen_multi(spec);
        const auto& v = m.frame.values;
        REQUIRE(m.frame.channels() == 8);
        for (std::size_t i = 0; i < spec.shifts.size(); ++i) {
            const std::size_t s = spec.shifts[i];
            for (std::size_t t = s; t < spec.length; ++t) CHECK_EQ(v(1 + i, t) - v(0, t - s), 0.0);
        }
        REQUIRE(m.coefficients.rows() == 4);
        REQUIRE(m.coefficients.cols() == 4);
        for (std::size_t k = 0; k < 4; ++k) {
            for (double w : m.coefficients.row(k)) {
                CHECK(w >= -1.0);
                CHECK(w <= 1.0);
            }
            for (std::size_t t = 0; t < spec.length; ++t) {
                double expect = 0.0;
                for (std::size_t b = 0; b < 4; ++b) expect += m.coefficients(k, b) * v(b, t);
                CHECK_EQ(v(4 + k, t) - expect, 0.0);
            }
        }
        CHECK(gen_multi(spec).frame.values == v);
    }
    SUBCASE("shift must be shorter than the series") {
        CHECK_THROWS_AS(gen_multi(MultiSpec{100, {100}, 0, 1}), ConfigError);
    }
}

TEST_CASE("independent channels") {
    const auto f = gen_channels_independent(10000, 4, 8);
    CHECK(f.values == gen_channels_independent(10000, 4, 8).values);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) CHECK(std::abs(pearson(f.values.row(i), f.values.row(j))) < 0.2);

    // phi = 0: lag-1 autocorrelation vanishes.
    const auto w = gen_channels_independent(10000, 1, 8, 0.0);
    auto r = w.values.row(0);
    CHECK(std::abs(pearson(r.subspan(0, 9999), r.subspan(1, 9999))) < 0.05);
    auto ar = f.values.row(0);
    CHECK(pearson(ar.subspan(0, 9999), ar.subspan(1, 9999)) > 0.6);
}

TEST_CASE("few_shot_truncate") {
    SeriesFrame g;
    g.values = Tensor({2, 1500});
    g.train_end = 1000;
    g.train_used = 1000;
    g.val_end = 1200;
    const auto ten = few_shot_truncate(g, 0.10, 50);
    CHECK(ten.train_used == 100);
    CHECK(ten.train_end == 1000);
    CHECK(ten.val_end == 1200);
    CHECK(few_shot_truncate(g, 1.0, 50).train_used == 1000);
    CHECK_THROWS_AS(few_shot_truncate(g, 0.05, 60), ExperimentError);
    CHECK_THROWS_AS(few_shot_truncate(g, 0.0, 1), ConfigError);
}
