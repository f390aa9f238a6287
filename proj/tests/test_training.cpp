#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "ictsp/errors.hpp"
#include "ictsp/training.hpp"

using namespace ictsp;

namespace {

ModelConfig tiny_model(Variant v = Variant::ictsp) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.layers = 1;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.dropout = 0.1;
    cfg.input_len = 32;
    cfg.lookback = 8;
    cfg.horizon = 4;
    cfg.sample_step = 4;
    cfg.retrieval = RetrievalConfig{4, 0.5, 2, true};
    cfg.max_series = 8;
    cfg.channels = v == Variant::temporal_wise ? 3 : 0;
    return cfg;
}

SeriesFrame tiny_frame(std::size_t C = 3, std::size_t T = 400) {
    return split_standardize(gen_multi(MultiSpec{T, {4, 8}, C > 3 ? C - 3 : 0, 5}).frame);
}

TrainConfig tiny_train() {
    TrainConfig cfg;
    cfg.lr_peak = 1e-3;
    cfg.lr_warmup = 5;
    cfg.max_steps = 20;
    cfg.batch_size = 4;
    cfg.eval_interval = 5;
    cfg.patience = 3;
    cfg.eval_stride = 4;
    return cfg;
}

std::vector<double> flatten(const std::vector<const Parameter*>& ps) {
    std::vector<double> out;
    for (const Parameter* p : ps) out.insert(out.end(), p->value.values().begin(), p->value.values().end());
    return out;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
    TrainConfig cfg;
    CHECK(lr_at_step(0, cfg) == 0.0);
    CHECK(lr_at_step(500, cfg) == doctest::Approx(2.5e-4).epsilon(1e-12));
    CHECK(lr_at_step(1000, cfg) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_at_step(cfg.max_steps, cfg) == 0.0);
    CHECK(lr_at_step(cfg.max_steps + 10, cfg) == 0.0);
    CHECK(lr_at_step(50500, cfg) == doctest::Approx(2.5e-4).epsilon(1e-12));
    for (std::size_t s = 1000; s < 100000; s += 997) CHECK(lr_at_step(s + 1, cfg) <= lr_at_step(s, cfg));
}

TEST_CASE("augment_batch") {
    std::mt19937_64 rng(3);
    const auto frame = tiny_frame(5);
    const auto cfg = tiny_model();
    const auto batch = sample_batch(frame, cfg.input_len, cfg.horizon, 16, rng);

    SUBCASE("everything off is the identity") {
        const auto out = augment_batch(batch, cfg, Augmentations{false, false, false}, rng);
        REQUIRE(out.size() == batch.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            CHECK(out[i].window == batch[i].window);
            CHECK(out[i].future == batch[i].future);
            CHECK(out[i].shift == 0);
            CHECK(out[i].series_ids.empty());
        }
    }
    SUBCASE("shuffle permutes whole channels and draws distinct ids") {
        const auto out = augment_batch(batch, cfg, Augmentations{false, true, false}, rng);
        for (std::size_t i = 0; i < out.size(); ++i) {
            std::multiset<std::vector<double>> a, b;
            for (std::size_t c = 0; c < 5; ++c) {
                std::vector<double> ra(batch[i].window.row(c).begin(), batch[i].window.row(c).end());
                ra.insert(ra.end(), batch[i].future.row(c).begin(), batch[i].future.row(c).end());
                std::vector<double> rb(out[i].window.row(c).begin(), out[i].window.row(c).end());
                rb.insert(rb.end(), out[i].future.row(c).begin(), out[i].future.row(c).end());
                a.insert(ra);
                b.insert(rb);
            }
            CHECK(a == b);
            const std::set<std::size_t> ids(out[i].series_ids.begin(), out[i].series_ids.end());
            CHECK(ids.size() == 5);
            CHECK(*ids.rbegin() < cfg.max_series);
        }
    }
    SUBCASE("subset keeps between one and C channels") {
        std::set<std::size_t> sizes;
        for (int rep = 0; rep < 20; ++rep)
            for (const auto& s : augment_batch(batch, cfg, Augmentations{false, true, true}, rng)) {
                CHECK(s.window.rows() >= 1);
                CHECK(s.window.rows() <= 5);
                CHECK(s.future.rows() == s.window.rows());
                CHECK(s.series_ids.size() == s.window.rows());
                sizes.insert(s.window.rows());
            }
        CHECK(sizes.size() == 5);
    }
    SUBCASE("shift covers 0..m-1") {
        std::set<std::size_t> shifts;
        for (int rep = 0; rep < 10; ++rep)
            for (const auto& s : augment_batch(batch, cfg, Augmentations{true, false, false}, rng))
                shifts.insert(s.shift);
        CHECK(shifts == std::set<std::size_t>{0, 1, 2, 3});
    }
    SUBCASE("temporal-wise keeps the channel layout") {
        const auto tcfg = tiny_model(Variant::temporal_wise);
        const auto out = augment_batch(batch, tcfg, Augmentations{true, true, true}, rng);
        for (std::size_t i = 0; i < out.size(); ++i) {
            CHECK(out[i].window == batch[i].window);
            CHECK(out[i].shift == 0);
        }
    }
}

TEST_CASE("linear warm-up gate") {
    const auto frame = tiny_frame();
    Model model(tiny_model(), 4);
    auto cfg = tiny_train();
    cfg.linear_warmup = 3;
    TrainState state(cfg.seed);

    std::vector<const Parameter*> frozen, proj;
    for (const Parameter* p : std::as_const(model).parameters()) {
        const bool is_proj = p->name.rfind("in.", 0) == 0 || p->name.rfind("out.", 0) == 0;
        (is_proj ? proj : frozen).push_back(p);
    }
    REQUIRE(proj.size() == 4);
    const auto frozen0 = flatten(frozen);
    const auto proj0 = flatten(proj);
    for (int s = 0; s < 3; ++s) {
        const auto batch = sample_batch(frame, 32, 4, 4, state.data_rng);
        train_step(model, batch, state, cfg);
        CHECK(flatten(frozen) == frozen0);
    }
    CHECK(flatten(proj) != proj0);
    const auto batch = sample_batch(frame, 32, 4, 4, state.data_rng);
    train_step(model, batch, state, cfg);
    CHECK(flatten(frozen) != frozen0);
}

TEST_CASE("a perfect model is left unchanged") {
    auto mcfg = tiny_model();
    mcfg.dropout = 0.0;
    Model model(mcfg, 6);
    auto cfg = tiny_train();
    cfg.augment = Augmentations{false, false, false};
    TrainState state(cfg.seed);
    const auto frame = tiny_frame();
    auto batch = sample_batch(frame, 32, 4, 3, state.data_rng);
    for (auto& s : batch) s.future = model.predict(s.window);
    const auto before = flatten(std::as_const(model).parameters());
    CHECK(train_step(model, batch, state, cfg) == 0.0);
    CHECK(flatten(std::as_const(model).parameters()) == before);
}

TEST_CASE("non-finite loss aborts the step") {
    Model model(tiny_model(), 6);
    auto cfg = tiny_train();
    TrainState state(cfg.seed);
    auto batch = sample_batch(tiny_frame(), 32, 4, 2, state.data_rng);
    batch[1].future(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const auto before = flatten(std::as_const(model).parameters());
    CHECK_THROWS_AS(train_step(model, batch, state, cfg), TrainingError);
    CHECK(flatten(std::as_const(model).parameters()) == before);
}

TEST_CASE("fit") {
    const auto frame = tiny_frame();
    const Model init(tiny_model(), 8);

    SUBCASE("same seed, same history") {
        const auto a = fit(init, frame, tiny_train());
        const auto b = fit(init, frame, tiny_train());
        REQUIRE(a.history.size() == b.history.size());
        for (std::size_t i = 0; i < a.history.size(); ++i) {
            CHECK(a.history[i].train_loss == b.history[i].train_loss);
            CHECK(a.history[i].val_mse == b.history[i].val_mse);
        }
        auto other = tiny_train();
        other.seed = 7;
        CHECK(fit(init, frame, other).history.front().train_loss != a.history.front().train_loss);
    }
    SUBCASE("best checkpoint carries the minimum validation loss") {
        const auto r = fit(init, frame, tiny_train());
        double best = std::numeric_limits<double>::infinity();
        for (const auto& h : r.history) best = std::min(best, h.val_mse);
        CHECK(r.best_val == best);
        EvalOptions opt;
        opt.stride = 4;
        CHECK(evaluate(r.best, frame, Split::val, opt).mse == best);
    }
    SUBCASE("frozen validation loss stops after patience evaluations") {
        auto cfg = tiny_train();
        cfg.max_steps = 1000;
        cfg.eval_interval = 2;
        FitHooks hooks;
        hooks.validate = [](const Model&) { return Metrics{1.0, 1.0, 1}; };
        const auto r = fit(init, frame, cfg, hooks);
        CHECK(r.early_stopped);
        CHECK(r.best_step == 2);
        CHECK(r.steps == 2 + cfg.patience * cfg.eval_interval);
        CHECK(r.history.size() == 1 + cfg.patience);
    }
    SUBCASE("strictly improving validation runs to max steps") {
        auto cfg = tiny_train();
        cfg.max_steps = 12;
        cfg.eval_interval = 2;
        cfg.patience = 1;
        double v = 10.0;
        FitHooks hooks;
        hooks.validate = [&v](const Model&) { return Metrics{v -= 1.0, 0.0, 1}; };
        const auto r = fit(init, frame, cfg, hooks);
        CHECK_FALSE(r.early_stopped);
        CHECK(r.steps == 12);
        CHECK(r.history.size() == 6);
        CHECK(r.best_step == 12);
    }
    SUBCASE("training slice too short") {
        auto f = frame;
        f.train_used = 35;
        CHECK_THROWS_AS(fit(init, f, tiny_train()), ExperimentError);
    }
}

TEST_CASE("evaluation metrics and windows") {
    SeriesFrame f;
    f.values = Tensor({2, 100});
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t t = 0; t < 100; ++t) f.values(c, t) = static_cast<double>(t * (c + 1));
    f.train_end = f.train_used = 70;
    f.val_end = 80;
    const std::size_t L = 10, P = 4;
    // Integer-valued ramps: the next steps follow from the last two values.
    auto continue_ramp = [&](double offset) {
        return [=](const Tensor& w) {
            Tensor out({w.rows(), P});
            for (std::size_t c = 0; c < w.rows(); ++c) {
                const double slope = w(c, L - 1) - w(c, L - 2);
                for (std::size_t j = 0; j < P; ++j)
                    out(c, j) = w(c, L - 1) + slope * static_cast<double>(j + 1) + offset;
            }
            return out;
        };
    };
    const auto perfect = evaluate_predictor(f, Split::test, L, P, continue_ramp(0.0));
    CHECK(perfect.mse == 0.0);
    CHECK(perfect.mae == 0.0);
    CHECK(perfect.windows == 100 - 80 - P + 1);

    const auto shifted = evaluate_predictor(f, Split::test, L, P, continue_ramp(0.5));
    CHECK(shifted.mse == 0.25);
    CHECK(shifted.mae == 0.5);

    const auto val = evaluate_predictor(f, Split::val, L, P, continue_ramp(-0.5));
    CHECK(val.windows == 80 - 70 - P + 1);
    CHECK(val.mse == 0.25);

    // Windows end before the forecast start and stay inside the series.
    std::size_t seen = 0;
    evaluate_predictor(f, Split::test, L, P, [&](const Tensor& w) {
        CHECK(w(0, L - 1) + P <= 99.0);
        CHECK(w(0, L - 1) >= 79.0);
        ++seen;
        return Tensor({2, P});
    });
    CHECK(seen == 17);

    EvalOptions opt;
    opt.stride = 5;
    CHECK(evaluate_predictor(f, Split::test, L, P, continue_ramp(0.5), opt).windows == 4);
    opt.stride = 1;
    opt.max_windows = 3;
    CHECK(evaluate_predictor(f, Split::test, L, P, continue_ramp(0.5), opt).windows == 3);

    EvalOptions masked;
    masked.mask_visible = 2;
    evaluate_predictor(f, Split::test, L, P, [&](const Tensor& w) {
        CHECK(w(0, 0) == 0.0);
        CHECK(w(0, L - 3) == 0.0);
        CHECK(w(0, L - 1) != 0.0);
        return Tensor({2, P});
    }, masked);

    SeriesFrame tiny = f;
    tiny.values = Tensor({2, 82});
    tiny.val_end = 80;
    CHECK_THROWS_AS(evaluate_predictor(tiny, Split::test, L, P, continue_ramp(0.0)), ExperimentError);
}
