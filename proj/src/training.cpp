#include "ictsp/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ictsp/errors.hpp"

namespace ictsp {

void TrainConfig::validate() const {
    if (!(lr_peak > 0.0) || !std::isfinite(lr_peak)) throw ConfigError("lr_peak must be positive");
    if (max_steps == 0) throw ConfigError("max_steps must be >= 1");
    if (lr_warmup >= max_steps) throw ConfigError("lr_warmup must be smaller than max_steps");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (eval_interval == 0) throw ConfigError("eval_interval must be >= 1");
    if (patience == 0) throw ConfigError("patience must be >= 1");
    if (eval_stride == 0) throw ConfigError("eval_stride must be >= 1");
}

double lr_at_step(std::size_t step, const TrainConfig& cfg) {
    const auto s = static_cast<double>(step);
    if (step < cfg.lr_warmup) return cfg.lr_peak * s / static_cast<double>(cfg.lr_warmup);
    if (step >= cfg.max_steps) return 0.0;
    const double span = static_cast<double>(cfg.max_steps - cfg.lr_warmup);
    return std::max(0.0, cfg.lr_peak * static_cast<double>(cfg.max_steps - step) / span);
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), id};
    return std::mt19937_64(seq);
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

}  // namespace

TrainState::TrainState(std::uint64_t seed)
    : data_rng(stream(seed, 1)), dropout_rng(stream(seed, 2)), augment_rng(stream(seed, 3)) {}

std::vector<AugmentedSample> augment_batch(std::span<const Sample> batch, const ModelConfig& model,
                                           const Augmentations& aug, std::mt19937_64& rng) {
    std::vector<AugmentedSample> out;
    out.reserve(batch.size());
    const bool ictsp = model.variant == Variant::ictsp;
    const bool channel_ops = model.variant != Variant::temporal_wise;
    std::size_t shift_range = 1;
    if (ictsp && model.use_context && model.input_len >= model.lookback + model.horizon + 1) {
        const std::size_t N = model.input_len - model.lookback - model.horizon;
        shift_range = std::min(model.sample_step, N);
    }
    for (const auto& s : batch) {
        AugmentedSample a;
        const std::size_t C = s.window.rows();
        if (aug.shift && shift_range > 1) a.shift = uniform_index(rng, shift_range);

        std::vector<std::size_t> order(C);
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (channel_ops && aug.shuffle_series) std::shuffle(order.begin(), order.end(), rng);
        if (channel_ops && aug.subset_series) order.resize(1 + uniform_index(rng, C));
        if (channel_ops && aug.shuffle_series) {
            if (C > model.max_series) {
                throw CapacityError("batch has " + std::to_string(C) + " series but the embedding pool holds " +
                                    std::to_string(model.max_series));
            }
            std::vector<std::size_t> pool(model.max_series);
            std::iota(pool.begin(), pool.end(), std::size_t{0});
            for (std::size_t i = 0; i < order.size(); ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
            a.series_ids.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(order.size()));
        }
        a.window = select_channels(s.window, order);
        a.future = select_channels(s.future, order);
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<Sample> sample_batch(const SeriesFrame& frame, std::size_t input_len, std::size_t horizon,
                                 std::size_t batch_size, std::mt19937_64& rng) {
    const std::size_t used = frame.has_split() ? frame.train_used : frame.length();
    if (used < input_len + horizon) {
        throw ExperimentError("training slice has " + std::to_string(used) + " steps, need at least L_I + L_P = " +
                              std::to_string(input_len + horizon));
    }
    const std::size_t starts = used - input_len - horizon + 1;
    std::vector<Sample> batch;
    batch.reserve(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        const std::size_t s = uniform_index(rng, starts);
        batch.push_back({slice_steps(frame.values, s, input_len), slice_steps(frame.values, s + input_len, horizon)});
    }
    return batch;
}

double train_step(Model& model, std::span<const Sample> batch, TrainState& state, const TrainConfig& cfg) {
    if (batch.empty()) throw TrainingError("train_step: empty batch");
    const bool warm = state.step < cfg.linear_warmup;
    const auto samples = augment_batch(batch, model.config(), cfg.augment, state.augment_rng);

    Tape tape;
    std::vector<Var> losses;
    losses.reserve(samples.size());
    for (const auto& s : samples) {
        ForwardOptions opt;
        opt.training = true;
        opt.rng = &state.dropout_rng;
        opt.sample_shift = s.shift;
        opt.series_ids = s.series_ids;
        opt.linear_only = warm;
        const auto res = model.forward(tape, s.window, opt);
        Var l = mse(res.forecast, s.future);
        if (res.aux_loss.valid()) l = add(l, res.aux_loss);
        losses.push_back(l);
    }
    Var loss = scale(sum(concat_rows(losses)), 1.0 / static_cast<double>(losses.size()));
    const double value = loss.value()[0];
    if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "non-finite training loss " << value << " at step " << state.step << " (lr "
           << lr_at_step(state.step + 1, cfg) << ")";
        throw TrainingError(os.str());
    }

    auto all = model.parameters();
    for (Parameter* p : all) p->zero_grad();
    tape.backward(loss);
    const auto params = warm ? model.projection_parameters() : all;
    adam_step(state.adam, params, lr_at_step(state.step + 1, cfg));
    ++state.step;
    return value;
}

const char* to_string(Split s) { return s == Split::val ? "val" : "test"; }

Metrics evaluate_predictor(const SeriesFrame& frame, Split split, std::size_t input_len, std::size_t horizon,
                           const Predictor& predict, const EvalOptions& opt) {
    if (!frame.has_split()) throw ExperimentError("evaluate needs a split frame");
    if (opt.stride == 0) throw ConfigError("evaluation stride must be >= 1");
    const std::size_t begin = std::max(split == Split::val ? frame.train_end : frame.val_end, input_len);
    const std::size_t end = split == Split::val ? frame.val_end : frame.length();
    if (end < horizon || begin > end - horizon) {
        throw ExperimentError(std::string("no complete (L_I, L_P) window in the ") + to_string(split) + " split");
    }
    std::vector<std::size_t> starts;
    for (std::size_t f = begin; f + horizon <= end; f += opt.stride) starts.push_back(f);
    if (opt.max_windows > 0 && starts.size() > opt.max_windows) {
        std::vector<std::size_t> picked;
        for (std::size_t i = 0; i < opt.max_windows; ++i)
            picked.push_back(starts[i * (starts.size() - 1) / std::max<std::size_t>(1, opt.max_windows - 1)]);
        if (opt.max_windows == 1) picked = {starts.front()};
        starts = std::move(picked);
    }

    double se = 0.0, ae = 0.0;
    const std::size_t C = frame.channels();
    for (auto f : starts) {
        Tensor window = slice_steps(frame.values, f - input_len, input_len);
        if (opt.mask_visible) window = mask_history(window, *opt.mask_visible);
        const Tensor pred = predict(window);
        if (pred.rows() != C || pred.cols() != horizon)
            throw ShapeError("predictor returned " + shape_str(pred.shape()) + " for a " + std::to_string(C) + "-channel window");
        double wse = 0.0, wae = 0.0;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t j = 0; j < horizon; ++j) {
                const double e = pred(c, j) - frame.values(c, f + j);
                wse += e * e;
                wae += std::abs(e);
            }
        se += wse;
        ae += wae;
    }
    const double n = static_cast<double>(starts.size() * C * horizon);
    return {se / n, ae / n, starts.size()};
}

Metrics evaluate(const Model& model, const SeriesFrame& frame, Split split, const EvalOptions& opt) {
    const auto& cfg = model.config();
    return evaluate_predictor(frame, split, cfg.input_len, cfg.horizon,
                              [&model](const Tensor& w) { return model.predict(w); }, opt);
}

FitResult fit(const Model& init, const SeriesFrame& frame, const TrainConfig& cfg, const FitHooks& hooks) {
    cfg.validate();
    if (!frame.has_split()) throw ExperimentError("fit needs a split frame");
    const auto& mc = init.config();
    if (frame.train_used < mc.input_len + mc.horizon) {
        throw ExperimentError("training slice has " + std::to_string(frame.train_used) +
                              " steps, need at least L_I + L_P = " + std::to_string(mc.input_len + mc.horizon));
    }

    FitResult result;
    result.best = init;
    Model model = init;
    TrainState state(cfg.seed);
    EvalOptions eval_opt;
    eval_opt.stride = cfg.eval_stride;
    eval_opt.max_windows = cfg.eval_max_windows;

    double running = 0.0;
    std::size_t since_eval = 0;
    while (state.step < cfg.max_steps) {
        const auto batch = sample_batch(frame, mc.input_len, mc.horizon, cfg.batch_size, state.data_rng);
        running += train_step(model, batch, state, cfg);
        ++since_eval;
        if (state.step % cfg.eval_interval != 0 && state.step != cfg.max_steps) continue;

        HistoryRow row;
        row.step = state.step;
        row.lr = lr_at_step(state.step, cfg);
        row.train_loss = running / static_cast<double>(since_eval);
        const Metrics val = hooks.validate ? hooks.validate(model) : evaluate(model, frame, Split::val, eval_opt);
        row.val_mse = val.mse;
        row.val_mae = val.mae;
        if (cfg.record_test) {
            const Metrics test = evaluate(model, frame, Split::test, eval_opt);
            row.test_mse = test.mse;
            row.test_mae = test.mae;
        }
        result.history.push_back(row);
        if (hooks.on_eval) hooks.on_eval(row);
        running = 0.0;
        since_eval = 0;

        if (val.mse < state.best_val) {
            state.best_val = val.mse;
            state.evals_since_best = 0;
            result.best = model;
            result.best_step = state.step;
        } else if (++state.evals_since_best >= cfg.patience) {
            result.early_stopped = true;
            break;
        }
    }
    result.best_val = state.best_val;
    result.steps = state.step;
    return result;
}

void write_history_csv(const std::vector<HistoryRow>& history, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out.precision(10);
    out << "step,lr,train_loss,val_mse,val_mae,test_mse,test_mae\n";
    for (const auto& r : history) {
        out << r.step << ',' << r.lr << ',' << r.train_loss << ',' << r.val_mse << ',' << r.val_mae << ',';
        if (std::isnan(r.test_mse)) out << ",";
        else out << r.test_mse << ',' << r.test_mae;
        out << '\n';
    }
    if (!out) throw Error("write failed for " + path.string());
}

}  // namespace ictsp
