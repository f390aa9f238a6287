#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ictsp/data.hpp"
#include "ictsp/model.hpp"
#include "ictsp/optim.hpp"

namespace ictsp {

struct Augmentations {
    bool shift = true;           // random tokenizer shift r per sample
    bool shuffle_series = true;  // permute channels and draw series ids from the C_max pool
    bool subset_series = false;  // keep a random non-empty channel subset
};

struct TrainConfig {
    double lr_peak = 5e-4;
    std::size_t lr_warmup = 1000;
    std::size_t max_steps = 100000;  // end of the linear decay
    std::size_t batch_size = 32;
    std::size_t eval_interval = 200;
    std::size_t patience = 30;       // in evaluations
    std::uint64_t seed = 2024;
    std::size_t linear_warmup = 0;   // W: steps that train only the projections
    Augmentations augment;
    std::size_t eval_stride = 1;       // window stride while monitoring validation
    std::size_t eval_max_windows = 0;  // 0 = every window
    bool record_test = false;          // also log test metrics at each evaluation (loss curves)

    void validate() const;
};

/// Linear 0 -> peak over lr_warmup steps, then linear peak -> 0 at max_steps.
double lr_at_step(std::size_t step, const TrainConfig& cfg);

/// One supervised example: a [C x L_I] input window and its [C x L_P] future.
struct Sample {
    Tensor window;
    Tensor future;
};

struct AugmentedSample {
    Tensor window;
    Tensor future;
    std::size_t shift = 0;
    std::vector<std::size_t> series_ids;  // empty = 0..C-1
};

/// Apply the enabled augmentations. Shifts are drawn from
/// {0 .. min(m, N) - 1} so at least one context window survives; series
/// operations are skipped for the temporal-wise variant, whose channel layout
/// is fixed.
std::vector<AugmentedSample> augment_batch(std::span<const Sample> batch, const ModelConfig& model,
                                           const Augmentations& aug, std::mt19937_64& rng);

struct TrainState {
    std::size_t step = 0;
    AdamState adam;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t evals_since_best = 0;
    std::mt19937_64 data_rng;
    std::mt19937_64 dropout_rng;
    std::mt19937_64 augment_rng;

    explicit TrainState(std::uint64_t seed = 2024);
};

/// Uniform random windows from the first train_used steps of a split frame.
std::vector<Sample> sample_batch(const SeriesFrame& frame, std::size_t input_len, std::size_t horizon,
                                 std::size_t batch_size, std::mt19937_64& rng);

/// One optimizer step on the batch MSE. During linear warm-up
/// (state.step < W) the TF stack is bypassed and only W_in, b_in, W_out,
/// b_out are updated. Returns the batch loss.
double train_step(Model& model, std::span<const Sample> batch, TrainState& state, const TrainConfig& cfg);

enum class Split { val, test };

const char* to_string(Split s);

struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
    std::size_t windows = 0;
};

using Predictor = std::function<Tensor(const Tensor& window)>;

struct EvalOptions {
    std::size_t stride = 1;
    std::size_t max_windows = 0;              // 0 = all; otherwise evenly spaced subset
    std::optional<std::size_t> mask_visible;  // keep only the newest steps of each window
};

/// Future starts f in [split begin, split end - L_P] (and f >= L_I), window
/// [f - L_I, f). Errors are averaged over windows, channels and steps on the
/// frame's (standardized) scale.
Metrics evaluate_predictor(const SeriesFrame& frame, Split split, std::size_t input_len, std::size_t horizon,
                           const Predictor& predict, const EvalOptions& opt = {});
Metrics evaluate(const Model& model, const SeriesFrame& frame, Split split, const EvalOptions& opt = {});

struct HistoryRow {
    std::size_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;  // mean batch loss since the previous evaluation
    double val_mse = 0.0;
    double val_mae = 0.0;
    double test_mse = std::numeric_limits<double>::quiet_NaN();
    double test_mae = std::numeric_limits<double>::quiet_NaN();
};

struct FitHooks {
    std::function<Metrics(const Model&)> validate;  // replaces the validation pass (tests)
    std::function<void(const HistoryRow&)> on_eval;
};

struct FitResult {
    Model best;
    std::vector<HistoryRow> history;
    std::size_t best_step = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t steps = 0;
    bool early_stopped = false;
};

/// Train from the given initial model. Validation runs every eval_interval
/// steps and after the final step; training stops after `patience`
/// evaluations without a strict improvement or at max_steps.
FitResult fit(const Model& init, const SeriesFrame& frame, const TrainConfig& cfg, const FitHooks& hooks = {});

void write_history_csv(const std::vector<HistoryRow>& history, const std::filesystem::path& path);

}  // namespace ictsp
