#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ictsp/data.hpp"
#include "ictsp/model.hpp"
#include "ictsp/training.hpp"

namespace ictsp {

/// Where a run's series come from: a synthetic generator or a CSV file.
struct DataSource {
    std::string kind = "multi";  // multi | noise | csv
    std::filesystem::path path;  // csv only
    bool has_date = true;        // csv only
    MultiSpec multi{20000, {24, 48, 96}, 4, 2024};
    std::size_t length = 20000;  // noise only
    std::size_t channels = 8;    // noise only
    double phi = 0.9;            // noise only
    std::uint64_t seed = 2024;   // noise only

    std::string label() const;
};

/// Raw (unsplit, unstandardized) frame for a source.
SeriesFrame load_source(const DataSource& source);

enum class Protocol { full, few10, few5, zeroshot };

const char* to_string(Protocol p);
Protocol parse_protocol(const std::string& name);

struct RunSpec {
    std::string name = "run";
    DataSource data;
    std::optional<DataSource> transfer;  // zero-shot evaluation data
    ModelConfig model;
    TrainConfig train;  // train.seed also seeds the model initialization
    Protocol protocol = Protocol::full;
    std::vector<std::size_t> horizons;  // empty = model.horizon
    std::size_t test_stride = 1;
    std::size_t test_max_windows = 0;
    std::optional<std::size_t> mask_visible;  // zero-fill older test inputs
    std::filesystem::path out;                // empty = write nothing
    bool save_checkpoints = true;
};

/// Named desk-scale and paper-scale specs: multi-small, noise-small,
/// paper-scale, warmup-fig9.
RunSpec preset(const std::string& name);
std::vector<std::string> preset_names();

nlohmann::json to_json(const DataSource& source);
DataSource data_source_from_json(const nlohmann::json& j, DataSource base = {});
nlohmann::json to_json(const RunSpec& spec);
/// Partial documents override `base`; unknown keys are rejected.
RunSpec run_spec_from_json(const nlohmann::json& j, RunSpec base = {});
RunSpec load_run_spec(const std::filesystem::path& path, RunSpec base = {});

/// Ablation settings.
enum class Ablation { full, no_context, no_tr, m1, m64, m256 };

const char* to_string(Ablation a);
Ablation parse_ablation(const std::string& name);
std::vector<Ablation> all_ablations();
ModelConfig apply_ablation(ModelConfig cfg, Ablation a);

struct RunResult {
    std::string name;
    std::string dataset;
    std::string setting = "full";
    Variant variant = Variant::ictsp;
    Protocol protocol = Protocol::full;
    std::size_t horizon = 0;
    std::size_t channels = 0;
    Metrics test;
    std::size_t parameters = 0;
    std::size_t context_pre = 0;   // context tokens per window before retrieval
    std::size_t context_post = 0;  // ... entering the TF stack
    std::size_t steps = 0;
    std::size_t best_step = 0;
    bool early_stopped = false;
    double wall_seconds = 0.0;
    std::vector<HistoryRow> history;
    nlohmann::json config;  // fully resolved spec for this row
};

nlohmann::json to_json(const RunResult& r);

struct RunHooks {
    std::function<void(const RunSpec&, const HistoryRow&)> on_eval;
};

/// One trained cell: the resolved spec, its split frame(s), the best model
/// and the result row.
struct TrainedRun {
    RunSpec spec;
    SeriesFrame frame;       // training data after split and truncation
    SeriesFrame eval_frame;  // frame the test metrics were computed on
    Model model;
    RunResult result;
};

/// Train and test a single horizon (spec.model.horizon).
TrainedRun train_cell(RunSpec spec, const RunHooks& hooks = {});

/// load -> split/standardize -> few-shot truncation -> fit -> test, once per
/// horizon. Writes results.csv/json, histories and checkpoints under spec.out.
std::vector<RunResult> run_experiment(const RunSpec& spec, const RunHooks& hooks = {});

/// Same seed for every setting so cells share data order and initialization
/// wherever their parameter shapes agree.
std::vector<RunResult> run_ablation(const RunSpec& spec, const std::vector<Ablation>& settings,
                                    const RunHooks& hooks = {});

/// One row per variant and dataset, the test-loss curves and the forecast of
/// the first test window for the first three channels.
struct ComparisonResult {
    std::vector<RunResult> rows;
    struct Forecast {
        std::string dataset;
        Variant variant = Variant::ictsp;
        std::size_t channel = 0;
        std::vector<double> history;  // last L_I inputs
        std::vector<double> truth;
        std::vector<double> forecast;
    };
    std::vector<Forecast> forecasts;
};

ComparisonResult run_architecture_comparison(const std::vector<RunSpec>& datasets,
                                             const std::vector<Variant>& variants, const RunHooks& hooks = {});

void write_results(const std::vector<RunResult>& rows, const std::filesystem::path& dir);
/// Wide table: dataset, L_P, then <setting>_mse, <setting>_mae per setting.
void write_ablation_table(const std::vector<RunResult>& rows, const std::filesystem::path& path);
void write_comparison(const ComparisonResult& result, const std::filesystem::path& dir);

}  // namespace ictsp
