#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ictsp/tensor.hpp"

namespace ictsp {

/// Per-channel standardization fitted on the train slice.
struct Scaler {
    std::vector<double> mean;
    std::vector<double> stddev;
};

/// A multivariate series, channels x steps, plus its split boundaries.
///
/// Steps [0, train_end) are the train slice, [train_end, val_end) validation
/// and [val_end, T) test. `train_used` is the leading part of the train slice
/// that training may sample from (less than train_end after few-shot
/// truncation).
struct SeriesFrame {
    Tensor values;  // [C x T]
    std::vector<std::string> names;
    std::size_t train_end = 0;
    std::size_t val_end = 0;
    std::size_t train_used = 0;
    std::optional<Scaler> scaler;

    std::size_t channels() const { return values.rows(); }
    std::size_t length() const { return values.cols(); }
    bool has_split() const { return val_end > 0; }
};

struct SplitSpec {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

struct MultiSpec {
    std::size_t length = 20000;
    std::vector<std::size_t> shifts = {96, 192, 336, 720};
    std::size_t combinations = 3;
    std::uint64_t seed = 2024;

    std::size_t channels() const { return 1 + shifts.size() + combinations; }
};

/// gen_multi output: the frame and the recorded mixing weights, one row per
/// combination channel over the 1 + shifts.size() base channels.
struct MultiSeries {
    SeriesFrame frame;
    Tensor coefficients;
};

SeriesFrame load_csv(const std::filesystem::path& path, bool has_date_column);
void write_csv(const SeriesFrame& frame, const std::filesystem::path& path);

SeriesFrame split_standardize(SeriesFrame frame, const SplitSpec& spec = {});
Tensor inverse_transform(const SeriesFrame& frame);

SeriesFrame gen_random_walk(std::size_t length, std::uint64_t seed);
MultiSeries gen_multi(const MultiSpec& spec);
SeriesFrame gen_channels_independent(std::size_t length, std::size_t channels, std::uint64_t seed, double phi = 0.9);

/// out[t] = master[t - shift] for t >= shift, master[0] before that.
std::vector<double> lag_series(std::span<const double> master, std::size_t shift);

/// Keep the first floor(fraction * train_end) steps of the train slice.
/// Throws ExperimentError when fewer than `min_length` steps would remain.
SeriesFrame few_shot_truncate(SeriesFrame frame, double fraction, std::size_t min_length);

/// Columns [start, start + len) of a [C x T] matrix.
Tensor slice_steps(const Tensor& values, std::size_t start, std::size_t len);
/// Rows `channels` of a [C x T] matrix, in the given order.
Tensor select_channels(const Tensor& values, const std::vector<std::size_t>& channels);

}  // namespace ictsp
