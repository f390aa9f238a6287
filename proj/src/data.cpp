#include "ictsp/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "ictsp/autograd.hpp"
#include "ictsp/errors.hpp"

namespace ictsp {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' || s.front() == '\n'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
        s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            cells.push_back(trim(line.substr(start)));
            break;
        }
        cells.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return cells;
}

}  // namespace

SeriesFrame load_csv(const std::filesystem::path& path, bool has_date_column) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open " + path.string());

    std::string line;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        for (auto cell : split_commas(line)) header.emplace_back(cell);
        break;
    }
    if (header.empty()) throw IngestError(path.string() + ": empty file");
    const std::size_t skip = has_date_column ? 1 : 0;
    if (header.size() <= skip) throw IngestError(path.string() + ": no value columns in header");

    SeriesFrame frame;
    frame.names.assign(header.begin() + static_cast<std::ptrdiff_t>(skip), header.end());
    const std::size_t channels = frame.names.size();

    std::vector<std::vector<double>> columns(channels);
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        const auto cells = split_commas(line);
        if (cells.size() != header.size()) {
            throw IngestError(path.string() + ": row " + std::to_string(row) + " has " +
                              std::to_string(cells.size()) + " cells, expected " + std::to_string(header.size()));
        }
        for (std::size_t c = 0; c < channels; ++c) {
            const auto cell = cells[c + skip];
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v)) {
                throw IngestError(path.string() + ": non-numeric cell '" + std::string(cell) + "' at row " +
                                  std::to_string(row) + ", column " + std::to_string(c + skip + 1));
            }
            columns[c].push_back(v);
        }
    }
    if (row == 0) throw IngestError(path.string() + ": empty file (header only)");

    frame.values = Tensor({channels, row});
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < row; ++t) frame.values(c, t) = columns[c][t];
    return frame;
}

void write_csv(const SeriesFrame& frame, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IngestError("cannot write " + path.string());
    out.precision(17);
    for (std::size_t c = 0; c < frame.channels(); ++c) {
        if (c) out << ',';
        out << (c < frame.names.size() ? frame.names[c] : "ch" + std::to_string(c));
    }
    out << '\n';
    for (std::size_t t = 0; t < frame.length(); ++t) {
        for (std::size_t c = 0; c < frame.channels(); ++c) {
            if (c) out << ',';
            out << frame.values(c, t);
        }
        out << '\n';
    }
    if (!out) throw IngestError("write failed for " + path.string());
}

SeriesFrame split_standardize(SeriesFrame frame, const SplitSpec& spec) {
    if (spec.train <= 0 || spec.val <= 0 || spec.test <= 0 ||
        std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
        throw ConfigError("split fractions must be positive and sum to 1");
    }
    const std::size_t T = frame.length();
    const auto train_end = static_cast<std::size_t>(std::floor(static_cast<double>(T) * spec.train + 1e-9));
    const auto test_len = static_cast<std::size_t>(std::floor(static_cast<double>(T) * spec.test + 1e-9));
    const std::size_t val_end = T - test_len;
    if (train_end == 0 || val_end <= train_end || val_end >= T) {
        throw ConfigError("series of length " + std::to_string(T) + " too short for a non-empty 3-way split");
    }
    frame.train_end = train_end;
    frame.val_end = val_end;
    frame.train_used = train_end;

    Scaler scaler;
    const std::size_t C = frame.channels();
    for (std::size_t c = 0; c < C; ++c) {
        double mean = 0.0;
        for (std::size_t t = 0; t < train_end; ++t) mean += frame.values(c, t);
        mean /= static_cast<double>(train_end);
        double var = 0.0;
        for (std::size_t t = 0; t < train_end; ++t) {
            const double d = frame.values(c, t) - mean;
            var += d * d;
        }
        var /= static_cast<double>(train_end);
        double sd = std::sqrt(var);
        if (sd <= 1e-12) {
            std::cerr << "warning: channel " << c << " is constant on the train slice; std clamped to 1\n";
            sd = 1.0;
        }
        scaler.mean.push_back(mean);
        scaler.stddev.push_back(sd);
        for (std::size_t t = 0; t < T; ++t) frame.values(c, t) = (frame.values(c, t) - mean) / sd;
    }
    frame.scaler = std::move(scaler);
    return frame;
}

Tensor inverse_transform(const SeriesFrame& frame) {
    Tensor out = frame.values;
    if (!frame.scaler) return out;
    for (std::size_t c = 0; c < out.rows(); ++c)
        for (std::size_t t = 0; t < out.cols(); ++t)
            out(c, t) = out(c, t) * frame.scaler->stddev[c] + frame.scaler->mean[c];
    return out;
}

SeriesFrame gen_random_walk(std::size_t length, std::uint64_t seed) {
    if (length == 0) throw ConfigError("random walk length must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    SeriesFrame frame;
    frame.values = Tensor({1, length});
    for (std::size_t t = 1; t < length; ++t) frame.values(0, t) = frame.values(0, t - 1) + noise(rng);
    frame.names = {"walk"};
    return frame;
}

std::vector<double> lag_series(std::span<const double> master, std::size_t shift) {
    std::vector<double> out(master.size());
    for (std::size_t t = 0; t < master.size(); ++t) out[t] = t >= shift ? master[t - shift] : master[0];
    return out;
}

MultiSeries gen_multi(const MultiSpec& spec) {
    const std::size_t T = spec.length;
    for (auto s : spec.shifts) {
        if (s >= T) throw ConfigError("shift " + std::to_string(s) + " must be smaller than length " + std::to_string(T));
    }
    const SeriesFrame master = gen_random_walk(T, spec.seed);
    const std::size_t base = 1 + spec.shifts.size();
    const std::size_t C = spec.channels();

    MultiSeries out;
    out.frame.values = Tensor({C, T});
    out.frame.names.push_back("master");
    for (std::size_t t = 0; t < T; ++t) out.frame.values(0, t) = master.values(0, t);
    for (std::size_t i = 0; i < spec.shifts.size(); ++i) {
        const std::size_t s = spec.shifts[i];
        out.frame.names.push_back("lag" + std::to_string(s));
        const auto lagged = lag_series(master.values.row(0), s);
        std::copy(lagged.begin(), lagged.end(), out.frame.values.row(1 + i).begin());
    }

    if (spec.combinations > 0) {
        std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
        out.coefficients = Tensor({spec.combinations, base});
        for (auto& w : out.coefficients.values()) w = 2.0 * uniform01(rng) - 1.0;
        for (std::size_t k = 0; k < spec.combinations; ++k) {
            const std::size_t row = base + k;
            out.frame.names.push_back("mix" + std::to_string(k));
            for (std::size_t t = 0; t < T; ++t) {
                double v = 0.0;
                for (std::size_t b = 0; b < base; ++b) v += out.coefficients(k, b) * out.frame.values(b, t);
                out.frame.values(row, t) = v;
            }
        }
    }
    return out;
}

SeriesFrame gen_channels_independent(std::size_t length, std::size_t channels, std::uint64_t seed, double phi) {
    if (length == 0 || channels == 0) throw ConfigError("independent series need length, channels >= 1");
    SeriesFrame frame;
    frame.values = Tensor({channels, length});
    for (std::size_t c = 0; c < channels; ++c) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(c)};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> noise(0.0, 1.0);
        double state = 0.0;
        for (std::size_t t = 0; t < length; ++t) {
            state = phi * state + noise(rng);
            frame.values(c, t) = state + noise(rng);
        }
        frame.names.push_back("ar" + std::to_string(c));
    }
    return frame;
}

SeriesFrame few_shot_truncate(SeriesFrame frame, double fraction, std::size_t min_length) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("few-shot fraction must be in (0, 1]");
    if (!frame.has_split()) throw ConfigError("few-shot truncation needs a split frame");
    const auto kept = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(frame.train_end) + 1e-9));
    if (kept < min_length) {
        std::ostringstream os;
        os << "lacking data to build the training set: " << kept << " train steps after keeping "
           << fraction * 100.0 << "%, need at least " << min_length;
        throw ExperimentError(os.str());
    }
    frame.train_used = kept;
    return frame;
}

Tensor slice_steps(const Tensor& values, std::size_t start, std::size_t len) {
    if (start + len > values.cols() || len == 0) throw ShapeError("slice_steps: range out of bounds");
    Tensor out({values.rows(), len});
    for (std::size_t c = 0; c < values.rows(); ++c)
        for (std::size_t t = 0; t < len; ++t) out(c, t) = values(c, start + t);
    return out;
}

Tensor select_channels(const Tensor& values, const std::vector<std::size_t>& channels) {
    if (channels.empty()) throw ShapeError("select_channels: empty selection");
    Tensor out({channels.size(), values.cols()});
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (channels[i] >= values.rows()) throw ShapeError("select_channels: channel out of range");
        auto src = values.row(channels[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace ictsp
