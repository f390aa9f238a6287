#include "ictsp/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ictsp/errors.hpp"
#include "ictsp/retrieval.hpp"

namespace ictsp {

const char* to_string(TokenKind kind) {
    switch (kind) {
        case TokenKind::context: return "context";
        case TokenKind::target: return "target";
        case TokenKind::merged: return "merged";
    }
    return "?";
}

std::size_t TokenMatrix::count(TokenKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(meta.begin(), meta.end(), [kind](const TokenMeta& m) { return m.kind == kind; }));
}

std::vector<std::size_t> TokenMatrix::indices(TokenKind kind) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < meta.size(); ++i)
        if (meta[i].kind == kind) out.push_back(i);
    return out;
}

std::size_t context_per_series(std::size_t n_examples, std::size_t step, std::size_t shift) {
    if (step == 0) throw ConfigError("sampling step m must be >= 1");
    if (n_examples < shift + 1) return 0;
    return (n_examples - shift - 1) / step + 1;
}

TokenMatrix build_tokens(const Tensor& window, std::size_t lookback, std::size_t horizon, std::size_t step,
                         std::size_t shift) {
    const std::size_t C = window.rows();
    const std::size_t L = window.cols();
    if (lookback == 0 || horizon == 0) throw ConfigError("lookback and horizon must be >= 1");
    if (lookback + horizon > L) {
        throw ConfigError("L_b + L_P = " + std::to_string(lookback + horizon) + " exceeds L_I = " + std::to_string(L));
    }
    if (step == 0) throw ConfigError("sampling step m must be >= 1");
    if (shift >= step) throw ConfigError("sampling shift r must be in [0, m)");

    const std::size_t width = lookback + horizon;
    const std::size_t n_examples = L - width;
    const std::size_t per_series = context_per_series(n_examples, step, shift);
    const std::size_t n_tokens = C * (per_series + 1);

    TokenMatrix tm;
    tm.dims = {lookback, horizon, C, step};
    tm.tokens = Tensor({n_tokens, width});
    tm.meta.reserve(n_tokens);

    std::size_t row = 0;
    for (std::size_t c = 0; c < C; ++c) {
        auto src = window.row(c);
        // Oldest first: recency rank per_series down to 1.
        for (std::size_t k = per_series; k-- > 0;) {
            const std::size_t start = n_examples - shift - k * step;
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(start), width, tm.tokens.row(row).begin());
            tm.meta.push_back({c, start, k + 1, TokenKind::context, 0.0});
            ++row;
        }
    }
    for (std::size_t c = 0; c < C; ++c) {
        auto src = window.row(c);
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(L - lookback), lookback, tm.tokens.row(row).begin());
        tm.meta.push_back({c, L - lookback, 0, TokenKind::target, 0.0});
        ++row;
    }
    return tm;
}

TokenMatrix rationalize_tokens(TokenMatrix tm) {
    if (tm.rationalized) return tm;
    const std::size_t lb = tm.dims.lookback;
    for (std::size_t i = 0; i < tm.size(); ++i) {
        auto r = tm.tokens.row(i);
        const double offset = r[lb - 1];
        const std::size_t span = tm.meta[i].kind == TokenKind::target ? lb : r.size();
        for (std::size_t j = 0; j < span; ++j) r[j] -= offset;
        tm.meta[i].offset = offset;
    }
    tm.rationalized = true;
    return tm;
}

TokenMatrix derationalize_tokens(TokenMatrix tm) {
    if (!tm.rationalized) return tm;
    const std::size_t lb = tm.dims.lookback;
    for (std::size_t i = 0; i < tm.size(); ++i) {
        auto r = tm.tokens.row(i);
        const double offset = tm.meta[i].offset;
        const std::size_t span = tm.meta[i].kind == TokenKind::target ? lb : r.size();
        for (std::size_t j = 0; j < span; ++j) r[j] += offset;
        tm.meta[i].offset = 0.0;
    }
    tm.rationalized = false;
    return tm;
}

Tensor mask_history(const Tensor& window, std::size_t visible) {
    const std::size_t L = window.cols();
    if (visible == 0 || visible > L) throw ConfigError("mask_history: visible must be in [1, L_I]");
    Tensor out = window;
    for (std::size_t c = 0; c < out.rows(); ++c) {
        auto r = out.row(c);
        std::fill_n(r.begin(), L - visible, 0.0);
    }
    return out;
}

TokenCounts count_context_tokens(std::size_t input_len, std::size_t lookback, std::size_t horizon, std::size_t step,
                                 std::size_t channels, double keep_fraction, std::size_t merged, std::size_t shift) {
    if (lookback + horizon > input_len) throw ConfigError("L_b + L_P exceeds L_I");
    const std::size_t per_series = context_per_series(input_len - lookback - horizon, step, shift);
    TokenCounts counts;
    counts.pre_retrieval = per_series * channels;
    RetrievalConfig cfg;
    cfg.keep_fraction = keep_fraction;
    cfg.merged = merged;
    counts.post_retrieval = retrieval_count(cfg, per_series, channels);
    return counts;
}

void write_tokens_csv(const TokenMatrix& tm, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IngestError("cannot write " + path.string());
    out.precision(17);
    out << "series,window_start,recency,kind,offset";
    for (std::size_t j = 0; j < tm.width(); ++j) out << ",v" << j;
    out << '\n';
    for (std::size_t i = 0; i < tm.size(); ++i) {
        const auto& m = tm.meta[i];
        out << m.series << ',' << m.window_start << ',' << m.recency << ',' << to_string(m.kind) << ',' << m.offset;
        for (double v : tm.tokens.row(i)) out << ',' << v;
        out << '\n';
    }
}

}  // namespace ictsp
