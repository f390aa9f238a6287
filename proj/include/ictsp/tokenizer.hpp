#pragma once

#include <filesystem>
#include <vector>

#include "ictsp/tensor.hpp"

namespace ictsp {

enum class TokenKind { context, target, merged };

const char* to_string(TokenKind kind);

struct TokenMeta {
    std::size_t series = 0;        // 0-based channel index within the window
    std::size_t window_start = 0;  // first step of the token's span inside X_I (context only)
    std::size_t recency = 0;       // 0 = target, 1 = newest context example, 2 = next older, ...
    TokenKind kind = TokenKind::context;
    double offset = 0.0;           // value subtracted by rationalize_tokens
};

struct TokenDims {
    std::size_t lookback = 0;  // L_b
    std::size_t horizon = 0;   // L_P
    std::size_t channels = 0;  // C
    std::size_t step = 1;      // m
};

/// Forecasting-task tokens, one row per token of width L_b + L_P.
///
/// Layout from build_tokens: every context token (series-major, oldest
/// first within a series) followed by one target token per series.
struct TokenMatrix {
    Tensor tokens;
    std::vector<TokenMeta> meta;
    TokenDims dims;
    bool rationalized = false;

    std::size_t size() const { return meta.size(); }
    std::size_t width() const { return dims.lookback + dims.horizon; }
    std::size_t count(TokenKind kind) const;
    std::vector<std::size_t> indices(TokenKind kind) const;
};

/// Number of context windows per series for N = L_I - L_b - L_P candidate
/// examples, stride m and sampling shift r: the start offsets N - r, N - r - m,
/// ... that stay >= 1.
std::size_t context_per_series(std::size_t n_examples, std::size_t step, std::size_t shift = 0);

/// Build the task tokens for a [C x L_I] window.
TokenMatrix build_tokens(const Tensor& window, std::size_t lookback, std::size_t horizon, std::size_t step,
                         std::size_t shift = 0);

/// Subtract each token's last lookback value. Target placeholders stay zero.
TokenMatrix rationalize_tokens(TokenMatrix tm);
TokenMatrix derationalize_tokens(TokenMatrix tm);

/// Zero every step older than the newest `visible` steps of a [C x L_I] window.
Tensor mask_history(const Tensor& window, std::size_t visible);

struct TokenCounts {
    std::size_t pre_retrieval = 0;
    std::size_t post_retrieval = 0;
};

TokenCounts count_context_tokens(std::size_t input_len, std::size_t lookback, std::size_t horizon, std::size_t step,
                                 std::size_t channels, double keep_fraction, std::size_t merged,
                                 std::size_t shift = 0);

/// One token per row: series, window_start, recency, kind, offset, then values.
void write_tokens_csv(const TokenMatrix& tm, const std::filesystem::path& path);

}  // namespace ictsp
