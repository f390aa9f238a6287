#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "ictsp/autograd.hpp"
#include "ictsp/tokenizer.hpp"

namespace ictsp {

struct RetrievalConfig {
    std::size_t latent_dim = 16;  // delta
    double keep_fraction = 0.10;  // q
    std::size_t merged = 30;      // r
    bool enabled = true;
};

void validate(const RetrievalConfig& cfg);

/// Which context tokens survive retrieval and how the rest are grouped.
/// Indices refer to positions among the context tokens of the input matrix.
struct RetrievalPlan {
    std::vector<double> scores;               // average cosine similarity per context token
    std::vector<std::size_t> ranking;         // context positions, best first
    std::vector<std::size_t> kept;            // ascending context positions
    std::vector<std::vector<std::size_t>> groups;  // rank-ordered merge groups
};

/// floor(q * per_series) * C kept plus min(r, remaining) merged tokens.
std::size_t retrieval_count(const RetrievalConfig& cfg, std::size_t per_series, std::size_t channels);

/// Rank by score (ties: lower position first), keep the top
/// floor(q * per_series) * C and split the remainder into at most r
/// contiguous groups whose sizes differ by at most one.
RetrievalPlan plan_retrieval(std::vector<double> scores, std::size_t per_series, std::size_t channels,
                             const RetrievalConfig& cfg);

struct RetrievedTokens {
    Var tokens;                    // [n_out x width]
    std::vector<TokenMeta> meta;   // kept context, merged, then targets
    RetrievalPlan plan;
};

/// Differentiable retrieval. Gradients reach the projection through the
/// softmax merge weights; the top-k choice itself is not differentiated.
RetrievedTokens retrieve_tokens(Tape& tape, const TokenMatrix& tm, Var tokens, const RetrievalConfig& cfg,
                                Var weight, Var bias);

/// Value-only convenience wrapper.
TokenMatrix retrieve_tokens(const TokenMatrix& tm, const RetrievalConfig& cfg, const Tensor& weight,
                            const Tensor& bias);

/// Context token meta with its average similarity, one row per context token.
void write_scores_csv(const TokenMatrix& tm, const RetrievalPlan& plan, const std::filesystem::path& path);

}  // namespace ictsp
