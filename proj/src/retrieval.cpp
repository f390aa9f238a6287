#include "ictsp/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ictsp/errors.hpp"

namespace ictsp {

namespace {

std::size_t kept_per_series(double q, std::size_t per_series) {
    return static_cast<std::size_t>(std::floor(q * static_cast<double>(per_series) + 1e-9));
}

}  // namespace

void validate(const RetrievalConfig& cfg) {
    if (!(cfg.keep_fraction > 0.0 && cfg.keep_fraction <= 1.0)) throw ConfigError("retrieval q must be in (0, 1]");
    if (cfg.latent_dim == 0) throw ConfigError("retrieval latent dimension must be >= 1");
}

std::size_t retrieval_count(const RetrievalConfig& cfg, std::size_t per_series, std::size_t channels) {
    const std::size_t total = per_series * channels;
    if (!cfg.enabled) return total;
    const std::size_t kept = std::min(total, kept_per_series(cfg.keep_fraction, per_series) * channels);
    return kept + std::min(cfg.merged, total - kept);
}

RetrievalPlan plan_retrieval(std::vector<double> scores, std::size_t per_series, std::size_t channels,
                             const RetrievalConfig& cfg) {
    RetrievalPlan plan;
    plan.scores = std::move(scores);
    const std::size_t n = plan.scores.size();
    plan.ranking.resize(n);
    std::iota(plan.ranking.begin(), plan.ranking.end(), std::size_t{0});
    std::stable_sort(plan.ranking.begin(), plan.ranking.end(),
                     [&s = plan.scores](std::size_t a, std::size_t b) { return s[a] > s[b]; });

    const std::size_t k = std::min(n, kept_per_series(cfg.keep_fraction, per_series) * channels);
    plan.kept.assign(plan.ranking.begin(), plan.ranking.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(plan.kept.begin(), plan.kept.end());

    const std::size_t remaining = n - k;
    const std::size_t groups = std::min(cfg.merged, remaining);
    std::size_t pos = k;
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t size = remaining / groups + (g < remaining % groups ? 1 : 0);
        plan.groups.emplace_back(plan.ranking.begin() + static_cast<std::ptrdiff_t>(pos),
                                 plan.ranking.begin() + static_cast<std::ptrdiff_t>(pos + size));
        pos += size;
    }
    return plan;
}

RetrievedTokens retrieve_tokens(Tape& tape, const TokenMatrix& tm, Var tokens, const RetrievalConfig& cfg,
                                Var weight, Var bias) {
    const auto context = tm.indices(TokenKind::context);
    const auto targets = tm.indices(TokenKind::target);
    RetrievedTokens out;
    if (!cfg.enabled || context.empty()) {
        out.tokens = tokens;
        out.meta = tm.meta;
        return out;
    }
    validate(cfg);
    if (targets.empty()) throw ConfigError("token retrieval needs at least one target token");
    if (tm.count(TokenKind::merged) != 0) throw ConfigError("token retrieval applied twice");

    const std::size_t C = targets.size();
    const std::size_t per_series = context.size() / C;

    Var latent = normalize_rows(linear(tokens, weight, bias));
    Var sims = matmul_nt(gather_rows(latent, context), gather_rows(latent, targets));  // [n_ctx x C]
    Var avg = matmul(sims, tape.constant(Tensor({C, 1}, 1.0 / static_cast<double>(C))));

    std::vector<double> scores(avg.value().values().begin(), avg.value().values().end());
    out.plan = plan_retrieval(std::move(scores), per_series, C, cfg);

    std::vector<Var> parts;
    if (!out.plan.kept.empty()) {
        std::vector<std::size_t> rows;
        for (auto p : out.plan.kept) {
            rows.push_back(context[p]);
            out.meta.push_back(tm.meta[context[p]]);
        }
        parts.push_back(gather_rows(tokens, rows));
    }
    for (const auto& group : out.plan.groups) {
        std::vector<std::size_t> rows;
        for (auto p : group) rows.push_back(context[p]);
        Var alpha = softmax_rows(transpose(gather_rows(avg, group)));  // [1 x g]
        parts.push_back(matmul(alpha, gather_rows(tokens, rows)));

        TokenMeta meta = tm.meta[context[group.front()]];
        meta.kind = TokenKind::merged;
        meta.recency = 0;
        meta.offset = 0.0;
        for (std::size_t i = 0; i < group.size(); ++i) meta.offset += alpha.value()[i] * tm.meta[rows[i]].offset;
        out.meta.push_back(meta);
    }
    parts.push_back(gather_rows(tokens, targets));
    for (auto t : targets) out.meta.push_back(tm.meta[t]);
    out.tokens = concat_rows(parts);
    return out;
}

TokenMatrix retrieve_tokens(const TokenMatrix& tm, const RetrievalConfig& cfg, const Tensor& weight,
                            const Tensor& bias) {
    Tape tape;
    RetrievedTokens r =
        retrieve_tokens(tape, tm, tape.constant(tm.tokens), cfg, tape.constant(weight), tape.constant(bias));
    TokenMatrix out;
    out.tokens = r.tokens.value();
    out.meta = std::move(r.meta);
    out.dims = tm.dims;
    out.rationalized = tm.rationalized;
    return out;
}

void write_scores_csv(const TokenMatrix& tm, const RetrievalPlan& plan, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IngestError("cannot write " + path.string());
    out.precision(17);
    out << "series,window_start,recency,score,kept\n";
    const auto context = tm.indices(TokenKind::context);
    for (std::size_t p = 0; p < context.size() && p < plan.scores.size(); ++p) {
        const auto& m = tm.meta[context[p]];
        const bool kept = std::binary_search(plan.kept.begin(), plan.kept.end(), p);
        out << m.series << ',' << m.window_start << ',' << m.recency << ',' << plan.scores[p] << ',' << kept << '\n';
    }
}

}  // namespace ictsp
