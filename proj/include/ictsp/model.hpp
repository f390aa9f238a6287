#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ictsp/autograd.hpp"
#include "ictsp/retrieval.hpp"
#include "ictsp/tokenizer.hpp"

namespace ictsp {

enum class Variant { ictsp, series_wise, temporal_wise };

const char* to_string(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
    Variant variant = Variant::ictsp;
    std::size_t layers = 3;        // K
    std::size_t d_model = 128;     // d
    std::size_t heads = 8;
    std::size_t ffn_mult = 4;      // FFN hidden = ffn_mult * d
    double dropout = 0.5;
    std::size_t input_len = 1440;  // L_I
    std::size_t lookback = 512;    // L_b (ICTSP tokens only)
    std::size_t horizon = 96;      // L_P
    std::size_t sample_step = 8;   // m
    RetrievalConfig retrieval;
    std::size_t max_series = 64;   // C_max, size of the series-source embedding pool
    std::size_t channels = 0;      // temporal-wise only: C fixed at construction

    bool use_context = true;       // false gives the "without context" ablation
    bool rationalize = true;       // subtract last lookback value (all variants)
    bool embeddings = true;        // series-source and position embeddings
    bool tie_context_positions = false;  // one shared position vector for every context token
    double aux_context_weight = 0.0;     // extra loss on context tokens' known futures

    void validate() const;
    /// Width of one input token for the variant.
    std::size_t token_width() const;
    /// Rows of the position table: target, each context recency rank, each
    /// merged slot (ICTSP); one per step (temporal-wise); zero for series-wise.
    std::size_t position_slots() const;
};

/// Pre-norm Transformer layer with the output-normalized FFN branch:
///   Y  = Z + Attn(LN1(Z))
///   Z' = Y + LN2(FFN(Y))
/// Tokens are rows.
struct TransformerLayer {
    Parameter ln1_gamma, ln1_beta;
    Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Parameter ln2_gamma, ln2_beta;

    TransformerLayer() = default;
    TransformerLayer(const std::string& prefix, std::size_t d, std::size_t hidden, std::mt19937_64& rng);

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
};

struct LayerOptions {
    std::size_t heads = 1;
    double dropout = 0.0;
    bool training = false;
    std::mt19937_64* rng = nullptr;  // dropout stream, needed when training with dropout > 0
};

/// One layer application. If `attention` is non-null it receives the
/// head-averaged attention matrix [n x n].
Var tf_layer(Var z, const TransformerLayer& layer, const LayerOptions& opt, Tensor* attention = nullptr);

struct AttentionRecord {
    std::size_t layer = 0;
    Tensor weights;                // head-averaged [n x n], rows sum to 1
    std::vector<TokenMeta> meta;   // one entry per token row/column
};

struct ForwardOptions {
    bool training = false;
    std::mt19937_64* rng = nullptr;       // dropout stream
    std::size_t sample_shift = 0;         // tokenizer shift r (ICTSP)
    std::vector<std::size_t> series_ids;  // embedding id per channel; empty = 0..C-1
    bool record_attention = false;
    bool linear_only = false;             // skip embeddings, context, retrieval and every TF layer
};

struct ForwardResult {
    Var forecast;                          // [C x L_P]
    Var aux_loss;                          // set when aux_context_weight > 0 and training
    std::vector<AttentionRecord> attention;
    std::size_t tokens = 0;                // tokens entering the TF stack
    std::size_t context_tokens = 0;        // context (kept + merged) tokens entering the TF stack
};

class Model {
public:
    Model() = default;
    explicit Model(ModelConfig config, std::uint64_t seed = 2024);

    const ModelConfig& config() const { return config_; }

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    /// W_in, b_in, W_out, b_out: the only parameters trained during linear warm-up.
    std::vector<Parameter*> projection_parameters();
    Parameter& param(const std::string& name);
    const Parameter& param(const std::string& name) const;
    std::size_t count_parameters() const;

    std::vector<TransformerLayer>& layers() { return layers_; }
    const std::vector<TransformerLayer>& layers() const { return layers_; }

    /// Forecast a [C x L_I] window on the given tape. Dispatches on the variant.
    ForwardResult forward(Tape& tape, const Tensor& window, const ForwardOptions& opt = {}) const;
    /// ICTSP forward from an already built (and, if configured, rationalized)
    /// token matrix. Targets may appear in any row order.
    ForwardResult forward_tokens(Tape& tape, const TokenMatrix& tm, const ForwardOptions& opt = {}) const;

    /// Inference helpers (dropout off, no gradients).
    Tensor predict(const Tensor& window) const;
    std::vector<AttentionRecord> attention(const Tensor& window) const;
    /// W_out (W_in z + b_in) + b_out on each series' target token, with the
    /// same rationalization and read-out as forward().
    Tensor linear_reduction_forecast(const Tensor& window) const;

    /// Tokens per series produced for a full L_I window with shift 0.
    std::size_t context_per_series_max() const;

private:
    ForwardResult forward_ictsp(Tape& tape, const Tensor& window, const ForwardOptions& opt) const;
    ForwardResult forward_series_wise(Tape& tape, const Tensor& window, const ForwardOptions& opt) const;
    ForwardResult forward_temporal_wise(Tape& tape, const Tensor& window, const ForwardOptions& opt) const;
    Var run_stack(Var h, const ForwardOptions& opt, const std::vector<TokenMeta>& meta,
                  std::vector<AttentionRecord>* records) const;
    std::vector<std::size_t> resolve_series_ids(std::size_t channels, const ForwardOptions& opt) const;

    ModelConfig config_;
    Parameter in_w_, in_b_, out_w_, out_b_;
    Parameter series_emb_, position_emb_;
    Parameter retrieval_w_, retrieval_b_;
    std::vector<TransformerLayer> layers_;
};

/// Closed-form trainable scalar count for a configuration.
std::size_t expected_parameter_count(const ModelConfig& cfg);

/// One CSV per layer (attention_layer<k>.csv): a meta header row labelling
/// every column, then one row per token with its meta and attention weights.
void export_attention(const std::vector<AttentionRecord>& records, const std::filesystem::path& dir);

/// Versioned binary checkpoint holding the config, the seed and every named
/// parameter tensor.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace ictsp
