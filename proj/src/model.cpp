#include "ictsp/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "ictsp/config_io.hpp"
#include "ictsp/errors.hpp"

namespace ictsp {

const char* to_string(Variant v) {
    switch (v) {
        case Variant::ictsp: return "ictsp";
        case Variant::series_wise: return "series_wise";
        case Variant::temporal_wise: return "temporal_wise";
    }
    return "?";
}

Variant parse_variant(const std::string& name) {
    if (name == "ictsp") return Variant::ictsp;
    if (name == "series_wise" || name == "series-wise") return Variant::series_wise;
    if (name == "temporal_wise" || name == "temporal-wise") return Variant::temporal_wise;
    throw ConfigError("unknown model variant '" + name + "' (expected ictsp, series_wise or temporal_wise)");
}

void ModelConfig::validate() const {
    if (d_model == 0 || heads == 0 || d_model % heads != 0)
        throw ConfigError("d_model (" + std::to_string(d_model) + ") must be a positive multiple of heads (" +
                          std::to_string(heads) + ")");
    if (ffn_mult == 0) throw ConfigError("ffn_mult must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    if (input_len == 0 || horizon == 0) throw ConfigError("input_len and horizon must be >= 1");
    if (variant == Variant::ictsp) {
        // Without context only the target lookback has to fit in the window.
        const std::size_t need = use_context ? lookback + horizon : lookback;
        if (lookback == 0 || need > input_len)
            throw ConfigError("need 1 <= L_b and L_b + L_P <= L_I (got L_b=" + std::to_string(lookback) +
                              ", L_P=" + std::to_string(horizon) + ", L_I=" + std::to_string(input_len) + ")");
        if (sample_step == 0) throw ConfigError("sample step m must be >= 1");
        if (retrieval.enabled) ictsp::validate(retrieval);
    }
    if (variant != Variant::temporal_wise && max_series == 0) throw ConfigError("max_series must be >= 1");
    if (variant == Variant::temporal_wise && channels == 0)
        throw ConfigError("temporal-wise model needs a fixed channel count");
    if (aux_context_weight < 0.0) throw ConfigError("aux_context_weight must be >= 0");
}

std::size_t ModelConfig::token_width() const {
    switch (variant) {
        case Variant::ictsp: return lookback + horizon;
        case Variant::series_wise: return input_len + horizon;
        case Variant::temporal_wise: return channels;
    }
    return 0;
}

namespace {

std::size_t context_slots(const ModelConfig& cfg) {
    if (!cfg.use_context) return 0;
    if (cfg.tie_context_positions) return 1;
    return context_per_series(cfg.input_len - cfg.lookback - cfg.horizon, cfg.sample_step, 0);
}

bool has_retrieval(const ModelConfig& cfg) {
    return cfg.variant == Variant::ictsp && cfg.use_context && cfg.retrieval.enabled;
}

}  // namespace

std::size_t ModelConfig::position_slots() const {
    if (!embeddings) return 0;
    switch (variant) {
        case Variant::ictsp: return 1 + context_slots(*this) + (has_retrieval(*this) ? retrieval.merged : 0);
        case Variant::series_wise: return 0;
        case Variant::temporal_wise: return input_len + horizon;
    }
    return 0;
}

namespace {

Tensor xavier(std::size_t out, std::size_t in, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w({out, in});
    for (auto& x : w.values()) x = (2.0 * uniform01(rng) - 1.0) * limit;
    return w;
}

Tensor small_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 0.02);
    Tensor t({rows, cols});
    for (auto& x : t.values()) x = dist(rng);
    return t;
}

}  // namespace

// W_o and the LN2 gain start at zero, so both residual branches are silent and
// a fresh model computes exactly the linear reduction.
TransformerLayer::TransformerLayer(const std::string& prefix, std::size_t d, std::size_t hidden,
                                   std::mt19937_64& rng)
    : ln1_gamma(prefix + ".ln1.gamma", Tensor({d}, 1.0)),
      ln1_beta(prefix + ".ln1.beta", Tensor({d})),
      wq(prefix + ".attn.wq", xavier(d, d, rng)),
      bq(prefix + ".attn.bq", Tensor({d})),
      wk(prefix + ".attn.wk", xavier(d, d, rng)),
      bk(prefix + ".attn.bk", Tensor({d})),
      wv(prefix + ".attn.wv", xavier(d, d, rng)),
      bv(prefix + ".attn.bv", Tensor({d})),
      wo(prefix + ".attn.wo", Tensor({d, d})),
      bo(prefix + ".attn.bo", Tensor({d})),
      ffn_w1(prefix + ".ffn.w1", xavier(hidden, d, rng)),
      ffn_b1(prefix + ".ffn.b1", Tensor({hidden})),
      ffn_w2(prefix + ".ffn.w2", xavier(d, hidden, rng)),
      ffn_b2(prefix + ".ffn.b2", Tensor({d})),
      ln2_gamma(prefix + ".ln2.gamma", Tensor({d})),
      ln2_beta(prefix + ".ln2.beta", Tensor({d})) {}

std::vector<Parameter*> TransformerLayer::parameters() {
    return {&ln1_gamma, &ln1_beta, &wq, &bq, &wk, &bk, &wv, &bv,
            &wo, &bo, &ffn_w1, &ffn_b1, &ffn_w2, &ffn_b2, &ln2_gamma, &ln2_beta};
}

std::vector<const Parameter*> TransformerLayer::parameters() const {
    auto ps = const_cast<TransformerLayer*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

Var tf_layer(Var z, const TransformerLayer& layer, const LayerOptions& opt, Tensor* attention) {
    Tape& tape = *z.tape();
    const std::size_t d = z.cols();
    if (opt.heads == 0 || d % opt.heads != 0) throw ShapeError("tf_layer: width not divisible by heads");
    const bool drop = opt.training && opt.dropout > 0.0;
    if (drop && opt.rng == nullptr) throw ConfigError("tf_layer: dropout in training needs an RNG stream");

    Var x = layer_norm_rows(z, tape.param(layer.ln1_gamma), tape.param(layer.ln1_beta));
    Var q = linear(x, tape.param(layer.wq), tape.param(layer.bq));
    Var k = linear(x, tape.param(layer.wk), tape.param(layer.bk));
    Var v = linear(x, tape.param(layer.wv), tape.param(layer.bv));

    Var o = multi_head_attention(q, k, v, opt.heads, attention);
    Var a = linear(o, tape.param(layer.wo), tape.param(layer.bo));
    if (drop) a = dropout(a, opt.dropout, *opt.rng, true);
    Var y = add(z, a);

    Var f = gelu(linear(y, tape.param(layer.ffn_w1), tape.param(layer.ffn_b1)));
    if (drop) f = dropout(f, opt.dropout, *opt.rng, true);
    f = linear(f, tape.param(layer.ffn_w2), tape.param(layer.ffn_b2));
    return add(y, layer_norm_rows(f, tape.param(layer.ln2_gamma), tape.param(layer.ln2_beta)));
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = config_.d_model;
    const std::size_t D = config_.token_width();
    in_w_ = Parameter("in.weight", xavier(d, D, rng));
    in_b_ = Parameter("in.bias", Tensor({d}));
    out_w_ = Parameter("out.weight", xavier(D, d, rng));
    out_b_ = Parameter("out.bias", Tensor({D}));
    if (config_.embeddings && config_.variant != Variant::temporal_wise)
        series_emb_ = Parameter("series_embedding", small_normal(config_.max_series, d, rng));
    if (const std::size_t slots = config_.position_slots(); slots > 0)
        position_emb_ = Parameter("position_embedding", small_normal(slots, d, rng));
    if (has_retrieval(config_)) {
        const std::size_t width = config_.lookback + config_.horizon;
        retrieval_w_ = Parameter("retrieval.weight", xavier(config_.retrieval.latent_dim, width, rng));
        retrieval_b_ = Parameter("retrieval.bias", Tensor({config_.retrieval.latent_dim}));
    }
    for (std::size_t k = 0; k < config_.layers; ++k)
        layers_.emplace_back("layer" + std::to_string(k), d, config_.ffn_mult * d, rng);
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out;
    for (Parameter* p : {&in_w_, &in_b_, &out_w_, &out_b_, &series_emb_, &position_emb_, &retrieval_w_, &retrieval_b_})
        if (!p->value.empty()) out.push_back(p);
    for (auto& layer : layers_)
        for (Parameter* p : layer.parameters()) out.push_back(p);
    return out;
}

std::vector<const Parameter*> Model::parameters() const {
    auto ps = const_cast<Model*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

std::vector<Parameter*> Model::projection_parameters() { return {&in_w_, &in_b_, &out_w_, &out_b_}; }

Parameter& Model::param(const std::string& name) {
    for (Parameter* p : parameters())
        if (p->name == name) return *p;
    throw Error("model has no parameter named '" + name + "'");
}

const Parameter& Model::param(const std::string& name) const { return const_cast<Model*>(this)->param(name); }

std::size_t Model::count_parameters() const {
    std::size_t n = 0;
    for (const Parameter* p : parameters()) n += p->value.size();
    return n;
}

std::size_t Model::context_per_series_max() const {
    if (config_.variant != Variant::ictsp || !config_.use_context) return 0;
    return context_per_series(config_.input_len - config_.lookback - config_.horizon, config_.sample_step, 0);
}

std::size_t expected_parameter_count(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_model;
    const std::size_t D = cfg.token_width();
    const std::size_t hidden = cfg.ffn_mult * d;
    std::size_t n = 2 * d * D + d + D;
    if (cfg.embeddings && cfg.variant != Variant::temporal_wise) n += cfg.max_series * d;
    n += cfg.position_slots() * d;
    if (has_retrieval(cfg)) n += (cfg.lookback + cfg.horizon + 1) * cfg.retrieval.latent_dim;
    // LN1 + LN2 (2d each), Q/K/V/O (d^2 + d each), FFN (2 hidden d + hidden + d).
    const std::size_t per_layer = 4 * d + 4 * (d * d + d) + 2 * hidden * d + hidden + d;
    return n + cfg.layers * per_layer;
}

ForwardResult Model::forward(Tape& tape, const Tensor& window, const ForwardOptions& opt) const {
    if (window.rank() != 2 || window.cols() != config_.input_len) {
        throw ShapeError("forward: window must be [C x " + std::to_string(config_.input_len) + "], got " +
                         shape_str(window.shape()));
    }
    if (window.rows() == 0) throw ShapeError("forward: window has no channels");
    switch (config_.variant) {
        case Variant::ictsp: return forward_ictsp(tape, window, opt);
        case Variant::series_wise: return forward_series_wise(tape, window, opt);
        case Variant::temporal_wise: return forward_temporal_wise(tape, window, opt);
    }
    throw ConfigError("unknown variant");
}

std::vector<std::size_t> Model::resolve_series_ids(std::size_t channels, const ForwardOptions& opt) const {
    if (channels > config_.max_series) {
        throw CapacityError("window has " + std::to_string(channels) + " series but the embedding pool holds " +
                            std::to_string(config_.max_series));
    }
    if (opt.series_ids.empty()) {
        std::vector<std::size_t> ids(channels);
        std::iota(ids.begin(), ids.end(), std::size_t{0});
        return ids;
    }
    if (opt.series_ids.size() != channels) throw ShapeError("series_ids must name one id per channel");
    for (auto id : opt.series_ids)
        if (id >= config_.max_series) throw CapacityError("series id " + std::to_string(id) + " outside the pool");
    return opt.series_ids;
}

Var Model::run_stack(Var h, const ForwardOptions& opt, const std::vector<TokenMeta>& meta,
                     std::vector<AttentionRecord>* records) const {
    LayerOptions lo;
    lo.heads = config_.heads;
    lo.dropout = config_.dropout;
    lo.training = opt.training;
    lo.rng = opt.rng;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        if (records) {
            AttentionRecord rec;
            rec.layer = k;
            rec.meta = meta;
            h = tf_layer(h, layers_[k], lo, &rec.weights);
            records->push_back(std::move(rec));
        } else {
            h = tf_layer(h, layers_[k], lo);
        }
    }
    return h;
}

namespace {

// Target tokens straight from the window, for models without context.
TokenMatrix target_tokens(const Tensor& window, std::size_t lookback, std::size_t horizon, std::size_t step) {
    const std::size_t C = window.rows(), L = window.cols();
    TokenMatrix tm;
    tm.dims = TokenDims{lookback, horizon, C, step};
    tm.tokens = Tensor({C, lookback + horizon});
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < lookback; ++j) tm.tokens(c, j) = window(c, L - lookback + j);
        TokenMeta m;
        m.series = c;
        m.window_start = L - lookback;
        m.kind = TokenKind::target;
        tm.meta.push_back(m);
    }
    return tm;
}

TokenMatrix targets_only(const TokenMatrix& tm) {
    const auto idx = tm.indices(TokenKind::target);
    TokenMatrix out;
    out.dims = tm.dims;
    out.rationalized = tm.rationalized;
    out.tokens = Tensor({idx.size(), tm.width()});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        auto src = tm.tokens.row(idx[i]);
        std::copy(src.begin(), src.end(), out.tokens.row(i).begin());
        out.meta.push_back(tm.meta[idx[i]]);
    }
    return out;
}

Tensor offsets_matrix(const std::vector<double>& offsets, std::size_t horizon) {
    Tensor t({offsets.size(), horizon});
    for (std::size_t c = 0; c < offsets.size(); ++c)
        for (std::size_t j = 0; j < horizon; ++j) t(c, j) = offsets[c];
    return t;
}

}  // namespace

ForwardResult Model::forward_ictsp(Tape& tape, const Tensor& window, const ForwardOptions& opt) const {
    resolve_series_ids(window.rows(), opt);
    TokenMatrix tm = config_.use_context && !opt.linear_only
                         ? build_tokens(window, config_.lookback, config_.horizon, config_.sample_step, opt.sample_shift)
                         : target_tokens(window, config_.lookback, config_.horizon, config_.sample_step);
    if (config_.rationalize) tm = rationalize_tokens(std::move(tm));
    return forward_tokens(tape, tm, opt);
}

ForwardResult Model::forward_tokens(Tape& tape, const TokenMatrix& tm, const ForwardOptions& opt) const {
    if (config_.variant != Variant::ictsp) throw ConfigError("forward_tokens is only defined for the ICTSP variant");
    if (tm.width() != config_.lookback + config_.horizon || tm.tokens.cols() != tm.width())
        throw ShapeError("forward_tokens: token width does not match L_b + L_P");
    const std::size_t C = tm.count(TokenKind::target);
    if (C == 0) throw ShapeError("forward_tokens: no target tokens");
    const auto ids = resolve_series_ids(C, opt);
    const bool full = !opt.linear_only;

    TokenMatrix local;
    const TokenMatrix* src = &tm;
    if (!full && tm.count(TokenKind::target) != tm.size()) {
        local = targets_only(tm);
        src = &local;
    }

    ForwardResult res;
    Var x = tape.constant(src->tokens);
    std::vector<TokenMeta> meta = src->meta;
    if (full && has_retrieval(config_) && src->count(TokenKind::context) > 0) {
        auto rt = retrieve_tokens(tape, *src, x, config_.retrieval, tape.param(retrieval_w_),
                                  tape.param(retrieval_b_));
        x = rt.tokens;
        meta = std::move(rt.meta);
    }

    Var h = linear(x, tape.param(in_w_), tape.param(in_b_));
    if (full && config_.embeddings) {
        const std::size_t ctx_slots = context_slots(config_);
        const std::size_t slots = config_.position_slots();
        std::vector<std::size_t> sid(meta.size()), pid(meta.size());
        std::size_t merged = 0;
        for (std::size_t i = 0; i < meta.size(); ++i) {
            const auto& m = meta[i];
            if (m.series >= ids.size()) throw ShapeError("forward_tokens: token series outside the target set");
            sid[i] = ids[m.series];
            switch (m.kind) {
                case TokenKind::target: pid[i] = 0; break;
                case TokenKind::context: pid[i] = config_.tie_context_positions ? 1 : m.recency; break;
                case TokenKind::merged: pid[i] = 1 + ctx_slots + merged++; break;
            }
            if (pid[i] >= slots) throw ShapeError("forward_tokens: token position exceeds the position table");
        }
        h = add(h, gather_rows(tape.param(series_emb_), sid));
        h = add(h, gather_rows(tape.param(position_emb_), pid));
    }
    if (full) h = run_stack(h, opt, meta, opt.record_attention ? &res.attention : nullptr);

    std::vector<std::size_t> target_rows(C, meta.size());
    std::vector<double> offsets(C, 0.0);
    for (std::size_t i = 0; i < meta.size(); ++i) {
        if (meta[i].kind != TokenKind::target) continue;
        if (target_rows[meta[i].series] != meta.size())
            throw ShapeError("forward_tokens: two target tokens for one series");
        target_rows[meta[i].series] = i;
        offsets[meta[i].series] = meta[i].offset;
    }
    Var y = linear(gather_rows(h, target_rows), tape.param(out_w_), tape.param(out_b_));
    res.forecast = add(slice_cols(y, config_.lookback, config_.horizon),
                       tape.constant(offsets_matrix(offsets, config_.horizon)));
    res.tokens = meta.size();
    res.context_tokens = meta.size() - C;

    if (full && opt.training && config_.aux_context_weight > 0.0) {
        std::vector<std::size_t> ctx_rows;
        for (std::size_t i = 0; i < meta.size(); ++i)
            if (meta[i].kind == TokenKind::context) ctx_rows.push_back(i);
        if (!ctx_rows.empty()) {
            const Tensor& xv = x.value();
            Tensor future({ctx_rows.size(), config_.horizon});
            for (std::size_t r = 0; r < ctx_rows.size(); ++r)
                for (std::size_t j = 0; j < config_.horizon; ++j)
                    future(r, j) = xv(ctx_rows[r], config_.lookback + j);
            Var yc = linear(gather_rows(h, ctx_rows), tape.param(out_w_), tape.param(out_b_));
            res.aux_loss = scale(mse(slice_cols(yc, config_.lookback, config_.horizon), future),
                                 config_.aux_context_weight);
        }
    }
    return res;
}

ForwardResult Model::forward_series_wise(Tape& tape, const Tensor& window, const ForwardOptions& opt) const {
    const std::size_t C = window.rows();
    const std::size_t L = config_.input_len;
    const auto ids = resolve_series_ids(C, opt);
    const bool full = !opt.linear_only;

    Tensor x({C, L + config_.horizon});
    std::vector<double> offsets(C, 0.0);
    std::vector<TokenMeta> meta(C);
    for (std::size_t c = 0; c < C; ++c) {
        if (config_.rationalize) offsets[c] = window(c, L - 1);
        for (std::size_t t = 0; t < L; ++t) x(c, t) = window(c, t) - offsets[c];
        meta[c].series = c;
        meta[c].kind = TokenKind::target;
        meta[c].offset = offsets[c];
    }

    ForwardResult res;
    Var h = linear(tape.constant(std::move(x)), tape.param(in_w_), tape.param(in_b_));
    if (full && config_.embeddings) h = add(h, gather_rows(tape.param(series_emb_), ids));
    if (full) h = run_stack(h, opt, meta, opt.record_attention ? &res.attention : nullptr);
    Var y = linear(h, tape.param(out_w_), tape.param(out_b_));
    res.forecast = add(slice_cols(y, L, config_.horizon), tape.constant(offsets_matrix(offsets, config_.horizon)));
    res.tokens = C;
    return res;
}

ForwardResult Model::forward_temporal_wise(Tape& tape, const Tensor& window, const ForwardOptions& opt) const {
    const std::size_t C = window.rows();
    if (C != config_.channels) {
        throw CapacityError("temporal-wise model was built for C=" + std::to_string(config_.channels) +
                            " channels and cannot take C=" + std::to_string(C));
    }
    const std::size_t L = config_.input_len;
    const std::size_t P = config_.horizon;
    const bool full = !opt.linear_only;

    std::vector<double> offsets(C, 0.0);
    if (config_.rationalize)
        for (std::size_t c = 0; c < C; ++c) offsets[c] = window(c, L - 1);
    Tensor x({L + P, C});
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t c = 0; c < C; ++c) x(t, c) = window(c, t) - offsets[c];
    std::vector<TokenMeta> meta(L + P);
    for (std::size_t t = 0; t < L + P; ++t) {
        meta[t].window_start = t;
        meta[t].kind = t < L ? TokenKind::context : TokenKind::target;
    }

    ForwardResult res;
    Var h = linear(tape.constant(std::move(x)), tape.param(in_w_), tape.param(in_b_));
    if (full && config_.embeddings) h = add(h, tape.param(position_emb_));
    if (full) h = run_stack(h, opt, meta, opt.record_attention ? &res.attention : nullptr);
    std::vector<std::size_t> tail(P);
    std::iota(tail.begin(), tail.end(), L);
    Var y = linear(gather_rows(h, tail), tape.param(out_w_), tape.param(out_b_));  // [L_P x C]
    res.forecast = add(transpose(y), tape.constant(offsets_matrix(offsets, P)));
    res.tokens = L + P;
    return res;
}

Tensor Model::predict(const Tensor& window) const {
    Tape tape(false);
    return forward(tape, window).forecast.value();
}

std::vector<AttentionRecord> Model::attention(const Tensor& window) const {
    if (has_retrieval(config_))
        std::cerr << "warning: token retrieval is on; attention indices refer to retrieved and merged tokens\n";
    Tape tape(false);
    ForwardOptions opt;
    opt.record_attention = true;
    return forward(tape, window, opt).attention;
}

Tensor Model::linear_reduction_forecast(const Tensor& window) const {
    Tape tape(false);
    ForwardOptions opt;
    opt.linear_only = true;
    return forward(tape, window, opt).forecast.value();
}

void export_attention(const std::vector<AttentionRecord>& records, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
    for (const auto& rec : records) {
        const std::size_t n = rec.weights.rows();
        if (rec.meta.size() != n) throw ShapeError("export_attention: meta does not match the attention matrix");
        const auto path = dir / ("attention_layer" + std::to_string(rec.layer) + ".csv");
        std::ofstream out(path);
        if (!out) throw Error("cannot write " + path.string());
        out.precision(17);
        out << "series,sample,kind";
        for (const auto& m : rec.meta) out << ",s" << m.series << ":" << m.window_start << ":" << to_string(m.kind);
        out << '\n';
        for (std::size_t i = 0; i < n; ++i) {
            out << rec.meta[i].series << ',' << rec.meta[i].window_start << ',' << to_string(rec.meta[i].kind);
            for (double w : rec.weights.row(i)) out << ',' << w;
            out << '\n';
        }
        if (!out) throw Error("write failed for " + path.string());
    }
}

namespace {

constexpr char kMagic[8] = {'I', 'C', 'T', 'S', 'P', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw CheckpointError(path.string() + ": truncated checkpoint");
    return v;
}

std::string get_string(std::istream& in, std::size_t n, const std::filesystem::path& path) {
    if (n > (std::size_t{1} << 30)) throw CheckpointError(path.string() + ": corrupt length field");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw CheckpointError(path.string() + ": truncated checkpoint");
    return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    put(out, kVersion);
    const std::string cfg = config_to_json(model.config()).dump();
    put(out, static_cast<std::uint64_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    const auto params = model.parameters();
    put(out, static_cast<std::uint64_t>(params.size()));
    for (const Parameter* p : params) {
        put(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        put(out, static_cast<std::uint32_t>(p->value.rank()));
        for (auto dim : p->value.shape()) put(out, static_cast<std::uint64_t>(dim));
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!out) throw CheckpointError("write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + sizeof magic, kMagic))
        throw CheckpointError(path.string() + ": not a model checkpoint");
    const auto version = get<std::uint32_t>(in, path);
    if (version != kVersion)
        throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    const auto cfg_len = get<std::uint64_t>(in, path);
    ModelConfig cfg;
    try {
        cfg = model_config_from_json(nlohmann::json::parse(get_string(in, cfg_len, path)));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path.string() + ": bad config block: " + e.what());
    }
    Model model(cfg);
    auto params = model.parameters();
    const auto count = get<std::uint64_t>(in, path);
    if (count != params.size()) {
        throw CheckpointError(path.string() + ": " + std::to_string(count) + " tensors, model expects " +
                              std::to_string(params.size()));
    }
    for (Parameter* p : params) {
        const std::string name = get_string(in, get<std::uint32_t>(in, path), path);
        if (name != p->name)
            throw CheckpointError(path.string() + ": expected tensor '" + p->name + "', found '" + name + "'");
        const auto rank = get<std::uint32_t>(in, path);
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(in, path)));
        if (shape != p->value.shape()) {
            throw CheckpointError(path.string() + ": tensor '" + name + "' has shape " + shape_str(shape) +
                                  ", model expects " + shape_str(p->value.shape()));
        }
        in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(double)));
        if (!in) throw CheckpointError(path.string() + ": truncated tensor '" + name + "'");
        p->zero_grad();
    }
    return model;
}

}  // namespace ictsp
