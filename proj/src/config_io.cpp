#include "ictsp/config_io.hpp"

#include <algorithm>
#include <cstring>

#include "ictsp/errors.hpp"

namespace ictsp {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> known, const char* where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        const bool ok = std::any_of(known.begin(), known.end(), [&k = key](const char* n) { return k == n; });
        if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
    }
}

namespace {

template <class T>
void read(const json& j, const char* key, T& field, const char* where) {
    if (!j.contains(key)) return;
    try {
        field = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string(where) + ": key '" + key + "' has the wrong type");
    }
}

}  // namespace

json config_to_json(const RetrievalConfig& cfg) {
    return {{"latent_dim", cfg.latent_dim},
            {"keep_fraction", cfg.keep_fraction},
            {"merged", cfg.merged},
            {"enabled", cfg.enabled}};
}

RetrievalConfig retrieval_config_from_json(const json& j, RetrievalConfig base) {
    constexpr const char* where = "retrieval config";
    check_keys(j, {"latent_dim", "keep_fraction", "merged", "enabled"}, where);
    read(j, "latent_dim", base.latent_dim, where);
    read(j, "keep_fraction", base.keep_fraction, where);
    read(j, "merged", base.merged, where);
    read(j, "enabled", base.enabled, where);
    return base;
}

json config_to_json(const ModelConfig& cfg) {
    return {{"variant", to_string(cfg.variant)},
            {"layers", cfg.layers},
            {"d_model", cfg.d_model},
            {"heads", cfg.heads},
            {"ffn_mult", cfg.ffn_mult},
            {"dropout", cfg.dropout},
            {"input_len", cfg.input_len},
            {"lookback", cfg.lookback},
            {"horizon", cfg.horizon},
            {"sample_step", cfg.sample_step},
            {"retrieval", config_to_json(cfg.retrieval)},
            {"max_series", cfg.max_series},
            {"channels", cfg.channels},
            {"use_context", cfg.use_context},
            {"rationalize", cfg.rationalize},
            {"embeddings", cfg.embeddings},
            {"tie_context_positions", cfg.tie_context_positions},
            {"aux_context_weight", cfg.aux_context_weight}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig base) {
    constexpr const char* where = "model config";
    check_keys(j,
               {"variant", "layers", "d_model", "heads", "ffn_mult", "dropout", "input_len", "lookback", "horizon",
                "sample_step", "retrieval", "max_series", "channels", "use_context", "rationalize", "embeddings",
                "tie_context_positions", "aux_context_weight"},
               where);
    if (j.contains("variant")) {
        std::string v;
        read(j, "variant", v, where);
        base.variant = parse_variant(v);
    }
    read(j, "layers", base.layers, where);
    read(j, "d_model", base.d_model, where);
    read(j, "heads", base.heads, where);
    read(j, "ffn_mult", base.ffn_mult, where);
    read(j, "dropout", base.dropout, where);
    read(j, "input_len", base.input_len, where);
    read(j, "lookback", base.lookback, where);
    read(j, "horizon", base.horizon, where);
    read(j, "sample_step", base.sample_step, where);
    if (j.contains("retrieval")) base.retrieval = retrieval_config_from_json(j.at("retrieval"), base.retrieval);
    read(j, "max_series", base.max_series, where);
    read(j, "channels", base.channels, where);
    read(j, "use_context", base.use_context, where);
    read(j, "rationalize", base.rationalize, where);
    read(j, "embeddings", base.embeddings, where);
    read(j, "tie_context_positions", base.tie_context_positions, where);
    read(j, "aux_context_weight", base.aux_context_weight, where);
    return base;
}

json config_to_json(const TrainConfig& cfg) {
    return {{"lr_peak", cfg.lr_peak},
            {"lr_warmup", cfg.lr_warmup},
            {"max_steps", cfg.max_steps},
            {"batch_size", cfg.batch_size},
            {"eval_interval", cfg.eval_interval},
            {"patience", cfg.patience},
            {"seed", cfg.seed},
            {"linear_warmup", cfg.linear_warmup},
            {"augment",
             {{"shift", cfg.augment.shift},
              {"shuffle_series", cfg.augment.shuffle_series},
              {"subset_series", cfg.augment.subset_series}}},
            {"eval_stride", cfg.eval_stride},
            {"eval_max_windows", cfg.eval_max_windows},
            {"record_test", cfg.record_test}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig base) {
    constexpr const char* where = "train config";
    check_keys(j,
               {"lr_peak", "lr_warmup", "max_steps", "batch_size", "eval_interval", "patience", "seed",
                "linear_warmup", "augment", "eval_stride", "eval_max_windows", "record_test"},
               where);
    read(j, "lr_peak", base.lr_peak, where);
    read(j, "lr_warmup", base.lr_warmup, where);
    read(j, "max_steps", base.max_steps, where);
    read(j, "batch_size", base.batch_size, where);
    read(j, "eval_interval", base.eval_interval, where);
    read(j, "patience", base.patience, where);
    read(j, "seed", base.seed, where);
    read(j, "linear_warmup", base.linear_warmup, where);
    if (j.contains("augment")) {
        const auto& a = j.at("augment");
        check_keys(a, {"shift", "shuffle_series", "subset_series"}, "augment config");
        read(a, "shift", base.augment.shift, "augment config");
        read(a, "shuffle_series", base.augment.shuffle_series, "augment config");
        read(a, "subset_series", base.augment.subset_series, "augment config");
    }
    read(j, "eval_stride", base.eval_stride, where);
    read(j, "eval_max_windows", base.eval_max_windows, where);
    read(j, "record_test", base.record_test, where);
    return base;
}

}  // namespace ictsp
