#include "ictsp/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>

#include "ictsp/config_io.hpp"
#include "ictsp/errors.hpp"

namespace ictsp {

using nlohmann::json;

std::string DataSource::label() const {
    if (kind == "csv") return path.stem().string();
    return kind;
}

SeriesFrame load_source(const DataSource& source) {
    if (source.kind == "multi") return gen_multi(source.multi).frame;
    if (source.kind == "noise") return gen_channels_independent(source.length, source.channels, source.seed, source.phi);
    if (source.kind == "csv") {
        if (source.path.empty()) throw ConfigError("csv data source needs a path");
        return load_csv(source.path, source.has_date);
    }
    throw ConfigError("unknown data source '" + source.kind + "' (expected multi, noise or csv)");
}

const char* to_string(Protocol p) {
    switch (p) {
        case Protocol::full: return "full";
        case Protocol::few10: return "few10";
        case Protocol::few5: return "few5";
        case Protocol::zeroshot: return "zeroshot";
    }
    return "?";
}

Protocol parse_protocol(const std::string& name) {
    for (auto p : {Protocol::full, Protocol::few10, Protocol::few5, Protocol::zeroshot})
        if (name == to_string(p)) return p;
    throw ConfigError("unknown protocol '" + name + "' (expected full, few10, few5 or zeroshot)");
}

namespace {

RunSpec desk_base() {
    RunSpec s;
    s.model.layers = 3;
    s.model.d_model = 32;
    s.model.heads = 4;
    s.model.dropout = 0.0;
    s.model.input_len = 256;
    s.model.lookback = 128;
    s.model.horizon = 24;
    s.model.sample_step = 8;
    s.model.retrieval = RetrievalConfig{16, 0.25, 8, true};
    s.train.lr_peak = 2e-3;
    s.train.lr_warmup = 100;
    s.train.max_steps = 3000;
    s.train.batch_size = 16;
    s.train.eval_interval = 100;
    s.train.patience = 10;
    s.train.eval_stride = 16;
    s.test_stride = 4;
    return s;
}

}  // namespace

RunSpec preset(const std::string& name) {
    if (name == "multi-small") {
        RunSpec s = desk_base();
        s.name = name;
        s.data.kind = "multi";
        return s;
    }
    if (name == "noise-small") {
        RunSpec s = desk_base();
        s.name = name;
        s.data.kind = "noise";
        return s;
    }
    if (name == "paper-scale") {
        RunSpec s;
        s.name = name;
        s.data.kind = "multi";
        s.data.multi = MultiSpec{};
        s.horizons = {96, 192, 336, 720};
        return s;
    }
    if (name == "warmup-fig9") {
        RunSpec s = preset("paper-scale");
        s.name = name;
        s.train.linear_warmup = 5000;
        s.horizons.clear();
        return s;
    }
    throw ConfigError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() { return {"multi-small", "noise-small", "paper-scale", "warmup-fig9"}; }

json to_json(const DataSource& d) {
    json j{{"kind", d.kind}};
    if (d.kind == "csv") {
        j["path"] = d.path.string();
        j["has_date"] = d.has_date;
    } else if (d.kind == "multi") {
        j["length"] = d.multi.length;
        j["shifts"] = d.multi.shifts;
        j["combinations"] = d.multi.combinations;
        j["seed"] = d.multi.seed;
    } else {
        j["length"] = d.length;
        j["channels"] = d.channels;
        j["phi"] = d.phi;
        j["seed"] = d.seed;
    }
    return j;
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

DataSource data_source_from_json(const json& j, DataSource base) {
    constexpr const char* where = "data source";
    check_keys(j, {"kind", "path", "has_date", "length", "shifts", "combinations", "channels", "phi", "seed"}, where);
    read(j, "kind", base.kind, where);
    if (j.contains("path")) {
        std::string p;
        read(j, "path", p, where);
        base.path = p;
    }
    read(j, "has_date", base.has_date, where);
    if (base.kind == "multi") {
        read(j, "length", base.multi.length, where);
        read(j, "shifts", base.multi.shifts, where);
        read(j, "combinations", base.multi.combinations, where);
        read(j, "seed", base.multi.seed, where);
    } else {
        read(j, "length", base.length, where);
        read(j, "channels", base.channels, where);
        read(j, "phi", base.phi, where);
        read(j, "seed", base.seed, where);
    }
    return base;
}

json to_json(const RunSpec& s) {
    json j{{"name", s.name},
           {"data", to_json(s.data)},
           {"model", config_to_json(s.model)},
           {"train", config_to_json(s.train)},
           {"protocol", to_string(s.protocol)},
           {"horizons", s.horizons},
           {"test_stride", s.test_stride},
           {"test_max_windows", s.test_max_windows},
           {"out", s.out.string()},
           {"save_checkpoints", s.save_checkpoints}};
    if (s.transfer) j["transfer"] = to_json(*s.transfer);
    if (s.mask_visible) j["mask_visible"] = *s.mask_visible;
    return j;
}

RunSpec run_spec_from_json(const json& j, RunSpec base) {
    constexpr const char* where = "run spec";
    check_keys(j,
               {"name", "preset", "data", "transfer", "model", "train", "protocol", "horizons", "test_stride",
                "test_max_windows", "mask_visible", "out", "save_checkpoints"},
               where);
    if (j.contains("preset")) {
        std::string p;
        read(j, "preset", p, where);
        base = preset(p);
    }
    read(j, "name", base.name, where);
    if (j.contains("data")) base.data = data_source_from_json(j.at("data"), base.data);
    if (j.contains("transfer")) base.transfer = data_source_from_json(j.at("transfer"), base.transfer.value_or(DataSource{}));
    if (j.contains("model")) base.model = model_config_from_json(j.at("model"), base.model);
    if (j.contains("train")) base.train = train_config_from_json(j.at("train"), base.train);
    if (j.contains("protocol")) {
        std::string p;
        read(j, "protocol", p, where);
        base.protocol = parse_protocol(p);
    }
    read(j, "horizons", base.horizons, where);
    read(j, "test_stride", base.test_stride, where);
    read(j, "test_max_windows", base.test_max_windows, where);
    if (j.contains("mask_visible")) {
        if (j.at("mask_visible").is_null()) {
            base.mask_visible.reset();
        } else {
            std::size_t v = 0;
            read(j, "mask_visible", v, where);
            base.mask_visible = v;
        }
    }
    if (j.contains("out")) {
        std::string o;
        read(j, "out", o, where);
        base.out = o;
    }
    read(j, "save_checkpoints", base.save_checkpoints, where);
    return base;
}

RunSpec load_run_spec(const std::filesystem::path& path, RunSpec base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_spec_from_json(j, std::move(base));
}

const char* to_string(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_context: return "no_context";
        case Ablation::no_tr: return "no_tr";
        case Ablation::m1: return "m1";
        case Ablation::m64: return "m64";
        case Ablation::m256: return "m256";
    }
    return "?";
}

Ablation parse_ablation(const std::string& name) {
    for (auto a : all_ablations())
        if (name == to_string(a)) return a;
    throw ConfigError("unknown ablation setting '" + name + "' (expected full, no_context, no_tr, m1, m64 or m256)");
}

std::vector<Ablation> all_ablations() {
    return {Ablation::full, Ablation::no_context, Ablation::no_tr, Ablation::m1, Ablation::m64, Ablation::m256};
}

ModelConfig apply_ablation(ModelConfig cfg, Ablation a) {
    switch (a) {
        case Ablation::full: break;
        case Ablation::no_context: cfg.use_context = false; break;
        case Ablation::no_tr: cfg.retrieval.enabled = false; break;
        case Ablation::m1: cfg.sample_step = 1; break;
        case Ablation::m64: cfg.sample_step = 64; break;
        case Ablation::m256: cfg.sample_step = 256; break;
    }
    return cfg;
}

json to_json(const RunResult& r) {
    json hist = json::array();
    for (const auto& h : r.history) {
        json row{{"step", h.step}, {"lr", h.lr}, {"train_loss", h.train_loss}, {"val_mse", h.val_mse},
                 {"val_mae", h.val_mae}};
        if (!std::isnan(h.test_mse)) {
            row["test_mse"] = h.test_mse;
            row["test_mae"] = h.test_mae;
        }
        hist.push_back(row);
    }
    return {{"name", r.name},
            {"dataset", r.dataset},
            {"setting", r.setting},
            {"variant", to_string(r.variant)},
            {"protocol", to_string(r.protocol)},
            {"horizon", r.horizon},
            {"channels", r.channels},
            {"mse", r.test.mse},
            {"mae", r.test.mae},
            {"test_windows", r.test.windows},
            {"parameters", r.parameters},
            {"context_tokens_pre", r.context_pre},
            {"context_tokens_post", r.context_post},
            {"steps", r.steps},
            {"best_step", r.best_step},
            {"early_stopped", r.early_stopped},
            {"wall_seconds", r.wall_seconds},
            {"history", hist},
            {"config", r.config}};
}

namespace {

SeriesFrame prepare_frame(const DataSource& source) { return split_standardize(load_source(source)); }

std::string cell_tag(const RunSpec& spec) {
    return spec.name + "_" + to_string(spec.model.variant) + "_LP" + std::to_string(spec.model.horizon);
}

}  // namespace

TrainedRun train_cell(RunSpec spec, const RunHooks& hooks) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainedRun run;
    SeriesFrame frame = prepare_frame(spec.data);
    const std::size_t min_len = spec.model.input_len + spec.model.horizon;

    if (spec.protocol == Protocol::few10 || spec.protocol == Protocol::few5) {
        const double fraction = spec.protocol == Protocol::few10 ? 0.10 : 0.05;
        try {
            frame = few_shot_truncate(std::move(frame), fraction, min_len);
        } catch (const ExperimentError& e) {
            throw ExperimentError(std::string(to_string(spec.protocol)) + " on " + spec.data.label() +
                                  " with L_P=" + std::to_string(spec.model.horizon) + ": " + e.what());
        }
    }

    SeriesFrame eval_frame = frame;
    if (spec.protocol == Protocol::zeroshot) {
        if (!spec.transfer) throw ConfigError("zeroshot protocol needs a transfer data source");
        if (spec.model.variant != Variant::ictsp) {
            throw ExperimentError(std::string("zero-shot transfer is only supported for the ictsp variant; ") +
                                  to_string(spec.model.variant) + " ties its parameters to the training channels");
        }
        eval_frame = prepare_frame(*spec.transfer);
    }

    if (spec.model.variant == Variant::temporal_wise && spec.model.channels == 0)
        spec.model.channels = frame.channels();
    spec.model.validate();
    spec.train.validate();

    Model init(spec.model, spec.train.seed);
    FitHooks fh;
    if (hooks.on_eval) fh.on_eval = [&](const HistoryRow& r) { hooks.on_eval(spec, r); };
    FitResult fitted = fit(init, frame, spec.train, fh);

    EvalOptions eo;
    eo.stride = spec.test_stride;
    eo.max_windows = spec.test_max_windows;
    eo.mask_visible = spec.mask_visible;

    RunResult& r = run.result;
    r.name = spec.name;
    r.dataset = spec.protocol == Protocol::zeroshot ? spec.data.label() + "->" + spec.transfer->label()
                                                     : spec.data.label();
    r.variant = spec.model.variant;
    r.protocol = spec.protocol;
    r.horizon = spec.model.horizon;
    r.channels = eval_frame.channels();
    r.test = evaluate(fitted.best, eval_frame, Split::test, eo);
    r.parameters = fitted.best.count_parameters();
    if (spec.model.variant == Variant::ictsp && spec.model.use_context) {
        const auto& rc = spec.model.retrieval;
        const auto counts = count_context_tokens(spec.model.input_len, spec.model.lookback, spec.model.horizon,
                                                 spec.model.sample_step, r.channels, rc.keep_fraction, rc.merged);
        r.context_pre = counts.pre_retrieval;
        r.context_post = rc.enabled ? counts.post_retrieval : counts.pre_retrieval;
    }
    r.steps = fitted.steps;
    r.best_step = fitted.best_step;
    r.early_stopped = fitted.early_stopped;
    r.history = std::move(fitted.history);
    r.config = to_json(spec);
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!spec.out.empty()) {
        std::filesystem::create_directories(spec.out);
        write_history_csv(r.history, spec.out / ("history_" + cell_tag(spec) + ".csv"));
        if (spec.save_checkpoints) save_checkpoint(fitted.best, spec.out / ("model_" + cell_tag(spec) + ".ckpt"));
    }

    run.spec = std::move(spec);
    run.frame = std::move(frame);
    run.eval_frame = std::move(eval_frame);
    run.model = std::move(fitted.best);
    return run;
}

std::vector<RunResult> run_experiment(const RunSpec& spec, const RunHooks& hooks) {
    std::vector<std::size_t> horizons = spec.horizons;
    if (horizons.empty()) horizons.push_back(spec.model.horizon);
    std::vector<RunResult> rows;
    for (auto h : horizons) {
        RunSpec cell = spec;
        cell.model.horizon = h;
        rows.push_back(train_cell(std::move(cell), hooks).result);
    }
    if (!spec.out.empty()) write_results(rows, spec.out);
    return rows;
}

std::vector<RunResult> run_ablation(const RunSpec& spec, const std::vector<Ablation>& settings,
                                    const RunHooks& hooks) {
    std::vector<std::size_t> horizons = spec.horizons;
    if (horizons.empty()) horizons.push_back(spec.model.horizon);
    std::vector<RunResult> rows;
    for (auto h : horizons) {
        for (auto a : settings) {
            RunSpec cell = spec;
            cell.model.horizon = h;
            cell.model = apply_ablation(cell.model, a);
            cell.name = spec.name + "_" + to_string(a);
            auto r = train_cell(std::move(cell), hooks).result;
            r.setting = to_string(a);
            rows.push_back(std::move(r));
        }
    }
    if (!spec.out.empty()) {
        write_results(rows, spec.out);
        write_ablation_table(rows, spec.out / "ablation.csv");
    }
    return rows;
}

ComparisonResult run_architecture_comparison(const std::vector<RunSpec>& datasets,
                                             const std::vector<Variant>& variants, const RunHooks& hooks) {
    ComparisonResult out;
    for (const auto& base : datasets) {
        for (auto v : variants) {
            RunSpec cell = base;
            cell.model.variant = v;
            cell.train.record_test = true;
            cell.protocol = Protocol::full;
            if (!base.out.empty()) cell.out = base.out;
            auto run = train_cell(std::move(cell), hooks);

            const auto& f = run.eval_frame;
            const std::size_t LI = run.spec.model.input_len, LP = run.spec.model.horizon;
            const std::size_t start = std::max(f.val_end, LI);
            if (start + LP > f.length()) throw ExperimentError("test split too short for a forecast window");
            const Tensor window = slice_steps(f.values, start - LI, LI);
            const Tensor pred = run.model.predict(window);
            for (std::size_t c = 0; c < std::min<std::size_t>(3, f.channels()); ++c) {
                ComparisonResult::Forecast fc;
                fc.dataset = run.result.dataset;
                fc.variant = v;
                fc.channel = c;
                for (std::size_t t = 0; t < LI; ++t) fc.history.push_back(window(c, t));
                for (std::size_t j = 0; j < LP; ++j) {
                    fc.truth.push_back(f.values(c, start + j));
                    fc.forecast.push_back(pred(c, j));
                }
                out.forecasts.push_back(std::move(fc));
            }
            out.rows.push_back(std::move(run.result));
        }
    }
    return out;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out.precision(10);
    return out;
}

}  // namespace

void write_results(const std::vector<RunResult>& rows, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto csv = open_out(dir / "results.csv");
    csv << "name,dataset,setting,variant,protocol,horizon,channels,mse,mae,test_windows,parameters,"
           "context_tokens_pre,context_tokens_post,steps,best_step,early_stopped,wall_seconds\n";
    json all = json::array();
    for (const auto& r : rows) {
        csv << r.name << ',' << r.dataset << ',' << r.setting << ',' << to_string(r.variant) << ','
            << to_string(r.protocol) << ',' << r.horizon << ',' << r.channels << ',' << r.test.mse << ','
            << r.test.mae << ',' << r.test.windows << ',' << r.parameters << ',' << r.context_pre << ','
            << r.context_post << ',' << r.steps << ',' << r.best_step << ',' << (r.early_stopped ? 1 : 0) << ','
            << r.wall_seconds << '\n';
        all.push_back(to_json(r));
    }
    if (!csv) throw Error("write failed for results.csv");
    auto js = open_out(dir / "results.json");
    js << all.dump(2) << '\n';
}

void write_ablation_table(const std::vector<RunResult>& rows, const std::filesystem::path& path) {
    std::vector<std::string> settings;
    std::map<std::pair<std::string, std::size_t>, std::map<std::string, const RunResult*>> cells;
    std::vector<std::pair<std::string, std::size_t>> keys;
    for (const auto& r : rows) {
        if (std::find(settings.begin(), settings.end(), r.setting) == settings.end()) settings.push_back(r.setting);
        const auto key = std::make_pair(r.dataset, r.horizon);
        if (!cells.count(key)) keys.push_back(key);
        cells[key][r.setting] = &r;
    }
    auto out = open_out(path);
    out << "dataset,horizon";
    for (const auto& s : settings) out << ',' << s << "_mse," << s << "_mae";
    out << '\n';
    for (const auto& key : keys) {
        out << key.first << ',' << key.second;
        for (const auto& s : settings) {
            const auto it = cells[key].find(s);
            if (it == cells[key].end()) out << ",,";
            else out << ',' << it->second->test.mse << ',' << it->second->test.mae;
        }
        out << '\n';
    }
}

void write_comparison(const ComparisonResult& result, const std::filesystem::path& dir) {
    write_results(result.rows, dir);
    auto curves = open_out(dir / "loss_curves.csv");
    curves << "dataset,variant,step,train_loss,val_mse,test_mse,test_mae\n";
    for (const auto& r : result.rows)
        for (const auto& h : r.history)
            curves << r.dataset << ',' << to_string(r.variant) << ',' << h.step << ',' << h.train_loss << ','
                   << h.val_mse << ',' << h.test_mse << ',' << h.test_mae << '\n';

    auto fc = open_out(dir / "forecasts.csv");
    fc << "dataset,variant,channel,t,value,forecast\n";
    for (const auto& f : result.forecasts) {
        const auto LI = static_cast<long>(f.history.size());
        for (long t = 0; t < LI; ++t)
            fc << f.dataset << ',' << to_string(f.variant) << ',' << f.channel << ',' << t - LI << ','
               << f.history[static_cast<std::size_t>(t)] << ",\n";
        for (std::size_t j = 0; j < f.truth.size(); ++j)
            fc << f.dataset << ',' << to_string(f.variant) << ',' << f.channel << ',' << j << ',' << f.truth[j]
               << ',' << f.forecast[j] << '\n';
    }
}

}  // namespace ictsp
