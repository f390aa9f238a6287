// Command-line front end: data generation, training, evaluation, ablations,
// the three-architecture comparison, attention export and counting.

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ictsp/config_io.hpp"
#include "ictsp/errors.hpp"
#include "ictsp/experiments.hpp"

using namespace ictsp;
using nlohmann::json;

namespace {

struct SpecOptions {
    std::string preset = "multi-small";
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string data_csv;
    bool data_has_date = false;
    std::optional<std::string> variant;
    std::optional<std::string> protocol;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> horizon;
    std::optional<double> lr;
    std::optional<std::size_t> batch;
    std::optional<std::size_t> linear_warmup;
    std::optional<std::size_t> mask_visible;
    std::string transfer_csv;
};

void add_spec_options(CLI::App* cmd, SpecOptions& o) {
    cmd->add_option("--preset", o.preset, "named base spec")->capture_default_str();
    cmd->add_option("--config", o.config, "JSON run spec applied on top of the preset");
    cmd->add_option("--seed", o.seed, "training and initialization seed");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--data", o.data_csv, "CSV file replacing the preset's data source");
    cmd->add_flag("--date-column", o.data_has_date, "the CSV's first column is a date");
    cmd->add_option("--variant", o.variant, "ictsp | series_wise | temporal_wise");
    cmd->add_option("--protocol", o.protocol, "full | few10 | few5 | zeroshot");
    cmd->add_option("--steps", o.steps, "max training steps");
    cmd->add_option("--horizon", o.horizon, "forecast horizon L_P");
    cmd->add_option("--lr", o.lr, "peak learning rate");
    cmd->add_option("--batch", o.batch, "batch size");
    cmd->add_option("--linear-warmup", o.linear_warmup, "steps W that train only the projections");
    cmd->add_option("--mask-visible", o.mask_visible, "zero test inputs older than this many steps");
    cmd->add_option("--transfer", o.transfer_csv, "CSV evaluated under the zeroshot protocol");
}

RunSpec resolve(const SpecOptions& o) {
    RunSpec s = preset(o.preset);
    if (!o.config.empty()) s = load_run_spec(o.config, s);
    if (o.seed) s.train.seed = *o.seed;
    if (!o.out.empty()) s.out = o.out;
    if (!o.data_csv.empty()) {
        s.data.kind = "csv";
        s.data.path = o.data_csv;
        s.data.has_date = o.data_has_date;
    }
    if (!o.transfer_csv.empty()) {
        DataSource t;
        t.kind = "csv";
        t.path = o.transfer_csv;
        t.has_date = o.data_has_date;
        s.transfer = t;
    }
    if (o.variant) s.model.variant = parse_variant(*o.variant);
    if (o.protocol) s.protocol = parse_protocol(*o.protocol);
    if (o.steps) {
        s.train.max_steps = *o.steps;
        s.train.lr_warmup = std::min(s.train.lr_warmup, *o.steps / 2);
    }
    if (o.horizon) {
        s.model.horizon = *o.horizon;
        s.horizons.clear();
    }
    if (o.lr) s.train.lr_peak = *o.lr;
    if (o.batch) s.train.batch_size = *o.batch;
    if (o.linear_warmup) s.train.linear_warmup = *o.linear_warmup;
    if (o.mask_visible) s.mask_visible = *o.mask_visible;
    return s;
}

RunHooks progress_hooks() {
    RunHooks h;
    h.on_eval = [](const RunSpec& spec, const HistoryRow& r) {
        std::cerr << spec.name << " " << to_string(spec.model.variant) << " L_P=" << spec.model.horizon
                  << " step " << r.step << " lr " << r.lr << " train " << r.train_loss << " val_mse " << r.val_mse;
        if (!std::isnan(r.test_mse)) std::cerr << " test_mse " << r.test_mse;
        std::cerr << '\n';
    };
    return h;
}

void print_rows(const std::vector<RunResult>& rows) {
    json j = json::array();
    for (const auto& r : rows) {
        json row = to_json(r);
        row.erase("history");
        row.erase("config");
        j.push_back(row);
    }
    std::cout << j.dump(2) << '\n';
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const IngestError*>(&e)) return 3;
    if (dynamic_cast<const ShapeError*>(&e) || dynamic_cast<const CapacityError*>(&e)) return 4;
    if (dynamic_cast<const TrainingError*>(&e)) return 5;
    if (dynamic_cast<const ExperimentError*>(&e)) return 6;
    if (dynamic_cast<const CheckpointError*>(&e)) return 7;
    return 1;
}

const char* error_kind(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const IngestError*>(&e)) return "ingest";
    if (dynamic_cast<const ShapeError*>(&e)) return "shape";
    if (dynamic_cast<const CapacityError*>(&e)) return "capacity";
    if (dynamic_cast<const TrainingError*>(&e)) return "training";
    if (dynamic_cast<const ExperimentError*>(&e)) return "experiment";
    if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
    return "internal";
}

// Window ending at the first test step unless an explicit start is given.
Tensor pick_window(const SeriesFrame& f, std::size_t input_len, std::optional<std::size_t> start) {
    const std::size_t s = start ? *start : std::max(f.val_end, input_len) - input_len;
    if (s + input_len > f.length())
        throw ConfigError("window [" + std::to_string(s) + ", " + std::to_string(s + input_len) +
                          ") exceeds the series length " + std::to_string(f.length()));
    return slice_steps(f.values, s, input_len);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"In-context time series predictor: training and analysis tools"};
    app.require_subcommand(1);
    std::string command;

    // generate-data
    auto* gen = app.add_subcommand("generate-data", "write a synthetic dataset as CSV");
    std::string gen_kind = "multi", gen_out;
    std::size_t gen_len = 20000, gen_comb = 4, gen_channels = 8;
    std::vector<std::size_t> gen_shifts = {24, 48, 96};
    std::uint64_t gen_seed = 2024;
    double gen_phi = 0.9;
    gen->add_option("--kind", gen_kind, "multi | noise | walk")->capture_default_str();
    gen->add_option("--length", gen_len)->capture_default_str();
    gen->add_option("--shifts", gen_shifts)->delimiter(',');
    gen->add_option("--combinations", gen_comb)->capture_default_str();
    gen->add_option("--channels", gen_channels, "noise channels")->capture_default_str();
    gen->add_option("--phi", gen_phi, "noise AR(1) coefficient")->capture_default_str();
    gen->add_option("--seed", gen_seed)->capture_default_str();
    gen->add_option("--out", gen_out, "CSV path")->required();

    SpecOptions train_opt, eval_opt, ablate_opt, count_opt, attn_opt;

    auto* train = app.add_subcommand("train", "train and test one spec (every configured horizon)");
    add_spec_options(train, train_opt);

    auto* evalc = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset split");
    add_spec_options(evalc, eval_opt);
    std::string eval_ckpt, eval_split = "test";
    std::size_t eval_stride = 1;
    evalc->add_option("--checkpoint", eval_ckpt)->required();
    evalc->add_option("--split", eval_split, "val | test")->capture_default_str();
    evalc->add_option("--stride", eval_stride)->capture_default_str();

    auto* abl = app.add_subcommand("ablate", "context / retrieval / sampling-step ablations");
    add_spec_options(abl, ablate_opt);
    std::vector<std::string> abl_settings;
    abl->add_option("--settings", abl_settings, "subset of full,no_context,no_tr,m1,m64,m256")->delimiter(',');

    auto* cmp = app.add_subcommand("compare-architectures", "train the three token layouts on two datasets");
    std::string cmp_multi = "multi-small", cmp_noise = "noise-small", cmp_out = "compare";
    std::vector<std::string> cmp_configs, cmp_variants;
    std::optional<std::size_t> cmp_steps;
    std::optional<std::uint64_t> cmp_seed;
    cmp->add_option("--preset", cmp_multi, "preset for the strongly dependent dataset")->capture_default_str();
    cmp->add_option("--noise-preset", cmp_noise, "preset for the weakly dependent dataset")->capture_default_str();
    cmp->add_option("--config", cmp_configs, "JSON run specs replacing both presets");
    cmp->add_option("--variants", cmp_variants, "subset of ictsp,series_wise,temporal_wise")->delimiter(',');
    cmp->add_option("--steps", cmp_steps);
    cmp->add_option("--seed", cmp_seed);
    cmp->add_option("--out", cmp_out)->capture_default_str();

    auto* attn = app.add_subcommand("export-attention", "dump per-layer attention maps for one window");
    add_spec_options(attn, attn_opt);
    std::string attn_ckpt;
    std::optional<std::size_t> attn_start;
    attn->add_option("--checkpoint", attn_ckpt, "trained model (default: untrained preset model)");
    attn->add_option("--window-start", attn_start, "first step of the input window");

    auto* cnt = app.add_subcommand("count", "token and parameter counts for a spec");
    add_spec_options(cnt, count_opt);
    std::optional<std::size_t> cnt_channels;
    cnt->add_option("--channels", cnt_channels, "channel count C (default: the data source's)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*gen) {
            command = "generate-data";
            SeriesFrame f;
            if (gen_kind == "multi") f = gen_multi(MultiSpec{gen_len, gen_shifts, gen_comb, gen_seed}).frame;
            else if (gen_kind == "noise") f = gen_channels_independent(gen_len, gen_channels, gen_seed, gen_phi);
            else if (gen_kind == "walk") f = gen_random_walk(gen_len, gen_seed);
            else throw ConfigError("unknown --kind '" + gen_kind + "' (expected multi, noise or walk)");
            write_csv(f, gen_out);
            std::cout << json{{"out", gen_out}, {"channels", f.channels()}, {"length", f.length()}}.dump() << '\n';
        } else if (*train) {
            command = "train";
            RunSpec s = resolve(train_opt);
            if (s.out.empty()) s.out = "runs/" + s.name;
            print_rows(run_experiment(s, progress_hooks()));
        } else if (*evalc) {
            command = "evaluate";
            const RunSpec s = resolve(eval_opt);
            const Model model = load_checkpoint(eval_ckpt);
            SeriesFrame f = split_standardize(load_source(s.data));
            EvalOptions eo;
            eo.stride = eval_stride;
            eo.mask_visible = s.mask_visible;
            Split split;
            if (eval_split == "test") split = Split::test;
            else if (eval_split == "val") split = Split::val;
            else throw ConfigError("--split must be val or test");
            const Metrics m = evaluate(model, f, split, eo);
            std::cout << json{{"split", eval_split}, {"mse", m.mse}, {"mae", m.mae}, {"windows", m.windows},
                              {"variant", to_string(model.config().variant)}, {"channels", f.channels()}}
                             .dump(2)
                      << '\n';
        } else if (*abl) {
            command = "ablate";
            RunSpec s = resolve(ablate_opt);
            if (s.out.empty()) s.out = "runs/" + s.name + "_ablation";
            std::vector<Ablation> settings;
            for (const auto& n : abl_settings) settings.push_back(parse_ablation(n));
            if (settings.empty()) settings = all_ablations();
            print_rows(run_ablation(s, settings, progress_hooks()));
        } else if (*cmp) {
            command = "compare-architectures";
            std::vector<RunSpec> specs;
            if (cmp_configs.empty()) {
                specs = {preset(cmp_multi), preset(cmp_noise)};
            } else {
                for (const auto& c : cmp_configs) specs.push_back(load_run_spec(c));
            }
            for (auto& s : specs) {
                if (cmp_steps) {
                    s.train.max_steps = *cmp_steps;
                    s.train.lr_warmup = std::min(s.train.lr_warmup, *cmp_steps / 2);
                }
                if (cmp_seed) s.train.seed = *cmp_seed;
                s.out = cmp_out;
                s.save_checkpoints = false;
            }
            std::vector<Variant> variants;
            for (const auto& v : cmp_variants) variants.push_back(parse_variant(v));
            if (variants.empty()) variants = {Variant::temporal_wise, Variant::series_wise, Variant::ictsp};
            const auto res = run_architecture_comparison(specs, variants, progress_hooks());
            write_comparison(res, cmp_out);
            print_rows(res.rows);
        } else if (*attn) {
            command = "export-attention";
            RunSpec s = resolve(attn_opt);
            const Model model = attn_ckpt.empty() ? Model(s.model, s.train.seed) : load_checkpoint(attn_ckpt);
            SeriesFrame f = split_standardize(load_source(s.data));
            const Tensor window = pick_window(f, model.config().input_len, attn_start);
            const auto records = model.attention(window);
            const std::filesystem::path dir = s.out.empty() ? std::filesystem::path("attention") : s.out;
            std::filesystem::create_directories(dir);
            export_attention(records, dir);
            std::cout << json{{"out", dir.string()}, {"layers", records.size()},
                              {"tokens", records.empty() ? 0 : records.front().weights.rows()}}
                             .dump()
                      << '\n';
        } else if (*cnt) {
            command = "count";
            RunSpec s = resolve(count_opt);
            std::size_t C = cnt_channels ? *cnt_channels : 0;
            if (!cnt_channels) {
                if (s.data.kind == "multi") C = s.data.multi.channels();
                else if (s.data.kind == "noise") C = s.data.channels;
                else C = load_source(s.data).channels();
            }
            if (s.model.variant == Variant::temporal_wise && s.model.channels == 0) s.model.channels = C;
            s.model.validate();
            const auto& m = s.model;
            const auto counts = count_context_tokens(m.input_len, m.lookback, m.horizon, m.sample_step, C,
                                                     m.retrieval.keep_fraction, m.retrieval.merged);
            json j{{"variant", to_string(m.variant)},
                   {"channels", C},
                   {"parameters", expected_parameter_count(m)},
                   {"token_width", m.token_width()}};
            if (m.variant == Variant::ictsp) {
                const std::size_t pre = m.use_context ? counts.pre_retrieval : 0;
                const std::size_t post = m.use_context ? (m.retrieval.enabled ? counts.post_retrieval : pre) : 0;
                j["context_tokens_pre_retrieval"] = pre;
                j["context_tokens_post_retrieval"] = post;
                j["tokens"] = post + C;
            } else if (m.variant == Variant::series_wise) {
                j["tokens"] = C;
            } else {
                j["tokens"] = m.input_len + m.horizon;
            }
            std::cout << j.dump(2) << '\n';
        }
    } catch (const std::exception& e) {
        json diag{{"status", "error"}, {"command", command}, {"kind", error_kind(e)}, {"message", e.what()}};
        std::cerr << diag.dump() << '\n';
        return exit_code(e);
    }
    return EXIT_SUCCESS;
}
