#include "twoch/commands.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "twoch/checkpoint.hpp"
#include "twoch/errors.hpp"

namespace twoch::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed for " + path.string());
}

fs::path out_dir(const RunConfig& config) { return fs::path(config.get("out")); }

// The checkpoint fixes the model shape; reflect that in the echoed config.
void adopt_model_config(RunConfig& config, const model::ModelConfig& c) {
    config.set("model.P", std::to_string(c.params));
    config.set("data.N", std::to_string(c.prefix_len));
    config.set("data.horizon", std::to_string(c.horizon));
    config.set("model.D", std::to_string(c.d_model));
    config.set("model.H", std::to_string(c.heads));
    config.set("model.L", std::to_string(c.layers));
    config.set("model.ffn_mult", std::to_string(c.ffn_mult));
    std::ostringstream dropout, eps;
    dropout << std::setprecision(17) << c.dropout;
    eps << std::setprecision(17) << c.ln_eps;
    config.set("model.dropout", dropout.str());
    config.set("model.ln_eps", eps.str());
    config.set("model.scale_by_head_dim", c.scale_by_head_dim ? "true" : "false");
}

model::TwoChannelTransformer load_or_init(RunConfig& config, std::ostream& log) {
    const auto& path = config.get("checkpoint");
    if (path.empty()) {
        log << "no checkpoint given, using a freshly initialized model\n";
        return model::TwoChannelTransformer::init(config.model_config(), config.get_u64("seed"));
    }
    auto m = model::load_checkpoint(path);
    adopt_model_config(config, m.config());
    return m;
}

std::vector<dataset::MotionWindow> load_windows(const RunConfig& config, const model::ModelConfig& mc,
                                                const std::string& stride_key, bool with_history) {
    auto spec = config.dataset_spec();
    spec.stride = config.get_size(stride_key);
    spec.prefix_len = mc.prefix_len;
    spec.horizon = mc.horizon;
    spec.with_history = with_history;
    const auto sequences = dataset::load_directory(spec, config.get_double("data.fps"));
    if (sequences.empty()) throw Error("no motion files under " + spec.root.string());
    std::vector<dataset::MotionWindow> windows;
    for (const auto& raw : sequences) {
        const auto seq = dataset::downsample(raw, spec.downsample);
        if (seq.num_params() != mc.params) {
            throw DimensionError(raw.subject + "/" + raw.action + " has " + std::to_string(seq.num_params()) +
                                 " parameters per frame, model expects " + std::to_string(mc.params));
        }
        auto ws = dataset::window_split(seq, spec);
        windows.insert(windows.end(), std::make_move_iterator(ws.begin()), std::make_move_iterator(ws.end()));
    }
    if (windows.empty()) throw Error("sequences under " + spec.root.string() + " are too short for any window");
    return windows;
}

void print_scores(const train::EvalReport& report, std::ostream& log) {
    log << "param_count " << report.param_count << "\n";
    if (report.reconstruction_mse) log << "reconstruction_mse " << *report.reconstruction_mse << "\n";
    log << std::left << std::setw(16) << "action";
    for (const auto& s : report.overall.scores) log << std::setw(12) << (std::to_string(s.horizon_ms) + "ms");
    log << "\n";
    auto row = [&](const train::ActionScores& a) {
        log << std::setw(16) << a.action;
        for (const auto& s : a.scores) log << std::setw(12) << std::setprecision(5) << s.mse;
        log << "\n";
    };
    for (const auto& a : report.actions) row(a);
    row(report.overall);
}

}  // namespace

std::vector<fs::path> cmd_synth(const RunConfig& config, std::ostream& log) {
    const auto count = config.get_size("synth.count");
    std::vector<fs::path> written;
    if (count == 0) return written;
    const auto dir = out_dir(config) / "synth";
    const auto seqs = dataset::synth_generate(config.get_u64("seed"), count, config.get_size("synth.frames"),
                                              config.get_size("synth.params"), config.get_double("synth.fps"));
    for (std::size_t k = 0; k < seqs.size(); ++k) {
        const auto path = dir / ("seq" + std::to_string(k) + ".csv");
        dataset::save_csv_sequence(path, seqs[k].frames);
        written.push_back(path);
    }
    write_text(out_dir(config) / "synth_config.txt", config.to_text());
    log << "wrote " << written.size() << " sequences to " << dir.string() << "\n";
    return written;
}

train::TrainResult cmd_train(const RunConfig& config, std::ostream& log) {
    const auto mc = config.model_config();
    const auto tc = config.train_config();
    const auto windows = load_windows(config, mc, "data.stride", false);
    auto model = model::TwoChannelTransformer::init(mc, tc.seed);
    const fs::path ckpt =
        config.get("checkpoint").empty() ? out_dir(config) / "model.ckpt" : fs::path(config.get("checkpoint"));
    if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
    write_text(out_dir(config) / "train_config.txt", config.to_text());
    log << windows.size() << " windows, " << model.param_count() << " parameters\n";

    train::TrainHooks hooks;
    hooks.on_checkpoint = [&](std::size_t epoch, const model::TwoChannelTransformer& m) {
        model::save_checkpoint(ckpt, m);
        if (epoch > 0) log << "epoch " << epoch << " checkpoint " << ckpt.string() << "\n";
    };
    auto result = train::train_loop(model, windows, tc, hooks);
    write_text(out_dir(config) / "loss.csv", train::loss_curve_csv(result.loss_curve));
    if (!result.loss_curve.empty()) {
        log << "steps " << result.steps << ", loss " << result.loss_curve.front() << " -> "
            << result.loss_curve.back() << "\n";
    }
    if (result.halted) log << result.message << "\n";
    return result;
}

fs::path cmd_predict(const RunConfig& config, std::ostream& log) {
    RunConfig resolved = config;
    const auto model = load_or_init(resolved, log);
    const auto& mc = model.config();
    const auto& input = resolved.get("input");
    if (input.empty()) throw ConfigError("predict needs an input motion file (--input or input=)");
    const auto seq =
        dataset::downsample(dataset::load_csv_sequence(input, resolved.get_double("data.fps")),
                            resolved.get_size("data.downsample"));
    if (seq.num_frames() < mc.prefix_len) {
        throw DimensionError("input has " + std::to_string(seq.num_frames()) + " frames; need at least N=" +
                             std::to_string(mc.prefix_len));
    }
    if (seq.num_params() != mc.params) {
        throw DimensionError("input has " + std::to_string(seq.num_params()) + " parameters per frame, model expects " +
                             std::to_string(mc.params));
    }
    const Matrix prefix = seq.frames.slice_rows(seq.num_frames() - mc.prefix_len, seq.num_frames());
    const Matrix future = model.forecast(prefix);
    const auto path = out_dir(resolved) / "prediction.csv";
    dataset::save_csv_sequence(path, future);
    write_text(out_dir(resolved) / "predict_config.txt", resolved.to_text());
    log << "wrote " << future.rows() << " frames to " << path.string() << "\n";
    return path;
}

train::EvalReport cmd_eval(const RunConfig& config, std::ostream& log) {
    RunConfig resolved = config;
    const auto model = load_or_init(resolved, log);
    const auto options = resolved.euler_options();
    train::EvalReport report;
    if (resolved.occlusion_enabled()) {
        const auto spec = resolved.occlusion_spec();
        const auto strategy = resolved.recovery_strategy();
        const auto windows =
            load_windows(resolved, model.config(), "eval.stride", strategy == occlusion::RecoveryStrategy::short_term);
        report = train::occlusion_eval(model, windows, spec, strategy, options);
    } else {
        const auto windows = load_windows(resolved, model.config(), "eval.stride", false);
        report = train::evaluate_mse_horizons(model, windows, options);
    }
    report.config = resolved.values();
    write_text(out_dir(resolved) / "report.json", train::report_to_json(report));
    print_scores(report, log);
    return report;
}

train::EvalReport cmd_bench(const RunConfig& config, std::ostream& log) {
    RunConfig resolved = config;
    const auto model = load_or_init(resolved, log);
    train::EvalReport report;
    report.param_count = model.param_count();
    report.latency = train::benchmark_inference(model, resolved.get_size("bench.reps"),
                                                resolved.get_size("bench.warmup"));
    report.config = resolved.values();
    write_text(out_dir(resolved) / "bench.json", train::report_to_json(report));
    const auto& l = *report.latency;
    log << "param_count " << report.param_count << "\n"
        << "reps " << l.reps << "  mean " << l.mean_ms << " ms  p50 " << l.p50_ms << " ms  p95 " << l.p95_ms
        << " ms  calls/prediction " << l.calls_per_prediction << "\n";
    return report;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Two-channel transformer for skeleton motion forecasting"};
    app.require_subcommand(0, 1);
    bool list_keys = false;
    app.add_flag("--list-keys", list_keys, "Print every config key with its default and exit");

    std::string config_path;
    std::vector<std::string> assignments;
    std::optional<std::uint64_t> seed;
    std::string out_path, checkpoint, input;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value config file");
        sub->add_option("--set", assignments, "Override one key (repeatable, later wins)")->allow_extra_args(false);
        sub->add_option("--seed", seed, "Shorthand for --set seed=INT");
        sub->add_option("--out", out_path, "Shorthand for --set out=DIR");
    };
    auto* synth = app.add_subcommand("synth", "Write seeded synthetic motion files");
    auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint and loss curve");
    auto* predict = app.add_subcommand("predict", "Forecast the frames following a motion file");
    auto* eval = app.add_subcommand("eval", "Score horizon-wise Euler-angle error on a dataset");
    auto* bench = app.add_subcommand("bench", "Time single predictions");
    for (auto* sub : {synth, train_cmd, predict, eval, bench}) common(sub);
    for (auto* sub : {train_cmd, predict, eval, bench}) {
        sub->add_option("--checkpoint", checkpoint, "Shorthand for --set checkpoint=PATH");
    }
    predict->add_option("--input", input, "Shorthand for --set input=PATH");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }
    if (list_keys) {
        for (const auto& k : config_keys()) {
            out << k.name << " = " << k.default_value << "    # " << k.help << "\n";
        }
        return kExitOk;
    }
    if (app.get_subcommands().empty()) {
        err << app.help();
        return kExitUsage;
    }

    RunConfig config;
    try {
        if (!config_path.empty()) config.load_file(config_path);
        for (const auto& a : assignments) config.set_assignment(a);
        if (seed) config.set("seed", std::to_string(*seed));
        if (!out_path.empty()) config.set("out", out_path);
        if (!checkpoint.empty()) config.set("checkpoint", checkpoint);
        if (!input.empty()) config.set("input", input);

        if (synth->parsed()) {
            cmd_synth(config, out);
        } else if (train_cmd->parsed()) {
            if (cmd_train(config, out).halted) return kExitRuntime;
        } else if (predict->parsed()) {
            cmd_predict(config, out);
        } else if (eval->parsed()) {
            cmd_eval(config, out);
        } else if (bench->parsed()) {
            cmd_bench(config, out);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace twoch::cli
