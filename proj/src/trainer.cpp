#include "twoch/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "twoch/errors.hpp"
#include "twoch/ops.hpp"

namespace twoch::train {

namespace {

// Order-independent mean: sorting first makes the sum bit-identical under
// any permutation of the inputs.
double stable_mean(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double total = 0.0;
    for (double v : values) total += v;
    return total / static_cast<double>(values.size());
}

std::vector<std::vector<double>> snapshot(std::span<const Tensor> params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.emplace_back(p.data().begin(), p.data().end());
    return out;
}

void restore(std::span<Tensor> params, const std::vector<std::vector<double>>& values) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::copy(values[i].begin(), values[i].end(), params[i].mutable_data().begin());
    }
}

struct WindowErrors {
    std::string action;
    std::vector<double> per_frame;  // Euler-MSE for every future frame
};

EvalReport aggregate(const std::vector<WindowErrors>& errors, std::size_t horizon, std::size_t param_count) {
    if (errors.empty()) throw Error("evaluation needs at least one window");
    std::vector<std::size_t> horizons;
    for (auto ms : kHorizonsMs) {
        if (horizon_frame(ms) <= horizon) horizons.push_back(ms);
    }
    auto score = [&](const std::string& name, const std::vector<const WindowErrors*>& group) {
        ActionScores s;
        s.action = name;
        s.windows = group.size();
        for (auto ms : horizons) {
            const std::size_t frame = horizon_frame(ms);
            std::vector<double> values;
            values.reserve(group.size());
            for (const auto* w : group) values.push_back(w->per_frame[frame - 1]);
            s.scores.push_back({ms, frame, stable_mean(std::move(values))});
        }
        return s;
    };
    std::map<std::string, std::vector<const WindowErrors*>> by_action;
    std::vector<const WindowErrors*> all;
    for (const auto& e : errors) {
        by_action[e.action].push_back(&e);
        all.push_back(&e);
    }
    EvalReport report;
    for (const auto& [name, group] : by_action) report.actions.push_back(score(name, group));
    report.overall = score("overall", all);
    report.param_count = param_count;
    return report;
}

void check_windows(const TwoChannelTransformer& model, const std::vector<MotionWindow>& windows) {
    if (windows.empty()) throw Error("evaluation needs at least one window");
    const auto& c = model.config();
    for (const auto& w : windows) {
        if (w.prefix_len != c.prefix_len || w.horizon != c.horizon) {
            throw DimensionError("window N/T' (" + std::to_string(w.prefix_len) + "/" + std::to_string(w.horizon) +
                                 ") does not match the model (" + std::to_string(c.prefix_len) + "/" +
                                 std::to_string(c.horizon) + ")");
        }
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
    if (batch < 1) throw ConfigError("train: batch size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("train: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("train: eps must be > 0");
}

Tensor loss_fn(const Tensor& pred, const MotionWindow& window, bool horizon_weighting) {
    const std::size_t n = window.prefix_len, t_future = window.horizon;
    if (pred.ndim() != 2 || pred.rows() != n + t_future || pred.cols() != window.target.cols() ||
        window.target.rows() != t_future) {
        throw DimensionError("loss_fn: prediction " + ad::shape_string(pred.shape()) + " does not match window " +
                             std::to_string(n + t_future) + "x" + std::to_string(window.target.cols()));
    }
    const Tensor future = ad::slice_rows(pred, n, n + t_future);
    const Tensor target = Tensor::from_matrix(window.target);
    if (!horizon_weighting) return ad::mse(future, target);

    const std::size_t p = window.target.cols();
    std::vector<double> weights(t_future * p);
    for (std::size_t k = 0; k < t_future; ++k) {
        const double w = 2.0 * static_cast<double>(k + 1) / static_cast<double>(t_future + 1);
        std::fill_n(weights.begin() + static_cast<std::ptrdiff_t>(k * p), p, w);
    }
    const Tensor diff = ad::sub(future, target);
    const Tensor weighted = ad::mul(ad::mul(diff, diff), Tensor({t_future, p}, std::move(weights)));
    return ad::scale(ad::sum(weighted), 1.0 / static_cast<double>(t_future * p));
}

AdamStepReport adam_step(std::span<Tensor> params, AdamState& state, const TrainConfig& config) {
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), {});
        state.v.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), 0.0);
            state.v[i].assign(params[i].numel(), 0.0);
        }
    }
    AdamStepReport report;
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
    }
    report.grad_norm = std::sqrt(sq);
    if (!std::isfinite(report.grad_norm)) throw NumericError("adam_step: non-finite gradient, step aborted");
    if (config.clip_norm > 0.0 && report.grad_norm > config.clip_norm) {
        report.clip_scale = config.clip_norm / report.grad_norm;
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].mutable_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const bool has = params[i].has_grad();
        const auto grad = params[i].grad();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = has ? grad[j] * report.clip_scale : 0.0;
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            values[j] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
        }
    }
    return report;
}

TrainResult train_loop(TwoChannelTransformer& model, const std::vector<MotionWindow>& windows,
                       const TrainConfig& config, const TrainHooks& hooks) {
    config.validate();
    TrainResult result;
    if (config.epochs == 0) {
        if (hooks.on_checkpoint) hooks.on_checkpoint(0, model);
        return result;
    }
    if (windows.empty()) throw Error("train_loop: empty dataset");

    auto params = model.parameters();
    for (auto& p : params) p.set_requires_grad(true);
    AdamState state;
    std::mt19937_64 shuffle_rng(config.seed);
    std::mt19937_64 dropout_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);

    auto last_good = snapshot(params);
    if (hooks.on_checkpoint) hooks.on_checkpoint(0, model);
    auto& tape = ad::Tape::current();

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch) {
            if (config.max_steps && result.steps >= config.max_steps) break;
            const std::size_t end = std::min(order.size(), start + config.batch);
            for (auto& p : params) p.zero_grad();
            tape.clear();
            try {
                model::ForwardOptions opts;
                opts.training = true;
                opts.rng = &dropout_rng;
                Tensor total;
                for (std::size_t i = start; i < end; ++i) {
                    const auto& w = windows[order[i]];
                    const Tensor pred = model.forward(Tensor::from_matrix(w.input), opts);
                    const Tensor loss = loss_fn(pred, w, config.horizon_weighting);
                    total = total.defined() ? ad::add(total, loss) : loss;
                }
                const Tensor batch_loss = ad::scale(total, 1.0 / static_cast<double>(end - start));
                const double value = batch_loss.item();
                if (!std::isfinite(value)) throw NumericError("non-finite loss");
                ad::backward(batch_loss);
                adam_step(params, state, config);
                result.loss_curve.push_back(value);
                if (hooks.on_step) hooks.on_step(result.steps, value);
                ++result.steps;
            } catch (const NumericError& e) {
                tape.clear();
                restore(params, last_good);
                result.halted = true;
                result.message = std::string("training halted at step ") + std::to_string(result.steps) + ": " +
                                 e.what() + "; parameters restored to the last checkpoint";
                return result;
            }
        }
        last_good = snapshot(params);
        if (hooks.on_checkpoint) hooks.on_checkpoint(epoch, model);
        if (config.max_steps && result.steps >= config.max_steps) break;
    }
    for (auto& p : params) p.zero_grad();
    return result;
}

double mean_loss(const TwoChannelTransformer& model, const std::vector<MotionWindow>& windows,
                 bool horizon_weighting) {
    if (windows.empty()) throw Error("mean_loss: no windows");
    ad::NoGradGuard guard;
    double total = 0.0;
    for (const auto& w : windows) {
        total += loss_fn(model.forward(Tensor::from_matrix(w.input)), w, horizon_weighting).item();
    }
    return total / static_cast<double>(windows.size());
}

std::size_t horizon_frame(std::size_t horizon_ms) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(horizon_ms) * kEvalFps / 1000.0));
}

EvalReport evaluate_mse_horizons(const TwoChannelTransformer& model, const std::vector<MotionWindow>& windows,
                                 const kinematics::EulerMseOptions& options) {
    check_windows(model, windows);
    std::vector<WindowErrors> errors;
    errors.reserve(windows.size());
    const auto& c = model.config();
    for (const auto& w : windows) {
        const Matrix pred = model.predict(w.input).slice_rows(c.prefix_len, c.total_len());
        errors.push_back({w.action, kinematics::euler_mse(w.target, pred, options)});
    }
    return aggregate(errors, c.horizon, model.param_count());
}

EvalReport occlusion_eval(const TwoChannelTransformer& model, const std::vector<MotionWindow>& windows,
                          const occlusion::OcclusionSpec& spec, occlusion::RecoveryStrategy strategy,
                          const kinematics::EulerMseOptions& options) {
    check_windows(model, windows);
    spec.validate();
    const auto& c = model.config();
    std::vector<WindowErrors> errors;
    std::vector<double> recon;
    errors.reserve(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto& w = windows[i];
        const Matrix prefix = w.prefix();
        occlusion::OcclusionSpec window_spec = spec;
        window_spec.seed = spec.seed + i;
        const auto mask = occlusion::generate(window_spec, prefix.rows(), prefix.cols());
        const Matrix corrupted = occlusion::apply_mask(prefix, mask);
        Matrix recovered;
        switch (strategy) {
            case occlusion::RecoveryStrategy::linear_interp:
                recovered = occlusion::recover_linear_interp(corrupted, mask);
                break;
            case occlusion::RecoveryStrategy::short_term:
                if (!w.has_history()) throw RecoveryError("short-term recovery needs windows with history");
                recovered = occlusion::recover_short_term(w.history, corrupted, mask, model);
                break;
            case occlusion::RecoveryStrategy::autoregressive:
                recovered = occlusion::recover_autoregressive(corrupted, mask, model);
                break;
        }
        double sq = 0.0;
        for (std::size_t k = 0; k < prefix.size(); ++k) {
            const double d = recovered.values()[k] - prefix.values()[k];
            sq += d * d;
        }
        recon.push_back(sq / static_cast<double>(prefix.size()));
        const Matrix padded = dataset::build_padded_input(recovered, c.horizon);
        const Matrix pred = model.predict(padded).slice_rows(c.prefix_len, c.total_len());
        errors.push_back({w.action, kinematics::euler_mse(w.target, pred, options)});
    }
    auto report = aggregate(errors, c.horizon, model.param_count());
    report.reconstruction_mse = stable_mean(std::move(recon));
    return report;
}

LatencyStats benchmark_inference(const TwoChannelTransformer& model, std::size_t reps, std::size_t warmup) {
    if (reps < 100) throw ConfigError("benchmark_inference: need at least 100 timed repetitions");
    const auto& c = model.config();
    const auto seqs = dataset::synth_generate(12345, 1, c.prefix_len, c.params,
                                              kEvalFps);
    Matrix prefix = seqs.front().frames;
    const Matrix padded = dataset::build_padded_input(prefix, c.horizon);
    for (std::size_t i = 0; i < warmup; ++i) (void)model.predict(padded);

    std::vector<double> times;
    times.reserve(reps);
    const std::size_t calls_before = model.forward_calls();
    for (std::size_t i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const Matrix out = model.predict(padded);
        const auto t1 = std::chrono::steady_clock::now();
        if (out.rows() != c.total_len()) throw Error("benchmark_inference: unexpected output shape");
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    LatencyStats stats;
    stats.reps = reps;
    stats.calls_per_prediction =
        static_cast<double>(model.forward_calls() - calls_before) / static_cast<double>(reps);
    stats.mean_ms = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(reps);
    std::sort(times.begin(), times.end());
    auto quantile = [&](double q) {
        const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(reps))) - 1;
        return times[std::min(idx, reps - 1)];
    };
    stats.p50_ms = quantile(0.50);
    stats.p95_ms = quantile(0.95);
    return stats;
}

std::string report_to_json(const EvalReport& report) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["param_count"] = report.param_count;
    j["latency_ms_mean"] = report.latency ? ordered_json(report.latency->mean_ms) : ordered_json(nullptr);
    if (report.latency) {
        j["latency"] = {{"reps", report.latency->reps},
                        {"mean_ms", report.latency->mean_ms},
                        {"p50_ms", report.latency->p50_ms},
                        {"p95_ms", report.latency->p95_ms},
                        {"calls_per_prediction", report.latency->calls_per_prediction}};
    }
    if (report.reconstruction_mse) j["reconstruction_mse"] = *report.reconstruction_mse;
    auto rows = ordered_json::array();
    auto emit = [&](const ActionScores& a) {
        for (const auto& s : a.scores) {
            rows.push_back({{"action", a.action}, {"horizon_ms", s.horizon_ms}, {"frame", s.frame}, {"mse", s.mse},
                            {"windows", a.windows}});
        }
    };
    for (const auto& a : report.actions) emit(a);
    emit(report.overall);
    j["results"] = rows;
    j["config"] = report.config;
    return j.dump(2) + "\n";
}

std::string loss_curve_csv(const std::vector<double>& losses) {
    std::ostringstream out;
    out.precision(17);
    out << "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
    return out.str();
}

}  // namespace twoch::train
