#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twoch/dataset.hpp"
#include "twoch/kinematics.hpp"
#include "twoch/model.hpp"
#include "twoch/occlusion.hpp"

namespace twoch::train {

using ad::Tensor;
using dataset::MotionWindow;
using model::TwoChannelTransformer;

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch = 8;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    double clip_norm = 1.0;  // <= 0 disables clipping
    // Weights future frame k (1-based) by 2k / (T' + 1), mean weight 1.
    bool horizon_weighting = false;
    std::size_t max_steps = 0;  // 0 = no cap

    void validate() const;
};

// Mean squared error over the T' future rows of pred against the window
// target; prefix rows never contribute.
Tensor loss_fn(const Tensor& pred, const MotionWindow& window, bool horizon_weighting = false);

struct AdamState {
    std::size_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

struct AdamStepReport {
    double grad_norm = 0.0;   // before clipping
    double clip_scale = 1.0;  // factor applied to every gradient
};

// Global-norm clipping followed by one bias-corrected Adam update from each
// parameter's gradient buffer. Throws NumericError (parameters untouched) if
// the gradient is not finite.
AdamStepReport adam_step(std::span<Tensor> params, AdamState& state, const TrainConfig& config);

struct TrainHooks {
    // After every step: global step index (0-based) and batch loss.
    std::function<void(std::size_t, double)> on_step;
    // After every completed epoch (and once before training starts, epoch 0).
    std::function<void(std::size_t, const TwoChannelTransformer&)> on_checkpoint;
};

struct TrainResult {
    std::vector<double> loss_curve;  // one entry per optimizer step
    std::size_t steps = 0;
    bool halted = false;  // non-finite loss; model restored to last checkpoint
    std::string message;
};

TrainResult train_loop(TwoChannelTransformer& model, const std::vector<MotionWindow>& windows,
                       const TrainConfig& config, const TrainHooks& hooks = {});

// Mean loss of the model over windows in inference mode.
double mean_loss(const TwoChannelTransformer& model, const std::vector<MotionWindow>& windows,
                 bool horizon_weighting = false);

inline constexpr std::array<std::size_t, 6> kHorizonsMs = {80, 160, 320, 400, 560, 1000};
inline constexpr double kEvalFps = 25.0;

// 80 -> 2, 160 -> 4, ..., 1000 -> 25 (1-based future frame at 25 fps).
std::size_t horizon_frame(std::size_t horizon_ms);

struct HorizonScore {
    std::size_t horizon_ms = 0;
    std::size_t frame = 0;
    double mse = 0.0;
};

struct ActionScores {
    std::string action;
    std::size_t windows = 0;
    std::vector<HorizonScore> scores;
};

struct LatencyStats {
    std::size_t reps = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    double calls_per_prediction = 0.0;
};

struct EvalReport {
    std::vector<ActionScores> actions;  // sorted by action name
    ActionScores overall;
    std::size_t param_count = 0;
    std::optional<LatencyStats> latency;
    std::optional<double> reconstruction_mse;  // occlusion runs only
    std::map<std::string, std::string> config;
};

EvalReport evaluate_mse_horizons(const TwoChannelTransformer& model, const std::vector<MotionWindow>& windows,
                                 const kinematics::EulerMseOptions& options = {});

// Window i is corrupted with spec.seed + i, recovered, padded and forecast.
EvalReport occlusion_eval(const TwoChannelTransformer& model, const std::vector<MotionWindow>& windows,
                          const occlusion::OcclusionSpec& spec, occlusion::RecoveryStrategy strategy,
                          const kinematics::EulerMseOptions& options = {});

// Times single forward passes (batch 1) after warm-up runs.
LatencyStats benchmark_inference(const TwoChannelTransformer& model, std::size_t reps, std::size_t warmup = 10);

std::string report_to_json(const EvalReport& report);

// Two-column CSV with header "step,loss".
std::string loss_curve_csv(const std::vector<double>& losses);

}  // namespace twoch::train
