#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "twoch/matrix.hpp"
#include "twoch/model.hpp"

namespace twoch::occlusion {

// Frames x parameters grid; true = observed.
class OcclusionMask {
public:
    OcclusionMask() = default;
    OcclusionMask(std::size_t frames, std::size_t params, bool observed, double ratio_requested = 0.0);

    std::size_t frames() const { return frames_; }
    std::size_t params() const { return params_; }
    double ratio_requested() const { return ratio_requested_; }

    bool observed(std::size_t f, std::size_t p) const { return cells_[f * params_ + p] != 0; }
    void set_observed(std::size_t f, std::size_t p, bool value) { cells_[f * params_ + p] = value ? 1 : 0; }

    std::size_t occluded_count() const;
    double occluded_fraction() const;
    bool any_occluded() const { return occluded_count() > 0; }

    friend bool operator==(const OcclusionMask&, const OcclusionMask&) = default;

private:
    std::size_t frames_ = 0;
    std::size_t params_ = 0;
    double ratio_requested_ = 0.0;
    std::vector<std::uint8_t> cells_;
};

enum class OcclusionKind { time_consistent, joint_dropout };

struct OcclusionSpec {
    OcclusionKind kind = OcclusionKind::time_consistent;
    double ratio = 0.0;
    double mean_duration_frames = 3.0;  // time_consistent only
    std::uint64_t seed = 0;

    void validate() const;
};

enum class RecoveryStrategy { linear_interp, short_term, autoregressive };

OcclusionKind parse_kind(const std::string& name);
RecoveryStrategy parse_strategy(const std::string& name);
std::string to_string(OcclusionKind kind);
std::string to_string(RecoveryStrategy strategy);

// Per-parameter missing runs: events start at uniform random cells, last
// ceil(Exp(mean)) frames (clipped at the window end), and are added until the
// occluded fraction reaches the requested ratio.
OcclusionMask gen_time_consistent(const OcclusionSpec& spec, std::size_t frames, std::size_t params);

// round(ratio * P / 3) whole joints occluded for every frame.
OcclusionMask gen_joint_dropout(const OcclusionSpec& spec, std::size_t frames, std::size_t params);

OcclusionMask generate(const OcclusionSpec& spec, std::size_t frames, std::size_t params);

inline constexpr double kOccludedFill = 0.0;

// Occluded cells become kOccludedFill; observed cells are untouched.
Matrix apply_mask(const Matrix& prefix, const OcclusionMask& mask);

// Linear interpolation in time between the nearest observed frames; runs at
// either end hold the nearest observed value. Throws RecoveryError when a
// parameter has no observed frame.
Matrix recover_linear_interp(const Matrix& corrupted, const OcclusionMask& mask);

// Forecasts the window from the clean history window that precedes it. Needs
// a model horizon of at least N frames.
Matrix recover_short_term(const Matrix& history, const Matrix& corrupted, const OcclusionMask& mask,
                          const model::TwoChannelTransformer& model);

inline constexpr std::size_t kAutoregressiveStep = 2;  // 80 ms at 25 fps

// Sweeps forward kAutoregressiveStep frames per model call, starting at the
// first occluded frame (never before frame 1). Occluded cells of frame 0 hold
// the first observed value of their parameter. Each call sees the
// reconstruction so far, left-padded with its first row to N frames.
Matrix recover_autoregressive(const Matrix& corrupted, const OcclusionMask& mask,
                              const model::TwoChannelTransformer& model);

// Number of model calls recover_autoregressive makes for this mask.
std::size_t autoregressive_calls(const OcclusionMask& mask);

// 0/1 grid, one frame per line.
std::string mask_to_csv(const OcclusionMask& mask);
void save_mask_csv(const std::filesystem::path& path, const OcclusionMask& mask);

}  // namespace twoch::occlusion
