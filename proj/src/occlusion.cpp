#include "twoch/occlusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "twoch/errors.hpp"

namespace twoch::occlusion {

namespace {

void require_shape(const Matrix& m, const OcclusionMask& mask, const char* op) {
    if (m.rows() != mask.frames() || m.cols() != mask.params()) {
        throw DimensionError(std::string(op) + ": matrix " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                             " vs mask " + std::to_string(mask.frames()) + "x" + std::to_string(mask.params()));
    }
}

// Observed cells from truth, occluded cells from fill.
Matrix merge(const Matrix& truth, const Matrix& fill, const OcclusionMask& mask) {
    Matrix out = truth;
    for (std::size_t f = 0; f < mask.frames(); ++f) {
        for (std::size_t p = 0; p < mask.params(); ++p) {
            if (!mask.observed(f, p)) out(f, p) = fill(f, p);
        }
    }
    return out;
}

std::size_t first_occluded_frame(const OcclusionMask& mask) {
    for (std::size_t f = 0; f < mask.frames(); ++f) {
        for (std::size_t p = 0; p < mask.params(); ++p) {
            if (!mask.observed(f, p)) return f;
        }
    }
    return mask.frames();
}

}  // namespace

OcclusionMask::OcclusionMask(std::size_t frames, std::size_t params, bool observed, double ratio_requested)
    : frames_(frames), params_(params), ratio_requested_(ratio_requested), cells_(frames * params, observed ? 1 : 0) {}

std::size_t OcclusionMask::occluded_count() const {
    return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{0}));
}

double OcclusionMask::occluded_fraction() const {
    return cells_.empty() ? 0.0 : static_cast<double>(occluded_count()) / static_cast<double>(cells_.size());
}

void OcclusionSpec::validate() const {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("occlusion: ratio must lie in [0, 1]");
    if (!(mean_duration_frames >= 1.0)) throw ConfigError("occlusion: mean duration must be >= 1 frame");
}

OcclusionKind parse_kind(const std::string& name) {
    if (name == "time_consistent") return OcclusionKind::time_consistent;
    if (name == "joint_dropout") return OcclusionKind::joint_dropout;
    throw ConfigError("unknown occlusion kind '" + name + "' (time_consistent | joint_dropout)");
}

RecoveryStrategy parse_strategy(const std::string& name) {
    if (name == "linear_interp") return RecoveryStrategy::linear_interp;
    if (name == "short_term") return RecoveryStrategy::short_term;
    if (name == "autoregressive") return RecoveryStrategy::autoregressive;
    throw ConfigError("unknown recovery strategy '" + name + "' (linear_interp | short_term | autoregressive)");
}

std::string to_string(OcclusionKind kind) {
    return kind == OcclusionKind::time_consistent ? "time_consistent" : "joint_dropout";
}

std::string to_string(RecoveryStrategy strategy) {
    switch (strategy) {
        case RecoveryStrategy::linear_interp: return "linear_interp";
        case RecoveryStrategy::short_term: return "short_term";
        case RecoveryStrategy::autoregressive: return "autoregressive";
    }
    return "unknown";
}

OcclusionMask gen_time_consistent(const OcclusionSpec& spec, std::size_t frames, std::size_t params) {
    spec.validate();
    OcclusionMask mask(frames, params, true, spec.ratio);
    const std::size_t cells = frames * params;
    if (cells == 0 || spec.ratio == 0.0) return mask;

    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<std::size_t> pick_frame(0, frames - 1);
    std::uniform_int_distribution<std::size_t> pick_param(0, params - 1);
    std::exponential_distribution<double> duration(1.0 / spec.mean_duration_frames);
    std::size_t occluded = 0;
    while (static_cast<double>(occluded) / static_cast<double>(cells) < spec.ratio) {
        const std::size_t f0 = pick_frame(rng);
        const std::size_t p = pick_param(rng);
        const auto len = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(duration(rng))));
        const std::size_t f1 = std::min(frames, f0 + len);
        for (std::size_t f = f0; f < f1; ++f) {
            if (mask.observed(f, p)) {
                mask.set_observed(f, p, false);
                ++occluded;
            }
        }
    }
    return mask;
}

OcclusionMask gen_joint_dropout(const OcclusionSpec& spec, std::size_t frames, std::size_t params) {
    spec.validate();
    if (params % 3 != 0) throw ConfigError("joint_dropout: parameter count must be a multiple of 3");
    const std::size_t joints = params / 3;
    const auto dropped = static_cast<std::size_t>(std::llround(spec.ratio * static_cast<double>(joints)));
    if (dropped > joints) {
        throw ConfigError("joint_dropout: " + std::to_string(dropped) + " joints requested, only " +
                          std::to_string(joints) + " exist");
    }
    std::vector<std::size_t> order(joints);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);

    OcclusionMask mask(frames, params, true, spec.ratio);
    for (std::size_t j = 0; j < dropped; ++j) {
        for (std::size_t f = 0; f < frames; ++f) {
            for (std::size_t k = 0; k < 3; ++k) mask.set_observed(f, order[j] * 3 + k, false);
        }
    }
    return mask;
}

OcclusionMask generate(const OcclusionSpec& spec, std::size_t frames, std::size_t params) {
    return spec.kind == OcclusionKind::time_consistent ? gen_time_consistent(spec, frames, params)
                                                       : gen_joint_dropout(spec, frames, params);
}

Matrix apply_mask(const Matrix& prefix, const OcclusionMask& mask) {
    require_shape(prefix, mask, "apply_mask");
    Matrix out = prefix;
    for (std::size_t f = 0; f < mask.frames(); ++f) {
        for (std::size_t p = 0; p < mask.params(); ++p) {
            if (!mask.observed(f, p)) out(f, p) = kOccludedFill;
        }
    }
    return out;
}

Matrix recover_linear_interp(const Matrix& corrupted, const OcclusionMask& mask) {
    require_shape(corrupted, mask, "recover_linear_interp");
    Matrix out = corrupted;
    const std::size_t frames = mask.frames();
    std::vector<std::size_t> seen;
    for (std::size_t p = 0; p < mask.params(); ++p) {
        seen.clear();
        for (std::size_t f = 0; f < frames; ++f) {
            if (mask.observed(f, p)) seen.push_back(f);
        }
        if (seen.empty()) {
            throw RecoveryError("linear interpolation cannot recover parameter " + std::to_string(p) +
                                ": occluded for the whole window; use a model-based strategy");
        }
        if (seen.size() == frames) continue;
        std::size_t next = 0;  // index into seen of the first observed frame >= f
        for (std::size_t f = 0; f < frames; ++f) {
            while (next < seen.size() && seen[next] < f) ++next;
            if (mask.observed(f, p)) continue;
            if (next == 0) {
                out(f, p) = corrupted(seen.front(), p);
            } else if (next == seen.size()) {
                out(f, p) = corrupted(seen.back(), p);
            } else {
                const std::size_t a = seen[next - 1], b = seen[next];
                const double t = static_cast<double>(f - a) / static_cast<double>(b - a);
                out(f, p) = corrupted(a, p) + t * (corrupted(b, p) - corrupted(a, p));
            }
        }
    }
    return out;
}

Matrix recover_short_term(const Matrix& history, const Matrix& corrupted, const OcclusionMask& mask,
                          const model::TwoChannelTransformer& model) {
    require_shape(corrupted, mask, "recover_short_term");
    const auto& cfg = model.config();
    if (cfg.horizon < corrupted.rows()) {
        throw RecoveryError("short-term recovery needs a model horizon >= " + std::to_string(corrupted.rows()) +
                            " frames, model has " + std::to_string(cfg.horizon));
    }
    if (history.rows() != cfg.prefix_len || history.cols() != corrupted.cols()) {
        throw DimensionError("recover_short_term: history must be N x P = " + std::to_string(cfg.prefix_len) + "x" +
                             std::to_string(corrupted.cols()));
    }
    if (!mask.any_occluded()) return corrupted;
    const Matrix forecast = model.forecast(history).slice_rows(0, corrupted.rows());
    return merge(corrupted, forecast, mask);
}

std::size_t autoregressive_calls(const OcclusionMask& mask) {
    const std::size_t first = first_occluded_frame(mask);
    if (first == mask.frames()) return 0;
    const std::size_t start = std::max<std::size_t>(first, 1);
    return (mask.frames() - start + kAutoregressiveStep - 1) / kAutoregressiveStep;
}

Matrix recover_autoregressive(const Matrix& corrupted, const OcclusionMask& mask,
                              const model::TwoChannelTransformer& model) {
    require_shape(corrupted, mask, "recover_autoregressive");
    const std::size_t frames = mask.frames();
    const std::size_t first = first_occluded_frame(mask);
    if (first == frames) return corrupted;

    const auto& cfg = model.config();
    if (cfg.horizon < kAutoregressiveStep) {
        throw RecoveryError("autoregressive recovery needs a model horizon >= " + std::to_string(kAutoregressiveStep));
    }
    Matrix out = corrupted;
    for (std::size_t p = 0; p < mask.params(); ++p) {
        if (mask.observed(0, p)) continue;
        for (std::size_t f = 1; f < frames; ++f) {
            if (mask.observed(f, p)) {
                out(0, p) = corrupted(f, p);
                break;
            }
        }
    }

    const std::size_t n = cfg.prefix_len;
    Matrix context(n, out.cols());
    for (std::size_t k = std::max<std::size_t>(first, 1); k < frames; k += kAutoregressiveStep) {
        // Last min(k, N) reconstructed frames, left-padded with the earliest of them.
        const std::size_t avail = std::min(k, n);
        const std::size_t pad = n - avail;
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t src = r < pad ? k - avail : k - avail + (r - pad);
            std::copy_n(out.row(src).begin(), out.cols(), context.row(r).begin());
        }
        const Matrix forecast = model.forecast(context);
        const std::size_t steps = std::min(kAutoregressiveStep, frames - k);
        for (std::size_t s = 0; s < steps; ++s) {
            for (std::size_t p = 0; p < mask.params(); ++p) {
                if (!mask.observed(k + s, p)) out(k + s, p) = forecast(s, p);
            }
        }
    }
    return out;
}

std::string mask_to_csv(const OcclusionMask& mask) {
    std::string s;
    s.reserve(mask.frames() * (2 * mask.params()));
    for (std::size_t f = 0; f < mask.frames(); ++f) {
        for (std::size_t p = 0; p < mask.params(); ++p) {
            if (p) s += ',';
            s += mask.observed(f, p) ? '1' : '0';
        }
        s += '\n';
    }
    return s;
}

void save_mask_csv(const std::filesystem::path& path, const OcclusionMask& mask) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write mask file " + path.string());
    out << mask_to_csv(mask);
}

}  // namespace twoch::occlusion
