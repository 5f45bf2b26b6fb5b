#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "twoch/matrix.hpp"

namespace twoch::dataset {

// F x P frames of skeleton parameters (axis-angle triples, global rotation
// first) sampled at fps.
struct MotionSequence {
    Matrix frames;
    double fps = 25.0;
    std::string subject;
    std::string action;

    std::size_t num_frames() const { return frames.rows(); }
    std::size_t num_params() const { return frames.cols(); }
};

// One training/evaluation example. input is the T x P padded prefix, target
// the T' ground-truth future frames. history, when present, holds the N
// frames immediately before the prefix.
struct MotionWindow {
    Matrix input;
    Matrix target;
    Matrix history;
    std::size_t prefix_len = 0;  // N
    std::size_t horizon = 0;     // T'
    std::string action;

    std::size_t total_len() const { return prefix_len + horizon; }
    bool has_history() const { return !history.empty(); }
    Matrix prefix() const { return input.slice_rows(0, prefix_len); }
};

struct DatasetSpec {
    std::filesystem::path root;
    std::vector<std::string> subjects;  // empty = all
    std::vector<std::string> actions;   // empty = all
    std::size_t prefix_len = 10;
    std::size_t horizon = 25;
    std::size_t stride = 5;
    std::size_t downsample = 1;
    // When true every window also carries the prefix_len frames before it,
    // so windows start at prefix_len instead of 0.
    bool with_history = false;

    void validate() const;
};

// Parses a headerless comma-separated motion file, one frame per line.
MotionSequence load_csv_sequence(const std::filesystem::path& path, double fps = 50.0);

// Loads root/subject/action.csv files passing the subject/action filters, sorted
// by subject then action.
std::vector<MotionSequence> load_directory(const DatasetSpec& spec, double fps = 50.0);

void save_csv_sequence(const std::filesystem::path& path, const Matrix& frames);

// Keeps frames 0, factor, 2*factor, ...
MotionSequence downsample(const MotionSequence& seq, std::size_t factor);

// Copies the N prefix rows and repeats the last one horizon times.
Matrix build_padded_input(const Matrix& prefix, std::size_t horizon);

std::vector<MotionWindow> window_split(const MotionSequence& seq, const DatasetSpec& spec);

// Smooth sinusoidal motion: every parameter is a*sin(w*t + phi) with
// a <= 0.8 rad and w in [0.5, 4] rad/s, drawn per sequence from seed.
struct SynthParams {
    std::vector<double> amplitude;
    std::vector<double> omega;
    std::vector<double> phase;
};

inline constexpr double kSynthMaxAmplitude = 0.8;
inline constexpr double kSynthMinOmega = 0.5;
inline constexpr double kSynthMaxOmega = 4.0;

std::vector<MotionSequence> synth_generate(std::uint64_t seed, std::size_t count, std::size_t frames,
                                           std::size_t params, double fps,
                                           std::vector<SynthParams>* generators = nullptr);

}  // namespace twoch::dataset
