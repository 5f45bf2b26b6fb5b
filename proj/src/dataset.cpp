#include "twoch/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "twoch/errors.hpp"

namespace twoch::dataset {

namespace fs = std::filesystem;

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

bool accepted(const std::vector<std::string>& filter, const std::string& value) {
    return filter.empty() || std::find(filter.begin(), filter.end(), value) != filter.end();
}

}  // namespace

void DatasetSpec::validate() const {
    if (prefix_len < 1) throw ConfigError("dataset: prefix length N must be >= 1");
    if (horizon < 1) throw ConfigError("dataset: horizon T' must be >= 1");
    if (stride < 1) throw ConfigError("dataset: window stride must be >= 1");
    if (downsample < 1) throw ConfigError("dataset: downsample factor must be >= 1");
}

MotionSequence load_csv_sequence(const fs::path& path, double fps) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open motion file " + path.string());

    std::vector<double> values;
    std::size_t params = 0;
    std::size_t frames = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (std::all_of(line.begin(), line.end(), is_space)) continue;

        std::size_t fields = 0;
        std::size_t pos = 0;
        while (true) {
            const std::size_t comma = line.find(',', pos);
            const std::size_t end = comma == std::string::npos ? line.size() : comma;
            std::size_t b = pos, e = end;
            while (b < e && is_space(line[b])) ++b;
            while (e > b && is_space(line[e - 1])) --e;
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(line.data() + b, line.data() + e, v);
            if (b == e || ec != std::errc() || ptr != line.data() + e || !std::isfinite(v)) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) + ":" + std::to_string(b + 1) +
                                 ": invalid number '" + line.substr(b, e - b) + "' in field " +
                                 std::to_string(fields + 1));
            }
            values.push_back(v);
            ++fields;
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (frames == 0) {
            params = fields;
        } else if (fields != params) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(params) +
                             " fields, found " + std::to_string(fields));
        }
        ++frames;
    }
    if (frames == 0) throw ParseError(path.string() + ": no frames");

    MotionSequence seq;
    seq.frames = Matrix(frames, params, std::move(values));
    seq.fps = fps;
    seq.action = path.stem().string();
    if (path.has_parent_path()) seq.subject = path.parent_path().filename().string();
    return seq;
}

std::vector<MotionSequence> load_directory(const DatasetSpec& spec, double fps) {
    if (!fs::is_directory(spec.root)) throw ParseError("data directory not found: " + spec.root.string());
    std::vector<fs::path> files;
    for (const auto& subject_dir : fs::directory_iterator(spec.root)) {
        if (!subject_dir.is_directory()) continue;
        if (!accepted(spec.subjects, subject_dir.path().filename().string())) continue;
        for (const auto& entry : fs::directory_iterator(subject_dir.path())) {
            if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
            if (!accepted(spec.actions, entry.path().stem().string())) continue;
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<MotionSequence> out;
    out.reserve(files.size());
    for (const auto& f : files) out.push_back(load_csv_sequence(f, fps));
    return out;
}

void save_csv_sequence(const fs::path& path, const Matrix& frames) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write motion file " + path.string());
    char buf[64];
    for (std::size_t r = 0; r < frames.rows(); ++r) {
        for (std::size_t c = 0; c < frames.cols(); ++c) {
            if (c) out.put(',');
            const auto res = std::to_chars(buf, buf + sizeof(buf), frames(r, c));
            out.write(buf, res.ptr - buf);
        }
        out.put('\n');
    }
    if (!out) throw Error("write failed for " + path.string());
}

MotionSequence downsample(const MotionSequence& seq, std::size_t factor) {
    if (factor < 1) throw ConfigError("downsample: factor must be >= 1");
    const std::size_t kept = (seq.num_frames() + factor - 1) / factor;
    MotionSequence out = seq;
    out.frames = Matrix(kept, seq.num_params());
    for (std::size_t i = 0; i < kept; ++i) {
        std::copy_n(seq.frames.row(i * factor).begin(), seq.num_params(), out.frames.row(i).begin());
    }
    out.fps = seq.fps / static_cast<double>(factor);
    return out;
}

Matrix build_padded_input(const Matrix& prefix, std::size_t horizon) {
    if (prefix.rows() < 1) throw DimensionError("build_padded_input: prefix needs at least one frame");
    const std::size_t n = prefix.rows();
    Matrix out(n + horizon, prefix.cols());
    std::copy(prefix.values().begin(), prefix.values().end(), out.values().begin());
    const auto last = prefix.row(n - 1);
    for (std::size_t r = n; r < n + horizon; ++r) std::copy(last.begin(), last.end(), out.row(r).begin());
    return out;
}

std::vector<MotionWindow> window_split(const MotionSequence& seq, const DatasetSpec& spec) {
    spec.validate();
    const std::size_t n = spec.prefix_len;
    const std::size_t total = n + spec.horizon;
    const std::size_t first = spec.with_history ? n : 0;
    std::vector<MotionWindow> out;
    for (std::size_t start = first; start + total <= seq.num_frames(); start += spec.stride) {
        MotionWindow w;
        w.prefix_len = n;
        w.horizon = spec.horizon;
        w.action = seq.action;
        w.input = build_padded_input(seq.frames.slice_rows(start, start + n), spec.horizon);
        w.target = seq.frames.slice_rows(start + n, start + total);
        if (spec.with_history) w.history = seq.frames.slice_rows(start - n, start);
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<MotionSequence> synth_generate(std::uint64_t seed, std::size_t count, std::size_t frames,
                                           std::size_t params, double fps, std::vector<SynthParams>* generators) {
    if (params % 3 != 0) throw ConfigError("synth_generate: parameter count must be a multiple of 3");
    if (frames < 1) throw ConfigError("synth_generate: need at least one frame");
    if (!(fps > 0.0)) throw ConfigError("synth_generate: fps must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> amp(0.0, kSynthMaxAmplitude);
    std::uniform_real_distribution<double> omega(kSynthMinOmega, kSynthMaxOmega);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

    std::vector<MotionSequence> out;
    out.reserve(count);
    if (generators) generators->clear();
    for (std::size_t s = 0; s < count; ++s) {
        SynthParams g;
        for (std::size_t p = 0; p < params; ++p) {
            g.amplitude.push_back(amp(rng));
            g.omega.push_back(omega(rng));
            g.phase.push_back(phase(rng));
        }
        MotionSequence seq;
        seq.frames = Matrix(frames, params);
        seq.fps = fps;
        seq.subject = "synth";
        std::ostringstream name;
        name << "seq" << s;
        seq.action = name.str();
        for (std::size_t f = 0; f < frames; ++f) {
            const double t = static_cast<double>(f) / fps;
            for (std::size_t p = 0; p < params; ++p) {
                seq.frames(f, p) = g.amplitude[p] * std::sin(g.omega[p] * t + g.phase[p]);
            }
        }
        out.push_back(std::move(seq));
        if (generators) generators->push_back(std::move(g));
    }
    return out;
}

}  // namespace twoch::dataset
