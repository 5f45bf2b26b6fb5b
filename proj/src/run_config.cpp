#include "twoch/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "twoch/errors.hpp"

namespace twoch::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = first + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) {
        throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
    }
    return value;
}

std::set<std::size_t> parse_index_set(const RunConfig& config, const std::string& key) {
    std::set<std::size_t> out;
    for (const auto& item : config.get_list(key)) out.insert(parse_number<std::size_t>(key, item));
    return out;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"seed", "0", "seed for synthesis, initialization, shuffling, dropout and occlusion"},
        {"out", "out", "output directory"},
        {"checkpoint", "", "checkpoint path (train writes <out>/model.ckpt when empty; "
                           "eval/bench use a fresh model when empty)"},
        {"input", "", "motion CSV read by predict"},

        {"data.root", "data", "dataset root holding <subject>/<action>.csv"},
        {"data.subjects", "", "comma-separated subject filter (empty = all)"},
        {"data.actions", "", "comma-separated action filter (empty = all)"},
        {"data.fps", "25", "frame rate of the stored files"},
        {"data.downsample", "1", "keep every k-th frame after loading"},
        {"data.N", "10", "observed prefix length in frames"},
        {"data.horizon", "25", "forecast horizon T' in frames"},
        {"data.stride", "5", "training window stride in frames"},

        {"synth.count", "8", "number of synthetic sequences"},
        {"synth.frames", "200", "frames per synthetic sequence"},
        {"synth.params", "99", "parameters per frame (multiple of 3)"},
        {"synth.fps", "25", "synthetic frame rate"},

        {"model.P", "99", "parameters per frame"},
        {"model.D", "160", "embedding width"},
        {"model.H", "8", "attention heads"},
        {"model.L", "4", "blocks per channel"},
        {"model.ffn_mult", "4", "feed-forward width multiplier"},
        {"model.dropout", "0.1", "dropout rate during training"},
        {"model.scale_by_head_dim", "false", "scale logits by sqrt(D/H) instead of sqrt(D)"},
        {"model.ln_eps", "1e-05", "layer-norm epsilon"},

        {"train.epochs", "10", "training epochs"},
        {"train.batch", "8", "windows per optimizer step"},
        {"train.lr", "0.001", "learning rate"},
        {"train.beta1", "0.9", "first-moment decay"},
        {"train.beta2", "0.999", "second-moment decay"},
        {"train.eps", "1e-08", "optimizer epsilon"},
        {"train.clip_norm", "1", "global gradient-norm clip (<= 0 disables)"},
        {"train.max_steps", "0", "stop after this many steps (0 = no cap)"},
        {"train.horizon_weighting", "false", "weight later future frames more in the loss"},

        {"eval.stride", "25", "evaluation window stride in frames"},
        {"eval.exclude", "", "comma-separated parameter indices left out of the score"},
        {"eval.translation", "", "comma-separated parameter indices scored as translations"},

        {"occl.kind", "none", "none | time_consistent | joint_dropout"},
        {"occl.ratio", "0", "occlusion ratio in [0, 1]"},
        {"occl.mean_duration", "3", "mean occlusion run length in frames (time_consistent)"},
        {"occl.strategy", "linear_interp", "linear_interp | short_term | autoregressive"},

        {"bench.reps", "100", "timed predictions (>= 100)"},
        {"bench.warmup", "10", "untimed warm-up predictions"},
    };
    return keys;
}

RunConfig::RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = trim(value);
}

void RunConfig::set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        try {
            set_assignment(line);
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    load_text(buf.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

std::size_t RunConfig::get_size(const std::string& key) const { return parse_number<std::size_t>(key, get(key)); }

std::uint64_t RunConfig::get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }

double RunConfig::get_double(const std::string& key) const {
    const double v = parse_number<double>(key, get(key));
    if (!std::isfinite(v)) throw ConfigError("config key '" + key + "' must be finite");
    return v;
}

bool RunConfig::get_bool(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(get(key));
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string RunConfig::to_text() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
    return s;
}

dataset::DatasetSpec RunConfig::dataset_spec() const {
    dataset::DatasetSpec spec;
    spec.root = get("data.root");
    spec.subjects = get_list("data.subjects");
    spec.actions = get_list("data.actions");
    spec.prefix_len = get_size("data.N");
    spec.horizon = get_size("data.horizon");
    spec.stride = get_size("data.stride");
    spec.downsample = get_size("data.downsample");
    spec.validate();
    return spec;
}

model::ModelConfig RunConfig::model_config() const {
    model::ModelConfig c;
    c.params = get_size("model.P");
    c.prefix_len = get_size("data.N");
    c.horizon = get_size("data.horizon");
    c.d_model = get_size("model.D");
    c.heads = get_size("model.H");
    c.layers = get_size("model.L");
    c.ffn_mult = get_size("model.ffn_mult");
    c.dropout = get_double("model.dropout");
    c.scale_by_head_dim = get_bool("model.scale_by_head_dim");
    c.ln_eps = get_double("model.ln_eps");
    c.validate();
    return c;
}

train::TrainConfig RunConfig::train_config() const {
    train::TrainConfig c;
    c.epochs = get_size("train.epochs");
    c.batch = get_size("train.batch");
    c.lr = get_double("train.lr");
    c.beta1 = get_double("train.beta1");
    c.beta2 = get_double("train.beta2");
    c.eps = get_double("train.eps");
    c.seed = get_u64("seed");
    c.clip_norm = get_double("train.clip_norm");
    c.max_steps = get_size("train.max_steps");
    c.horizon_weighting = get_bool("train.horizon_weighting");
    c.validate();
    return c;
}

kinematics::EulerMseOptions RunConfig::euler_options() const {
    kinematics::EulerMseOptions o;
    o.exclude = parse_index_set(*this, "eval.exclude");
    o.translation = parse_index_set(*this, "eval.translation");
    return o;
}

bool RunConfig::occlusion_enabled() const {
    const auto& kind = get("occl.kind");
    if (kind == "none") return false;
    (void)occlusion::parse_kind(kind);
    return true;
}

occlusion::OcclusionSpec RunConfig::occlusion_spec() const {
    occlusion::OcclusionSpec s;
    s.kind = occlusion::parse_kind(get("occl.kind"));
    s.ratio = get_double("occl.ratio");
    s.mean_duration_frames = get_double("occl.mean_duration");
    s.seed = get_u64("seed");
    s.validate();
    return s;
}

occlusion::RecoveryStrategy RunConfig::recovery_strategy() const {
    return occlusion::parse_strategy(get("occl.strategy"));
}

}  // namespace twoch::cli
