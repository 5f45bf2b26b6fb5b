#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "twoch/dataset.hpp"
#include "twoch/kinematics.hpp"
#include "twoch/model.hpp"
#include "twoch/occlusion.hpp"
#include "twoch/trainer.hpp"

namespace twoch::cli {

struct ConfigKey {
    const char* name;
    const char* default_value;
    const char* help;
};

// Every accepted key with its default, in documentation order.
const std::vector<ConfigKey>& config_keys();

// Flat key=value settings. Starts from the defaults; unknown keys are
// rejected on every write.
class RunConfig {
public:
    RunConfig();

    void set(const std::string& key, const std::string& value);
    // "key=value"
    void set_assignment(const std::string& assignment);
    // Lines of key = value; '#' starts a comment.
    void load_file(const std::filesystem::path& path);
    void load_text(const std::string& text, const std::string& origin = "<text>");

    const std::string& get(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<std::string> get_list(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    // Resolved config as "key = value" lines, sorted by key.
    std::string to_text() const;

    dataset::DatasetSpec dataset_spec() const;
    model::ModelConfig model_config() const;
    train::TrainConfig train_config() const;
    kinematics::EulerMseOptions euler_options() const;
    // False when occl.kind is "none".
    bool occlusion_enabled() const;
    occlusion::OcclusionSpec occlusion_spec() const;
    occlusion::RecoveryStrategy recovery_strategy() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace twoch::cli
