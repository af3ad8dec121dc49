#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "asl/trainer.hpp"

namespace asl {

// One CLI invocation, fully resolved. Precedence: flag > config file > default.
struct RunConfig {
    std::string command;  // generate | train | eval | ablate | sweep | summarize

    // dataset: "synthetic" or a directory holding manifest.csv + attributes.txt
    std::string data = "synthetic";
    int num_classes = 20;
    int samples_per_class = 40;
    int attr_count = 16;
    int image_size = 32;
    int train_classes = 12;
    double attribute_jitter = 0.5;
    double patch_amplitude = 0.35;
    double pixel_noise = 0.02;
    double brightness_jitter = 0.05;

    TrainConfig train;

    std::string out_dir = "run_out";
    std::string checkpoint;   // eval input
    std::string sweep_axis;   // "alpha" | "kernels"
    std::vector<std::string> summarize_dirs;

    void validate() const;
};

int run(const RunConfig& config);

// `key = value` config file; '#' starts a comment; unknown keys are errors
void apply_config_file(RunConfig& config, const std::string& path);
void apply_key(RunConfig& config, const std::string& key, const std::string& value);

nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

nlohmann::json metrics_to_json(const MetricsReport& report, const RunConfig& config);

std::vector<int> parse_kernel_list(const std::string& csv);
AblationFlags parse_ablation_list(const std::string& csv);

const std::vector<double>& alpha_sweep_values();
const std::vector<std::vector<int>>& kernel_sweep_sets();

}  // namespace asl
