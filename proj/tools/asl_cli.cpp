#include <CLI11.hpp>
#include <algorithm>
#include <iostream>
#include <string>
#include <vector>

#include "asl/runner.hpp"

namespace {

// Per-flag raw values; only flags the user actually passed override the
// config file, which in turn overrides defaults.
struct FlagSet {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;
};

void add_common_options(CLI::App* cmd, FlagSet& flags) {
    cmd->add_option("--config", flags.config_path, "key = value config file");
    static const char* keys[] = {
        "seed",    "out",        "n-way",  "m-shot",  "alpha",   "kernels",
        "ablate",  "tasks",      "q-per-class", "iterations", "lr", "lr-decay",
        "channels", "data",      "num-classes", "samples-per-class", "attr-count",
        "image-size", "train-classes", "checkpoint", "attribute-jitter",
        "patch-amplitude", "pixel-noise", "brightness-jitter"};
    for (const char* key : keys) {
        std::string config_key(key);
        std::replace(config_key.begin(), config_key.end(), '-', '_');
        if (config_key == "out") config_key = "out";
        cmd->add_option_function<std::string>(
            "--" + std::string(key),
            [&flags, config_key](const std::string& value) {
                flags.overrides.emplace_back(config_key, value);
            });
    }
}

asl::RunConfig resolve(const std::string& command, const FlagSet& flags) {
    asl::RunConfig config;
    config.command = command;
    if (!flags.config_path.empty()) asl::apply_config_file(config, flags.config_path);
    for (const auto& [key, value] : flags.overrides) asl::apply_key(config, key, value);
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Attribute-shaped few-shot recognition"};
    app.require_subcommand(1);

    FlagSet flags;
    std::string sweep_axis = "alpha";
    std::vector<std::string> summarize_dirs;

    CLI::App* generate = app.add_subcommand("generate", "materialize a synthetic corpus");
    CLI::App* train = app.add_subcommand("train", "episodic training + evaluation");
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    CLI::App* ablate = app.add_subcommand("ablate", "run the ablation table");
    CLI::App* sweep = app.add_subcommand("sweep", "alpha or kernel-set sweep");
    CLI::App* summarize = app.add_subcommand("summarize", "tabulate finished runs");
    for (CLI::App* cmd : {generate, train, eval, ablate, sweep, summarize})
        add_common_options(cmd, flags);
    sweep->add_option("--axis", sweep_axis, "alpha | kernels");
    summarize->add_option("dirs", summarize_dirs, "run directories")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        asl::RunConfig config = resolve(app.get_subcommands().front()->get_name(), flags);
        config.sweep_axis = config.command == "sweep" ? sweep_axis : "";
        config.summarize_dirs = summarize_dirs;
        return asl::run(config);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
