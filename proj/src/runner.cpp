#include "asl/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace asl {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
    static const std::vector<std::string> commands = {"generate", "train",    "eval",
                                                      "ablate",   "sweep",    "summarize"};
    if (std::find(commands.begin(), commands.end(), command) == commands.end())
        throw std::invalid_argument("unknown command: " + command);
    if (out_dir.empty()) throw std::invalid_argument("output directory must be set");
    if (command == "sweep" && sweep_axis != "alpha" && sweep_axis != "kernels")
        throw std::invalid_argument("sweep axis must be 'alpha' or 'kernels'");
    if (command == "eval" && checkpoint.empty())
        throw std::invalid_argument("eval requires a checkpoint path");
    if (command == "summarize" && summarize_dirs.empty())
        throw std::invalid_argument("summarize requires at least one run directory");
    train.validate();
}

std::vector<int> parse_kernel_list(const std::string& csv) {
    std::vector<int> kernels;
    std::istringstream in(csv);
    std::string tok;
    while (std::getline(in, tok, ','))
        if (!tok.empty()) kernels.push_back(std::stoi(tok));
    if (kernels.empty()) throw std::invalid_argument("empty kernel list");
    return kernels;
}

AblationFlags parse_ablation_list(const std::string& csv) {
    AblationFlags flags;
    std::istringstream in(csv);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        if (tok.empty() || tok == "none" || tok == "full") continue;
        if (tok == "no_vap") flags.no_vap = true;
        else if (tok == "no_cam") flags.no_cam = true;
        else if (tok == "no_psam") flags.no_psam = true;
        else if (tok == "zero_attributes") flags.zero_attributes = true;
        else if (tok == "no_attributes") flags.no_attributes = true;
        else if (tok == "protonets") flags.no_vap = flags.no_cam = flags.no_psam = true;
        else throw std::invalid_argument("unknown ablation flag: " + tok);
    }
    return flags;
}

void apply_key(RunConfig& config, const std::string& key, const std::string& value) {
    if (key == "data") config.data = value;
    else if (key == "out") config.out_dir = value;
    else if (key == "checkpoint") config.checkpoint = value;
    else if (key == "sweep_axis") config.sweep_axis = value;
    else if (key == "num_classes") config.num_classes = std::stoi(value);
    else if (key == "samples_per_class") config.samples_per_class = std::stoi(value);
    else if (key == "attr_count") config.attr_count = std::stoi(value);
    else if (key == "image_size") config.image_size = std::stoi(value);
    else if (key == "train_classes") config.train_classes = std::stoi(value);
    else if (key == "attribute_jitter") config.attribute_jitter = std::stod(value);
    else if (key == "patch_amplitude") config.patch_amplitude = std::stod(value);
    else if (key == "pixel_noise") config.pixel_noise = std::stod(value);
    else if (key == "brightness_jitter") config.brightness_jitter = std::stod(value);
    else if (key == "n_way") config.train.n_way = std::stoi(value);
    else if (key == "m_shot") config.train.m_shot = std::stoi(value);
    else if (key == "q_per_class") config.train.q_per_class = std::stoi(value);
    else if (key == "alpha") config.train.alpha = std::stod(value);
    else if (key == "lr") config.train.learning_rate = std::stod(value);
    else if (key == "lr_decay") config.train.lr_decay = std::stod(value);
    else if (key == "iterations") config.train.iterations = std::stoi(value);
    else if (key == "tasks") config.train.eval_tasks = std::stoi(value);
    else if (key == "seed") config.train.seed = std::stoull(value);
    else if (key == "channels") config.train.channels = std::stoi(value);
    else if (key == "kernels") config.train.kernels = parse_kernel_list(value);
    else if (key == "ablate") config.train.ablation = parse_ablation_list(value);
    else throw std::invalid_argument("unknown config field: " + key);
}

void apply_config_file(RunConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                throw std::runtime_error("malformed config line: " + line);
            continue;
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        apply_key(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

json run_config_to_json(const RunConfig& c) {
    return json{
        {"command", c.command},
        {"data", c.data},
        {"out", c.out_dir},
        {"checkpoint", c.checkpoint},
        {"sweep_axis", c.sweep_axis},
        {"num_classes", c.num_classes},
        {"samples_per_class", c.samples_per_class},
        {"attr_count", c.attr_count},
        {"image_size", c.image_size},
        {"train_classes", c.train_classes},
        {"attribute_jitter", c.attribute_jitter},
        {"patch_amplitude", c.patch_amplitude},
        {"pixel_noise", c.pixel_noise},
        {"brightness_jitter", c.brightness_jitter},
        {"n_way", c.train.n_way},
        {"m_shot", c.train.m_shot},
        {"q_per_class", c.train.q_per_class},
        {"alpha", c.train.alpha},
        {"lr", c.train.learning_rate},
        {"lr_decay", c.train.lr_decay},
        {"iterations", c.train.iterations},
        {"tasks", c.train.eval_tasks},
        {"seed", c.train.seed},
        {"channels", c.train.channels},
        {"kernels", c.train.kernels},
        {"ablation",
         {{"no_vap", c.train.ablation.no_vap},
          {"no_cam", c.train.ablation.no_cam},
          {"no_psam", c.train.ablation.no_psam},
          {"zero_attributes", c.train.ablation.zero_attributes},
          {"no_attributes", c.train.ablation.no_attributes}}},
    };
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    c.command = j.at("command").get<std::string>();
    c.data = j.at("data").get<std::string>();
    c.out_dir = j.at("out").get<std::string>();
    c.checkpoint = j.at("checkpoint").get<std::string>();
    c.sweep_axis = j.at("sweep_axis").get<std::string>();
    c.num_classes = j.at("num_classes").get<int>();
    c.samples_per_class = j.at("samples_per_class").get<int>();
    c.attr_count = j.at("attr_count").get<int>();
    c.image_size = j.at("image_size").get<int>();
    c.train_classes = j.at("train_classes").get<int>();
    c.attribute_jitter = j.at("attribute_jitter").get<double>();
    c.patch_amplitude = j.at("patch_amplitude").get<double>();
    c.pixel_noise = j.at("pixel_noise").get<double>();
    c.brightness_jitter = j.at("brightness_jitter").get<double>();
    c.train.n_way = j.at("n_way").get<int>();
    c.train.m_shot = j.at("m_shot").get<int>();
    c.train.q_per_class = j.at("q_per_class").get<int>();
    c.train.alpha = j.at("alpha").get<double>();
    c.train.learning_rate = j.at("lr").get<double>();
    c.train.lr_decay = j.at("lr_decay").get<double>();
    c.train.iterations = j.at("iterations").get<int>();
    c.train.eval_tasks = j.at("tasks").get<int>();
    c.train.seed = j.at("seed").get<std::uint64_t>();
    c.train.channels = j.at("channels").get<int>();
    c.train.kernels = j.at("kernels").get<std::vector<int>>();
    const auto& ab = j.at("ablation");
    c.train.ablation.no_vap = ab.at("no_vap").get<bool>();
    c.train.ablation.no_cam = ab.at("no_cam").get<bool>();
    c.train.ablation.no_psam = ab.at("no_psam").get<bool>();
    c.train.ablation.zero_attributes = ab.at("zero_attributes").get<bool>();
    c.train.ablation.no_attributes = ab.at("no_attributes").get<bool>();
    return c;
}

json metrics_to_json(const MetricsReport& report, const RunConfig& config) {
    json loss = {{"cls", report.loss_history.cls},
                 {"attr", report.loss_history.attr},
                 {"total", report.loss_history.total}};
    json j = {{"mean_accuracy", report.mean_accuracy},
              {"ci95", report.ci95},
              {"tasks", report.tasks},
              {"loss_history", loss},
              {"wall_clock_seconds", report.wall_clock_seconds},
              {"config", run_config_to_json(config)}};
    if (std::isfinite(report.attr_mae))
        j["attr_mae"] = report.attr_mae;
    else
        j["attr_mae"] = nullptr;
    return j;
}

const std::vector<double>& alpha_sweep_values() {
    static const std::vector<double> values = {0.0, 0.001, 0.01, 0.1, 0.5, 1.0, 2.0};
    return values;
}

const std::vector<std::vector<int>>& kernel_sweep_sets() {
    static const std::vector<std::vector<int>> sets = {
        {3}, {5}, {7}, {9}, {3, 5, 7}, {5, 7, 9}, {3, 5, 7, 9}};
    return sets;
}

namespace {

Corpus build_corpus(const RunConfig& config) {
    if (config.data == "synthetic") {
        SyntheticConfig synth;
        synth.num_classes = config.num_classes;
        synth.samples_per_class = config.samples_per_class;
        synth.attr_count = config.attr_count;
        synth.image_size = config.image_size;
        synth.seed = mix_seed(config.train.seed, 101);
        synth.attribute_jitter = config.attribute_jitter;
        synth.patch_amplitude = config.patch_amplitude;
        synth.pixel_noise = config.pixel_noise;
        synth.brightness_jitter = config.brightness_jitter;
        return generate_synthetic(synth);
    }
    const fs::path dir(config.data);
    return load_manifest((dir / "manifest.csv").string(),
                         (dir / "attributes.txt").string());
}

ModelConfig model_config_for(const RunConfig& config, const Corpus& corpus) {
    ModelConfig mc;
    mc.channels = config.train.channels;
    mc.attr_count = corpus.attr_count;
    mc.image_channels = corpus.image_channels;
    mc.kernel_sizes = config.train.kernels;
    mc.alpha = config.train.alpha;
    mc.ablation = config.train.ablation;
    return mc;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string format_summary_line(const std::string& name, const MetricsReport& r) {
    std::ostringstream line;
    line.precision(4);
    line << std::fixed << name << "  acc " << 100.0 * r.mean_accuracy << " +/- "
         << 100.0 * r.ci95 << "  attr_mae ";
    if (std::isfinite(r.attr_mae))
        line << r.attr_mae;
    else
        line << "n/a";
    line << "  (" << r.tasks << " tasks)";
    return line.str();
}

// train + evaluate one configuration, writing metrics.json, checkpoint.bin
// and summary.txt into config.out_dir
MetricsReport run_single(const RunConfig& config, const Corpus& corpus) {
    const CorpusSplit split = make_split(corpus, config.train_classes);
    ModelConfig mc = model_config_for(config, corpus);
    AslModel model(mc, mix_seed(config.train.seed, 202));
    Adam optimizer(model.parameters(), {.learning_rate = config.train.learning_rate});

    const auto t0 = std::chrono::steady_clock::now();
    LossHistory history = train(model, optimizer, corpus, split.train_classes, config.train);
    MetricsReport report =
        evaluate(model, corpus, split.test_classes, config.train.eval_tasks,
                 config.train.n_way, config.train.m_shot, config.train.q_per_class,
                 mix_seed(config.train.seed, 303));
    report.loss_history = std::move(history);
    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(config.out_dir);
    std::ofstream metrics(fs::path(config.out_dir) / "metrics.json");
    metrics << metrics_to_json(report, config).dump(2) << "\n";
    model.save((fs::path(config.out_dir) / "checkpoint.bin").string());
    write_text(fs::path(config.out_dir) / "summary.txt",
               format_summary_line(config.command == "train" ? "train" : config.command,
                                   report) + "\n");
    return report;
}

struct SummaryRow {
    std::string name;
    double accuracy = 0.0;
    double ci95 = 0.0;
    double attr_mae = std::numeric_limits<double>::quiet_NaN();
};

void write_comparison(const fs::path& dir, std::vector<SummaryRow> rows) {
    std::sort(rows.begin(), rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
        if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
        return a.name < b.name;
    });
    std::ostringstream text, csv;
    csv << "run,mean_accuracy,ci95,attr_mae\n";
    text.precision(4);
    text << std::fixed;
    for (const SummaryRow& row : rows) {
        text << row.name << "  acc " << 100.0 * row.accuracy << " +/- " << 100.0 * row.ci95
             << "  attr_mae ";
        if (std::isfinite(row.attr_mae))
            text << row.attr_mae;
        else
            text << "n/a";
        text << "\n";
        csv << row.name << "," << row.accuracy << "," << row.ci95 << ",";
        if (std::isfinite(row.attr_mae)) csv << row.attr_mae;
        csv << "\n";
    }
    write_text(dir / "summary.txt", text.str());
    write_text(dir / "summary.csv", csv.str());
}

int run_generate(const RunConfig& config) {
    Corpus corpus = build_corpus(config);
    fs::create_directories(config.out_dir);
    write_corpus(corpus, config.out_dir);
    std::cout << "wrote " << corpus.samples.size() << " samples ("
              << corpus.num_classes << " classes) to " << config.out_dir << "\n";
    return 0;
}

int run_train(const RunConfig& config) {
    Corpus corpus = build_corpus(config);
    MetricsReport report = run_single(config, corpus);
    std::cout << format_summary_line("train", report) << "\n";
    return 0;
}

int run_eval(const RunConfig& config) {
    Corpus corpus = build_corpus(config);
    AslModel model = AslModel::load(config.checkpoint);
    const CorpusSplit split = make_split(corpus, config.train_classes);
    MetricsReport report =
        evaluate(model, corpus, split.test_classes, config.train.eval_tasks,
                 config.train.n_way, config.train.m_shot, config.train.q_per_class,
                 mix_seed(config.train.seed, 303));
    fs::create_directories(config.out_dir);
    std::ofstream metrics(fs::path(config.out_dir) / "metrics.json");
    metrics << metrics_to_json(report, config).dump(2) << "\n";
    write_text(fs::path(config.out_dir) / "summary.txt",
               format_summary_line("eval", report) + "\n");
    std::cout << format_summary_line("eval", report) << "\n";
    return 0;
}

int run_ablate(const RunConfig& config) {
    Corpus corpus = build_corpus(config);
    std::vector<SummaryRow> rows;
    for (const auto& [name, flags] : ablation_grid()) {
        RunConfig sub = config;
        sub.command = "train";
        sub.train.ablation = flags;
        sub.out_dir = (fs::path(config.out_dir) / name).string();
        MetricsReport report = run_single(sub, corpus);
        rows.push_back({name, report.mean_accuracy, report.ci95, report.attr_mae});
        std::cout << format_summary_line(name, report) << "\n";
    }
    write_comparison(config.out_dir, std::move(rows));
    return 0;
}

int run_sweep(const RunConfig& config) {
    Corpus corpus = build_corpus(config);
    std::vector<SummaryRow> rows;
    auto run_point = [&](const std::string& name, const RunConfig& sub) {
        MetricsReport report = run_single(sub, corpus);
        rows.push_back({name, report.mean_accuracy, report.ci95, report.attr_mae});
        std::cout << format_summary_line(name, report) << "\n";
    };
    if (config.sweep_axis == "alpha") {
        for (double alpha : alpha_sweep_values()) {
            std::ostringstream name;
            name << "alpha_" << alpha;
            RunConfig sub = config;
            sub.command = "train";
            sub.train.alpha = alpha;
            sub.out_dir = (fs::path(config.out_dir) / name.str()).string();
            run_point(name.str(), sub);
        }
    } else {
        for (const auto& kernels : kernel_sweep_sets()) {
            std::string name = "kernels";
            for (int k : kernels) name += "_" + std::to_string(k);
            RunConfig sub = config;
            sub.command = "train";
            sub.train.kernels = kernels;
            sub.out_dir = (fs::path(config.out_dir) / name).string();
            run_point(name, sub);
        }
    }
    write_comparison(config.out_dir, std::move(rows));
    return 0;
}

int run_summarize(const RunConfig& config) {
    std::vector<SummaryRow> rows;
    for (const std::string& dir : config.summarize_dirs) {
        try {
            std::ifstream in(fs::path(dir) / "metrics.json");
            if (!in) throw std::runtime_error("no metrics.json");
            const json j = json::parse(in);
            SummaryRow row;
            row.name = fs::path(dir).filename().string();
            if (row.name.empty()) row.name = dir;
            row.accuracy = j.at("mean_accuracy").get<double>();
            row.ci95 = j.at("ci95").get<double>();
            if (!j.at("attr_mae").is_null()) row.attr_mae = j.at("attr_mae").get<double>();
            rows.push_back(std::move(row));
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping " << dir << ": " << e.what() << "\n";
        }
    }
    const std::size_t count = rows.size();
    fs::create_directories(config.out_dir);
    write_comparison(config.out_dir, std::move(rows));
    std::cout << "summarized " << count << " runs into " << config.out_dir << "\n";
    return 0;
}

}  // namespace

int run(const RunConfig& config) {
    config.validate();
    if (config.command == "generate") return run_generate(config);
    if (config.command == "train") return run_train(config);
    if (config.command == "eval") return run_eval(config);
    if (config.command == "ablate") return run_ablate(config);
    if (config.command == "sweep") return run_sweep(config);
    return run_summarize(config);
}

}  // namespace asl
