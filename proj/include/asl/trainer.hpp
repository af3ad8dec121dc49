#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asl/dataset.hpp"
#include "asl/model.hpp"
#include "asl/optimizer.hpp"

namespace asl {

struct TrainConfig {
    int n_way = 5;
    int m_shot = 1;
    int q_per_class = 15;
    double alpha = 1.0;
    double learning_rate = 1e-3;
    double lr_decay = 1.0;  // multiplicative per-iteration decay hook, off at 1.0
    int iterations = 5000;
    int eval_tasks = 2000;
    std::uint64_t seed = 0;
    std::vector<int> kernels{3, 5, 7, 9};
    AblationFlags ablation;
    int channels = 32;

    void validate() const;
};

struct LossHistory {
    std::vector<double> cls;
    std::vector<double> attr;
    std::vector<double> total;
};

struct MetricsReport {
    double mean_accuracy = 0.0;
    double ci95 = 0.0;
    double attr_mae = 0.0;  // NaN when the model has no attribute predictor
    int tasks = 0;
    LossHistory loss_history;
    double wall_clock_seconds = 0.0;
};

// mean and 1.96 * stderr of per-task accuracies
std::pair<double, double> mean_ci95(const std::vector<double>& values);

struct EpisodeForward {
    Tensor loss, loss_cls, loss_attr;
    std::vector<int> predictions;        // argmax per query
    std::vector<Tensor> query_probs;
    double attr_mae = 0.0;               // VAP error on query samples
};

// One pass of the episodic pipeline: encode, predict attributes, refine,
// build prototypes, classify every query, assemble the joint loss.
EpisodeForward episode_forward(AslModel& model, Tape& tape, const Corpus& corpus,
                               const Episode& episode, bool training);

// Episodic training loop: one task per iteration, Adam update after each.
LossHistory train(AslModel& model, Adam& optimizer, const Corpus& corpus,
                  const std::vector<int>& train_classes, const TrainConfig& config);

MetricsReport evaluate(AslModel& model, const Corpus& corpus,
                       const std::vector<int>& test_classes, int task_count,
                       int n_way, int m_shot, int q_per_class, std::uint64_t seed);

struct AblationRow {
    std::string name;
    AblationFlags flags;
    MetricsReport report;
};

// the named flag combinations of the ablation table
std::vector<std::pair<std::string, AblationFlags>> ablation_grid();

}  // namespace asl
