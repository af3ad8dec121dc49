#include "asl/trainer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace asl {

void TrainConfig::validate() const {
    if (n_way < 2) throw std::invalid_argument("N must be at least 2");
    if (m_shot < 1) throw std::invalid_argument("M must be at least 1");
    if (q_per_class < 1) throw std::invalid_argument("q_per_class must be at least 1");
    if (alpha < 0.0) throw std::invalid_argument("alpha must be non-negative");
    if (learning_rate < 0.0) throw std::invalid_argument("learning rate must be non-negative");
    if (iterations < 0) throw std::invalid_argument("iteration count must be non-negative");
    if (channels < 1) throw std::invalid_argument("channel width must be positive");
    if (!ablation.no_psam && kernels.empty())
        throw std::invalid_argument("kernel set must be nonempty unless PSAM is ablated");
    if (ablation.no_attributes && ablation.zero_attributes)
        throw std::invalid_argument("no_attributes and zero_attributes are contradictory flags");
}

std::pair<double, double> mean_ci95(const std::vector<double>& values) {
    if (values.size() < 2)
        throw std::invalid_argument("confidence interval needs at least 2 samples");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return {mean, 1.96 * sd / std::sqrt(static_cast<double>(values.size()))};
}

namespace {

std::vector<double> episode_attributes(const AblationFlags& flags,
                                       const LabeledSample& sample) {
    if (flags.zero_attributes)
        return std::vector<double>(sample.attributes.size(), 0.0);
    return sample.attributes;
}

int argmax(const Tensor& probs) {
    int best = 0;
    for (int i = 1; i < probs.size(); ++i)
        if (probs.data()[static_cast<std::size_t>(i)] >
            probs.data()[static_cast<std::size_t>(best)])
            best = i;
    return best;
}

}  // namespace

EpisodeForward episode_forward(AslModel& model, Tape& tape, const Corpus& corpus,
                               const Episode& episode, bool training) {
    const AblationFlags& flags = model.config().ablation;
    const int a = model.config().attr_count;
    const int c = model.config().channels;

    std::vector<Tensor> predicted_attrs;
    std::vector<std::vector<double>> observed_attrs;

    // all episode images share one normalization batch
    std::vector<Tensor> images;
    images.reserve(episode.support_indices.size() + episode.query_indices.size());
    for (int idx : episode.support_indices)
        images.push_back(corpus.samples[static_cast<std::size_t>(idx)].image);
    for (int idx : episode.query_indices)
        images.push_back(corpus.samples[static_cast<std::size_t>(idx)].image);
    std::vector<Tensor> features = model.encode_batch(tape, images, training);

    // support pass: dataset attributes guide refinement
    std::vector<std::vector<Tensor>> per_class_vectors(static_cast<std::size_t>(episode.n_way));
    for (std::size_t i = 0; i < episode.support_indices.size(); ++i) {
        const LabeledSample& sample =
            corpus.samples[static_cast<std::size_t>(episode.support_indices[i])];
        Tensor feature = features[i];
        std::vector<double> attrs = episode_attributes(flags, sample);
        if (!flags.vap_disabled()) {
            predicted_attrs.push_back(model.predict_attributes(tape, feature));
            observed_attrs.push_back(attrs);
        }
        Tensor attr_tensor =
            flags.no_attributes ? Tensor() : Tensor::from_data({a}, attrs);
        RefinedFeature refined = model.refine(tape, feature, attr_tensor);
        Tensor pooled = ops::global_pool(tape, refined.refined, ops::PoolMode::Avg);
        per_class_vectors[static_cast<std::size_t>(episode.support_labels[i])].push_back(
            ops::reshape(tape, pooled, {c}));
    }

    std::vector<Tensor> prototypes;
    prototypes.reserve(per_class_vectors.size());
    for (const auto& vectors : per_class_vectors)
        prototypes.push_back(compute_prototype(tape, vectors));

    // query pass: attributes are predicted, never taken from the dataset
    EpisodeForward out;
    double mae_sum = 0.0;
    int mae_count = 0;
    for (std::size_t j = 0; j < episode.query_indices.size(); ++j) {
        const LabeledSample& sample =
            corpus.samples[static_cast<std::size_t>(episode.query_indices[j])];
        Tensor feature = features[episode.support_indices.size() + j];
        Tensor attr_tensor;
        if (!flags.vap_disabled()) {
            Tensor predicted = model.predict_attributes(tape, feature);
            predicted_attrs.push_back(predicted);
            const std::vector<double> observed = episode_attributes(flags, sample);
            observed_attrs.push_back(observed);
            for (int k = 0; k < a; ++k) {
                mae_sum += std::abs(predicted.data()[static_cast<std::size_t>(k)] -
                                    observed[static_cast<std::size_t>(k)]);
                ++mae_count;
            }
            attr_tensor = predicted;
        } else if (!flags.no_attributes) {
            attr_tensor = Tensor::zeros({a});
        }
        RefinedFeature refined = model.refine(tape, feature, attr_tensor);
        Tensor pooled = ops::global_pool(tape, refined.refined, ops::PoolMode::Avg);
        Tensor probs = classify(tape, ops::reshape(tape, pooled, {c}), prototypes);
        out.predictions.push_back(argmax(probs));
        out.query_probs.push_back(std::move(probs));
    }

    out.loss_cls = classification_loss(tape, out.query_probs, episode.query_labels);
    out.loss_attr = flags.vap_disabled()
                        ? Tensor::scalar(0.0)
                        : attribute_loss(tape, predicted_attrs, observed_attrs);
    out.loss = total_loss(tape, out.loss_cls, out.loss_attr, model.config().alpha);
    out.attr_mae = mae_count > 0 ? mae_sum / mae_count
                                 : std::numeric_limits<double>::quiet_NaN();
    return out;
}

LossHistory train(AslModel& model, Adam& optimizer, const Corpus& corpus,
                  const std::vector<int>& train_classes, const TrainConfig& config) {
    config.validate();
    Rng episode_rng(mix_seed(config.seed, 11));
    LossHistory history;
    double lr = config.learning_rate;
    for (int iter = 0; iter < config.iterations; ++iter) {
        Episode episode = sample_episode(corpus, train_classes, config.n_way,
                                         config.m_shot, config.q_per_class, episode_rng);
        Tape tape;
        optimizer.zero_grad();
        optimizer.set_learning_rate(lr);
        EpisodeForward fwd =
            episode_forward(model, tape, corpus, episode, /*training=*/true);
        if (!std::isfinite(fwd.loss.item()))
            throw std::runtime_error("non-finite loss at iteration " + std::to_string(iter));
        tape.backward(fwd.loss);
        optimizer.step();
        history.cls.push_back(fwd.loss_cls.item());
        history.attr.push_back(fwd.loss_attr.item());
        history.total.push_back(fwd.loss.item());
        lr *= config.lr_decay;
    }
    return history;
}

MetricsReport evaluate(AslModel& model, const Corpus& corpus,
                       const std::vector<int>& test_classes, int task_count,
                       int n_way, int m_shot, int q_per_class, std::uint64_t seed) {
    if (task_count < 2)
        throw std::invalid_argument("evaluation needs at least 2 tasks for a CI");

    std::vector<double> accuracies(static_cast<std::size_t>(task_count));
    double mae_sum = 0.0;
    int mae_tasks = 0;
    for (int t = 0; t < task_count; ++t) {
        Rng rng(mix_seed(seed, 1000003ULL + static_cast<std::uint64_t>(t)));
        Episode episode = sample_episode(corpus, test_classes, n_way, m_shot, q_per_class, rng);
        Tape tape;
        tape.set_grad_enabled(false);
        EpisodeForward fwd = episode_forward(model, tape, corpus, episode, /*training=*/false);
        int correct = 0;
        for (std::size_t j = 0; j < fwd.predictions.size(); ++j)
            if (fwd.predictions[j] == episode.query_labels[j]) ++correct;
        accuracies[static_cast<std::size_t>(t)] =
            static_cast<double>(correct) / static_cast<double>(fwd.predictions.size());
        if (std::isfinite(fwd.attr_mae)) {
            mae_sum += fwd.attr_mae;
            ++mae_tasks;
        }
    }

    MetricsReport report;
    std::tie(report.mean_accuracy, report.ci95) = mean_ci95(accuracies);
    report.attr_mae = mae_tasks > 0 ? mae_sum / mae_tasks
                                    : std::numeric_limits<double>::quiet_NaN();
    report.tasks = task_count;
    return report;
}

std::vector<std::pair<std::string, AblationFlags>> ablation_grid() {
    std::vector<std::pair<std::string, AblationFlags>> grid;
    grid.emplace_back("full_asl", AblationFlags{});
    grid.emplace_back("no_vap", AblationFlags{.no_vap = true});
    grid.emplace_back("no_cam", AblationFlags{.no_cam = true});
    grid.emplace_back("no_psam", AblationFlags{.no_psam = true});
    grid.emplace_back("protonets", AblationFlags{.no_vap = true, .no_cam = true, .no_psam = true});
    grid.emplace_back("zero_attributes", AblationFlags{.zero_attributes = true});
    grid.emplace_back("no_attributes", AblationFlags{.no_attributes = true});
    return grid;
}

}  // namespace asl
