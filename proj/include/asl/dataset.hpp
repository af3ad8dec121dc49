#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asl/rng.hpp"
#include "asl/tensor.hpp"

namespace asl {

// (image, attribute vector, label) triple
struct LabeledSample {
    Tensor image;                    // {H,W,C}, values in [0,1]
    std::vector<double> attributes;  // length A, values in [0,1]
    int label = 0;
    int id = 0;  // corpus-wide sample identifier
};

struct Corpus {
    int attr_count = 0;
    int image_size = 0;
    int image_channels = 3;
    int num_classes = 0;
    std::vector<LabeledSample> samples;
    std::vector<std::vector<int>> by_class;  // sample indices per label
    // class prototype attribute vectors; filled by the synthetic generator
    std::vector<std::vector<double>> class_prototypes;
};

struct CorpusSplit {
    std::vector<int> train_classes;
    std::vector<int> test_classes;
};

// One N-way M-shot task. Support is class-major (M consecutive samples per
// class); labels are renumbered 0..N-1 via class_map.
struct Episode {
    int n_way = 0;
    int m_shot = 0;
    int q_per_class = 0;
    std::vector<int> support_indices;
    std::vector<int> support_labels;
    std::vector<int> query_indices;
    std::vector<int> query_labels;
    std::vector<int> class_map;  // episode label -> corpus label
};

struct SyntheticConfig {
    int num_classes = 20;
    int samples_per_class = 40;
    int attr_count = 16;
    int image_size = 32;
    std::uint64_t seed = 0;
    double attribute_jitter = 0.5;
    double patch_amplitude = 0.35;
    double pixel_noise = 0.02;
    double brightness_jitter = 0.05;
};

// Procedural corpus: each class is a distinct binary attribute prototype and
// each attribute lights up one grid cell of the image with a fixed color.
Corpus generate_synthetic(const SyntheticConfig& config);

// CSV manifest (`path,class_id`) plus class-attribute file whose first line
// declares `A <count> MAX <max_raw_value>`.
Corpus load_manifest(const std::string& manifest_path, const std::string& attributes_path);

void write_corpus(const Corpus& corpus, const std::string& dir);

CorpusSplit make_split(const Corpus& corpus, int num_train_classes);

Episode sample_episode(const Corpus& corpus, const std::vector<int>& categories,
                       int n_way, int m_shot, int q_per_class, Rng& rng);

}  // namespace asl
