#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asl/backbone.hpp"
#include "asl/ops.hpp"
#include "asl/tensor.hpp"

namespace asl {

struct AblationFlags {
    bool no_vap = false;          // query attributes zeroed, attribute loss dropped
    bool no_cam = false;          // skip channel attention
    bool no_psam = false;         // skip pyramid spatial attention
    bool zero_attributes = false; // dataset attributes replaced with zeros
    bool no_attributes = false;   // attention sees visual channels only, no VAP

    bool avam_disabled() const { return no_cam && no_psam; }
    bool vap_disabled() const { return no_vap || no_attributes; }
};

struct ModelConfig {
    int channels = 32;      // backbone output width C
    int attr_count = 16;    // A
    int image_channels = 3;
    std::vector<int> kernel_sizes{3, 5, 7, 9};  // PSAM pyramid
    double alpha = 1.0;     // attribute-loss weight
    AblationFlags ablation;

    void validate() const;
    // width of the hybrid feature the attention modules consume
    int hybrid_width() const {
        return channels + (ablation.no_attributes ? 0 : attr_count);
    }
};

// Intermediate maps of one refinement pass. Gates are undefined when the
// corresponding attention stage is ablated away.
struct RefinedFeature {
    Tensor channel_gate;     // M_c {1,1,C}
    Tensor spatial_gate;     // M_s {H,W,1}
    Tensor channel_refined;  // F_c {H,W,C}
    Tensor refined;          // F_f {H,W,C}
};

// Backbone encoder + visual-attribute predictor + attribute-visual attention.
class AslModel {
public:
    AslModel(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }

    Tensor encode(Tape& tape, const Tensor& image, bool training) {
        return backbone_.encode(tape, image, training);
    }

    // one joint normalization batch per episode keeps the running statistics
    // representative of the features the classifier actually sees
    std::vector<Tensor> encode_batch(Tape& tape, const std::vector<Tensor>& images,
                                     bool training) {
        return backbone_.encode_batch(tape, images, training);
    }

    // predicted attribute vector from the raw (pre-refinement) feature map
    Tensor predict_attributes(Tape& tape, const Tensor& raw_feature);

    Tensor channel_attention(Tape& tape, const Tensor& hybrid);   // -> {1,1,C}
    Tensor spatial_attention(Tape& tape, const Tensor& hybrid);   // -> {H,W,1}

    RefinedFeature refine(Tape& tape, const Tensor& visual, const Tensor& attributes);

    // encode -> refine -> global average pool; the embedding used by the
    // prototype classifier
    Tensor embed(Tape& tape, const Tensor& image, const Tensor& attributes, bool training);

    std::vector<Tensor> parameters();
    std::vector<std::pair<std::string, Tensor>> named_parameters();

    Backbone& backbone() { return backbone_; }
    Tensor& vap_weight() { return vap_weight_; }
    Tensor& vap_bias() { return vap_bias_; }
    Tensor& cam_weight() { return cam_weight_; }
    Tensor& cam_bias() { return cam_bias_; }
    std::vector<Tensor>& psam_kernels() { return psam_kernels_; }
    std::vector<Tensor>& psam_biases() { return psam_biases_; }

    void save(const std::string& path) const;
    static AslModel load(const std::string& path);

private:
    ModelConfig config_;
    Backbone backbone_;
    Tensor vap_weight_, vap_bias_;  // C -> A
    Tensor cam_weight_, cam_bias_;  // hybrid_width -> C, shared by both branches
    std::vector<Tensor> psam_kernels_;  // {k,k,2,1} per configured kernel size
    std::vector<Tensor> psam_biases_;   // {1}
};

// prototype = arithmetic mean of a class's support embeddings
Tensor compute_prototype(Tape& tape, const std::vector<Tensor>& support_vectors);

// softmax over negative squared Euclidean distances to the prototypes
Tensor classify(Tape& tape, const Tensor& query_vector, const std::vector<Tensor>& prototypes);

// sum (default) or mean of -log p(true class) over the episode's queries
Tensor classification_loss(Tape& tape, const std::vector<Tensor>& query_probs,
                           const std::vector<int>& query_labels, bool mean_reduction = false);

// mean squared error between predicted and observed attribute vectors,
// averaged over samples and attributes
Tensor attribute_loss(Tape& tape, const std::vector<Tensor>& predicted,
                      const std::vector<std::vector<double>>& observed);

Tensor total_loss(Tape& tape, const Tensor& loss_cls, const Tensor& loss_attr, double alpha);

std::uint64_t fnv1a(const void* bytes, std::size_t len, std::uint64_t seed = 14695981039346656037ULL);
std::uint64_t params_checksum(AslModel& model);

}  // namespace asl
