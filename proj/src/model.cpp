#include "asl/model.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace asl {

void ModelConfig::validate() const {
    if (channels < 1) throw std::invalid_argument("channel width must be positive");
    if (attr_count < 1) throw std::invalid_argument("attribute count must be positive");
    if (alpha < 0.0) throw std::invalid_argument("alpha must be non-negative");
    if (!ablation.no_psam) {
        if (kernel_sizes.empty())
            throw std::invalid_argument("PSAM kernel set must be nonempty");
        for (int k : kernel_sizes)
            if (k < 1 || k % 2 == 0)
                throw std::invalid_argument("PSAM kernel sizes must be odd and positive");
    }
    if (ablation.no_attributes && ablation.zero_attributes)
        throw std::invalid_argument(
            "no_attributes and zero_attributes are contradictory flags");
}

AslModel::AslModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(mix_seed(seed, 0xA51));
    backbone_ = Backbone(config_.image_channels, config_.channels, rng);

    const int c = config_.channels;
    const int a = config_.attr_count;
    vap_weight_ = init_uniform({c, a}, c, rng);
    vap_bias_ = Tensor::zeros({a}, true);

    const int hybrid = config_.hybrid_width();
    cam_weight_ = init_uniform({hybrid, c}, hybrid, rng);
    cam_bias_ = Tensor::zeros({c}, true);

    for (int k : config_.kernel_sizes) {
        psam_kernels_.push_back(init_uniform({k, k, 2, 1}, 2 * k * k, rng));
        psam_biases_.push_back(Tensor::zeros({1}, true));
    }
}

Tensor AslModel::predict_attributes(Tape& tape, const Tensor& raw_feature) {
    Tensor pooled = ops::global_pool(tape, raw_feature, ops::PoolMode::Avg);
    Tensor pre = ops::linear(tape, pooled, vap_weight_, vap_bias_);
    return ops::sigmoid(tape, pre);
}

Tensor AslModel::channel_attention(Tape& tape, const Tensor& hybrid) {
    check_shape(hybrid.dim(2) == config_.hybrid_width(),
                "channel attention input width must be C+A");
    Tensor avg = ops::global_pool(tape, hybrid, ops::PoolMode::Avg);
    Tensor mx = ops::global_pool(tape, hybrid, ops::PoolMode::Max);
    Tensor pre = ops::add(tape, ops::linear(tape, avg, cam_weight_, cam_bias_),
                          ops::linear(tape, mx, cam_weight_, cam_bias_));
    return ops::reshape(tape, ops::sigmoid(tape, pre), {1, 1, config_.channels});
}

Tensor AslModel::spatial_attention(Tape& tape, const Tensor& hybrid) {
    if (psam_kernels_.empty())
        throw std::invalid_argument("spatial attention requires a nonempty kernel set");
    Tensor avg = ops::channel_pool(tape, hybrid, ops::PoolMode::Avg);
    Tensor mx = ops::channel_pool(tape, hybrid, ops::PoolMode::Max);
    Tensor pooled = ops::concat_channels(tape, avg, mx);  // {H,W,2}
    Tensor summed;
    for (std::size_t i = 0; i < psam_kernels_.size(); ++i) {
        // bias {1} broadcasts over the single output channel
        Tensor map = ops::conv2d(tape, pooled, psam_kernels_[i], &psam_biases_[i]);
        summed = summed.defined() ? ops::add(tape, summed, map) : map;
    }
    return ops::sigmoid(tape, summed);
}

RefinedFeature AslModel::refine(Tape& tape, const Tensor& visual, const Tensor& attributes) {
    const bool use_attrs = !config_.ablation.no_attributes;
    if (use_attrs)
        check_shape(attributes.size() == config_.attr_count,
                    "attribute vector length must equal A");

    RefinedFeature out;
    if (config_.ablation.no_cam) {
        out.channel_refined = visual;
    } else {
        Tensor hybrid = use_attrs ? ops::broadcast_concat(tape, visual, attributes) : visual;
        out.channel_gate = channel_attention(tape, hybrid);
        // the channel gate has width C and is applied to the visual channels
        out.channel_refined = ops::mul_channel(tape, out.channel_gate, visual);
    }
    if (config_.ablation.no_psam) {
        out.refined = out.channel_refined;
    } else {
        Tensor hybrid = use_attrs
                            ? ops::broadcast_concat(tape, out.channel_refined, attributes)
                            : out.channel_refined;
        out.spatial_gate = spatial_attention(tape, hybrid);
        out.refined = ops::mul_spatial(tape, out.spatial_gate, out.channel_refined);
    }
    return out;
}

Tensor AslModel::embed(Tape& tape, const Tensor& image, const Tensor& attributes,
                       bool training) {
    Tensor feature = encode(tape, image, training);
    RefinedFeature refined = refine(tape, feature, attributes);
    Tensor pooled = ops::global_pool(tape, refined.refined, ops::PoolMode::Avg);
    return ops::reshape(tape, pooled, {config_.channels});
}

std::vector<Tensor> AslModel::parameters() {
    std::vector<Tensor> params;
    for (auto& [name, p] : named_parameters()) params.push_back(p);
    return params;
}

std::vector<std::pair<std::string, Tensor>> AslModel::named_parameters() {
    std::vector<std::pair<std::string, Tensor>> named;
    const char* part[] = {"kernels", "bias", "gamma", "beta"};
    for (int b = 0; b < 4; ++b) {
        ConvBlock& block = backbone_.blocks()[static_cast<std::size_t>(b)];
        Tensor fields[] = {block.kernels, block.bias, block.gamma, block.beta};
        for (int f = 0; f < 4; ++f)
            named.emplace_back("backbone.block" + std::to_string(b) + "." + part[f],
                               fields[f]);
    }
    named.emplace_back("vap.weight", vap_weight_);
    named.emplace_back("vap.bias", vap_bias_);
    named.emplace_back("cam.weight", cam_weight_);
    named.emplace_back("cam.bias", cam_bias_);
    for (std::size_t i = 0; i < psam_kernels_.size(); ++i) {
        const std::string k = std::to_string(config_.kernel_sizes[i]);
        named.emplace_back("psam.k" + k + ".kernel", psam_kernels_[i]);
        named.emplace_back("psam.k" + k + ".bias", psam_biases_[i]);
    }
    return named;
}

namespace {

constexpr char kMagic[8] = {'A', 'S', 'L', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("truncated checkpoint");
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    const auto len = read_pod<std::uint32_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw std::runtime_error("truncated checkpoint");
    return s;
}

void write_array(std::ostream& out, const std::string& name,
                 const std::vector<int>& shape, const std::vector<double>& data) {
    write_string(out, name);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) write_pod<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
}

}  // namespace

void AslModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::int32_t>(out, config_.channels);
    write_pod<std::int32_t>(out, config_.attr_count);
    write_pod<std::int32_t>(out, config_.image_channels);
    write_pod(out, config_.alpha);
    write_pod<std::uint8_t>(out, config_.ablation.no_vap);
    write_pod<std::uint8_t>(out, config_.ablation.no_cam);
    write_pod<std::uint8_t>(out, config_.ablation.no_psam);
    write_pod<std::uint8_t>(out, config_.ablation.zero_attributes);
    write_pod<std::uint8_t>(out, config_.ablation.no_attributes);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(config_.kernel_sizes.size()));
    for (int k : config_.kernel_sizes) write_pod<std::int32_t>(out, k);

    auto& self = const_cast<AslModel&>(*this);
    auto named = self.named_parameters();
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(named.size() + 8));
    for (auto& [name, p] : named) write_array(out, name, p.shape(), p.data());
    for (int b = 0; b < 4; ++b) {
        const ConvBlock& block = backbone_.blocks()[static_cast<std::size_t>(b)];
        const std::string prefix = "backbone.block" + std::to_string(b) + ".";
        const int c = static_cast<int>(block.stats.running_mean.size());
        write_array(out, prefix + "running_mean", {c}, block.stats.running_mean);
        write_array(out, prefix + "running_var", {c}, block.stats.running_var);
    }
}

AslModel AslModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not an ASL checkpoint: " + path);

    ModelConfig config;
    config.channels = read_pod<std::int32_t>(in);
    config.attr_count = read_pod<std::int32_t>(in);
    config.image_channels = read_pod<std::int32_t>(in);
    config.alpha = read_pod<double>(in);
    config.ablation.no_vap = read_pod<std::uint8_t>(in) != 0;
    config.ablation.no_cam = read_pod<std::uint8_t>(in) != 0;
    config.ablation.no_psam = read_pod<std::uint8_t>(in) != 0;
    config.ablation.zero_attributes = read_pod<std::uint8_t>(in) != 0;
    config.ablation.no_attributes = read_pod<std::uint8_t>(in) != 0;
    const auto nk = read_pod<std::uint32_t>(in);
    config.kernel_sizes.clear();
    for (std::uint32_t i = 0; i < nk; ++i)
        config.kernel_sizes.push_back(read_pod<std::int32_t>(in));

    AslModel model(config, /*seed=*/0);

    std::map<std::string, std::vector<double>*> arrays;
    std::map<std::string, std::vector<int>> shapes;
    for (auto& [name, p] : model.named_parameters()) {
        arrays[name] = &p.impl()->value;
        shapes[name] = p.shape();
    }
    for (int b = 0; b < 4; ++b) {
        ConvBlock& block = model.backbone_.blocks()[static_cast<std::size_t>(b)];
        const std::string prefix = "backbone.block" + std::to_string(b) + ".";
        arrays[prefix + "running_mean"] = &block.stats.running_mean;
        arrays[prefix + "running_var"] = &block.stats.running_var;
        const int c = static_cast<int>(block.stats.running_mean.size());
        shapes[prefix + "running_mean"] = {c};
        shapes[prefix + "running_var"] = {c};
    }

    const auto count = read_pod<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = read_string(in);
        const auto ndim = read_pod<std::uint32_t>(in);
        std::vector<int> shape;
        for (std::uint32_t d = 0; d < ndim; ++d)
            shape.push_back(read_pod<std::int32_t>(in));
        const auto it = arrays.find(name);
        if (it == arrays.end())
            throw std::runtime_error("checkpoint holds unknown array: " + name);
        if (shapes[name] != shape)
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        std::vector<double>& dst = *it->second;
        in.read(reinterpret_cast<char*>(dst.data()),
                static_cast<std::streamsize>(dst.size() * sizeof(double)));
        if (!in) throw std::runtime_error("truncated checkpoint: " + path);
        arrays.erase(it);
    }
    if (!arrays.empty())
        throw std::runtime_error("checkpoint is missing array: " + arrays.begin()->first);
    return model;
}

Tensor compute_prototype(Tape& tape, const std::vector<Tensor>& support_vectors) {
    if (support_vectors.empty())
        throw std::logic_error("prototype requires at least one support vector");
    return ops::mean_of(tape, support_vectors);
}

Tensor classify(Tape& tape, const Tensor& query_vector, const std::vector<Tensor>& prototypes) {
    std::vector<Tensor> logits;
    logits.reserve(prototypes.size());
    for (const Tensor& p : prototypes)
        logits.push_back(ops::scale(tape, ops::squared_distance(tape, query_vector, p), -1.0));
    return ops::softmax(tape, ops::stack_scalars(tape, logits));
}

Tensor classification_loss(Tape& tape, const std::vector<Tensor>& query_probs,
                           const std::vector<int>& query_labels, bool mean_reduction) {
    check_shape(query_probs.size() == query_labels.size(),
                "one probability vector per query is required");
    check_shape(!query_probs.empty(), "classification loss over zero queries");
    Tensor loss;
    for (std::size_t j = 0; j < query_probs.size(); ++j) {
        Tensor term = ops::negative_log_prob(tape, query_probs[j], query_labels[j]);
        loss = loss.defined() ? ops::add(tape, loss, term) : term;
    }
    if (mean_reduction)
        loss = ops::scale(tape, loss, 1.0 / static_cast<double>(query_probs.size()));
    return loss;
}

Tensor attribute_loss(Tape& tape, const std::vector<Tensor>& predicted,
                      const std::vector<std::vector<double>>& observed) {
    check_shape(predicted.size() == observed.size(),
                "prediction and target lists must align");
    check_shape(!predicted.empty(), "attribute loss over zero samples");
    std::vector<Tensor> per_sample;
    per_sample.reserve(predicted.size());
    for (std::size_t i = 0; i < predicted.size(); ++i)
        per_sample.push_back(ops::mse_to_const(tape, predicted[i], observed[i]));
    return ops::mean_of(tape, per_sample);
}

Tensor total_loss(Tape& tape, const Tensor& loss_cls, const Tensor& loss_attr, double alpha) {
    if (alpha < 0.0) throw std::invalid_argument("alpha must be non-negative");
    return ops::add(tape, loss_cls, ops::scale(tape, loss_attr, alpha));
}

std::uint64_t fnv1a(const void* bytes, std::size_t len, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t params_checksum(AslModel& model) {
    std::uint64_t h = 14695981039346656037ULL;
    for (auto& [name, p] : model.named_parameters()) {
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(p.data().data(), p.data().size() * sizeof(double), h);
    }
    for (const ConvBlock& block : model.backbone().blocks()) {
        h = fnv1a(block.stats.running_mean.data(),
                  block.stats.running_mean.size() * sizeof(double), h);
        h = fnv1a(block.stats.running_var.data(),
                  block.stats.running_var.size() * sizeof(double), h);
    }
    return h;
}

}  // namespace asl
