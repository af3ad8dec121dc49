#pragma once

#include <array>
#include <vector>

#include "asl/ops.hpp"
#include "asl/rng.hpp"
#include "asl/tensor.hpp"

namespace asl {

// He-style uniform fan-in initialization
Tensor init_uniform(std::vector<int> shape, int fan_in, Rng& rng);

struct ConvBlock {
    Tensor kernels;  // {3,3,Cin,Cout}
    Tensor bias;     // {Cout}
    Tensor gamma;    // {Cout}
    Tensor beta;     // {Cout}
    ops::NormStats stats;
};

// Four-block convolutional encoder: conv3x3 (same padding) -> per-channel
// normalization -> ReLU -> 2x2 max-pool. Spatial extent shrinks by 16.
class Backbone {
public:
    Backbone() = default;
    Backbone(int in_channels, int channels, Rng& rng);

    Tensor encode(Tape& tape, const Tensor& image, bool training);
    // shared normalization statistics across the whole batch
    std::vector<Tensor> encode_batch(Tape& tape, const std::vector<Tensor>& images,
                                     bool training);

    std::vector<Tensor> parameters();
    std::array<ConvBlock, 4>& blocks() { return blocks_; }
    const std::array<ConvBlock, 4>& blocks() const { return blocks_; }
    int channels() const { return channels_; }

private:
    std::array<ConvBlock, 4> blocks_;
    int channels_ = 0;
};

}  // namespace asl
