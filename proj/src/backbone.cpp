#include "asl/backbone.hpp"

#include <cmath>

namespace asl {

Tensor init_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / fan_in);
    const int n = shape_size(shape);
    std::vector<double> data(static_cast<std::size_t>(n));
    for (double& v : data) v = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(data), /*requires_grad=*/true);
}

Backbone::Backbone(int in_channels, int channels, Rng& rng) : channels_(channels) {
    int cin = in_channels;
    for (ConvBlock& block : blocks_) {
        block.kernels = init_uniform({3, 3, cin, channels}, 9 * cin, rng);
        block.bias = Tensor::zeros({channels}, true);
        block.gamma = Tensor::full({channels}, 1.0, true);
        block.beta = Tensor::zeros({channels}, true);
        block.stats = ops::NormStats(channels);
        cin = channels;
    }
}

Tensor Backbone::encode(Tape& tape, const Tensor& image, bool training) {
    std::vector<Tensor> features = encode_batch(tape, {image}, training);
    return features.front();
}

std::vector<Tensor> Backbone::encode_batch(Tape& tape, const std::vector<Tensor>& images,
                                           bool training) {
    check_shape(!images.empty(), "encode_batch needs at least one image");
    for (const Tensor& image : images) {
        check_shape(image.shape().size() == 3, "encode expects an HxWxC image");
        check_shape(image.dim(0) % 16 == 0 && image.dim(1) % 16 == 0,
                    "image extents must be divisible by 16 (four 2x2 poolings)");
    }
    std::vector<Tensor> xs = images;
    for (ConvBlock& block : blocks_) {
        for (Tensor& x : xs) x = ops::conv2d(tape, x, block.kernels, &block.bias);
        xs = ops::batch_norm(tape, xs, block.gamma, block.beta, block.stats, training);
        for (Tensor& x : xs) {
            x = ops::relu(tape, x);
            x = ops::max_pool2(tape, x);
        }
    }
    return xs;
}

std::vector<Tensor> Backbone::parameters() {
    std::vector<Tensor> params;
    for (ConvBlock& block : blocks_) {
        params.push_back(block.kernels);
        params.push_back(block.bias);
        params.push_back(block.gamma);
        params.push_back(block.beta);
    }
    return params;
}

}  // namespace asl
