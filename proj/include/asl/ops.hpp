#pragma once

#include <span>
#include <vector>

#include "asl/tensor.hpp"

namespace asl::ops {

enum class PoolMode { Avg, Max };

// Per-channel normalization statistics tracked across training iterations.
// Training-mode forward normalizes with the current spatial statistics and
// folds them into the running estimates; eval-mode forward uses the frozen
// running estimates only.
struct NormStats {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit NormStats(int channels = 0)
        : running_mean(static_cast<std::size_t>(channels), 0.0),
          running_var(static_cast<std::size_t>(channels), 1.0) {}
};

// --- structural ---
Tensor reshape(Tape& tape, const Tensor& x, std::vector<int> shape);
Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);
// visual HxWxC + attribute vector A -> HxWx(C+A), attributes replicated
// at every spatial position
Tensor broadcast_concat(Tape& tape, const Tensor& visual, const Tensor& attributes);

// --- elementwise ---
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);

// gate {C} or {1,1,C} applied across channels of x {H,W,C}
Tensor mul_channel(Tape& tape, const Tensor& gate, const Tensor& x);
// gate {H,W,1} applied across spatial positions of x {H,W,C}
Tensor mul_spatial(Tape& tape, const Tensor& gate, const Tensor& x);

// --- convolution / pooling ---
// input {H,W,Cin}, kernels {k,k,Cin,Cout} with k odd, optional bias {Cout};
// zero padding, stride 1, spatial extent preserved
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernels,
              const Tensor* bias = nullptr);
Tensor max_pool2(Tape& tape, const Tensor& x);  // 2x2 window, stride 2
Tensor global_pool(Tape& tape, const Tensor& x, PoolMode mode);   // -> {1,1,C}
Tensor channel_pool(Tape& tape, const Tensor& x, PoolMode mode);  // -> {H,W,1}

// --- dense / normalization ---
// x of total size Din, weights {Din,Dout}, bias {Dout} -> {Dout}
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weights, const Tensor& bias);
Tensor instance_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                     const Tensor& beta, NormStats& stats, bool training);
// Joint per-channel normalization over a batch of same-shape HxWxC maps.
// Training-mode statistics pool across every map in the batch, so each
// element keeps its offset relative to the batch (a single-element batch
// degenerates to instance_norm). Running stats are updated once per call.
std::vector<Tensor> batch_norm(Tape& tape, const std::vector<Tensor>& xs,
                               const Tensor& gamma, const Tensor& beta,
                               NormStats& stats, bool training);

// --- reductions / classification heads ---
Tensor sum(Tape& tape, const Tensor& x);  // -> scalar
Tensor softmax(Tape& tape, const Tensor& logits);
Tensor squared_distance(Tape& tape, const Tensor& a, const Tensor& b);  // -> scalar
Tensor stack_scalars(Tape& tape, const std::vector<Tensor>& scalars);   // -> {N}
Tensor mean_of(Tape& tape, const std::vector<Tensor>& tensors);  // same-shape mean
// -log(max(probs[label], 1e-12))
Tensor negative_log_prob(Tape& tape, const Tensor& probs, int label);
// mean over entries of (pred - target)^2; target is a constant
Tensor mse_to_const(Tape& tape, const Tensor& pred, std::span<const double> target);

bool all_finite(const Tensor& x);

}  // namespace asl::ops
