#pragma once

#include <cstdint>
#include <vector>

#include "asl/tensor.hpp"

namespace asl {

// Adam with bias correction. Moment buffers are keyed by parameter order,
// so the parameter list must be stable across steps.
class Adam {
public:
    struct Hyper {
        double learning_rate = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    explicit Adam(std::vector<Tensor> params) : Adam(std::move(params), Hyper()) {}
    Adam(std::vector<Tensor> params, Hyper hyper);

    void step();
    void zero_grad();

    std::int64_t step_count() const { return step_count_; }
    const Hyper& hyper() const { return hyper_; }
    void set_learning_rate(double lr) { hyper_.learning_rate = lr; }
    const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
    const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    Hyper hyper_;
    std::int64_t step_count_ = 0;
};

}  // namespace asl
