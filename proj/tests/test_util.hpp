#pragma once

#include <vector>

#include "asl/rng.hpp"
#include "asl/tensor.hpp"

namespace testutil {

inline asl::Tensor random_tensor(std::vector<int> shape, asl::Rng& rng,
                                 double lo = -1.0, double hi = 1.0,
                                 bool requires_grad = false) {
    const int n = asl::shape_size(shape);
    std::vector<double> data(static_cast<std::size_t>(n));
    for (double& v : data) v = rng.uniform(lo, hi);
    return asl::Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

}  // namespace testutil
