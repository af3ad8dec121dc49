#include "asl/tensor.hpp"

#include <stdexcept>

namespace asl {

void shape_error(const std::string& msg) { throw std::invalid_argument(msg); }

void check_shape(bool cond, const std::string& msg) {
    if (!cond) shape_error(msg);
}

int shape_size(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) {
        check_shape(d > 0, "tensor extents must be positive");
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    const int n = shape_size(shape);
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->value.assign(static_cast<std::size_t>(n), value);
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
    const int n = shape_size(shape);
    check_shape(static_cast<std::size_t>(n) == data.size(),
                "data length does not match shape");
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->value = std::move(data);
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

std::vector<double>& Tensor::grad() {
    if (!impl_->on_grad_path) shape_error("tensor has no gradient buffer");
    return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (!impl_->on_grad_path) shape_error("tensor has no gradient buffer");
    return impl_->grad;
}

void Tensor::set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    if (flag) mark_on_grad_path();
}

void Tensor::mark_on_grad_path() {
    impl_->on_grad_path = true;
    if (impl_->grad.size() != impl_->value.size())
        impl_->grad.assign(impl_->value.size(), 0.0);
}

void Tensor::zero_grad() {
    if (impl_->on_grad_path) impl_->grad.assign(impl_->value.size(), 0.0);
}

double Tensor::item() const {
    check_shape(size() == 1, "item() requires a scalar tensor");
    return impl_->value[0];
}

void Tape::record(std::function<void()> backward_step) {
    if (grad_enabled_) steps_.push_back(std::move(backward_step));
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw std::logic_error("backward requires a scalar loss");
    if (!loss.on_grad_path())
        throw std::logic_error("loss does not depend on any gradient-tracked tensor");
    const_cast<Tensor&>(loss).grad()[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void Tape::clear() { steps_.clear(); }

}  // namespace asl
