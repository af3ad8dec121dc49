#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace asl {

[[noreturn]] void shape_error(const std::string& msg);
void check_shape(bool cond, const std::string& msg);

int shape_size(const std::vector<int>& shape);

struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;    // sized like value iff on_grad_path
    bool requires_grad = false;  // leaf parameter flag
    bool on_grad_path = false;   // participates in backward
};

// Shared-handle dense tensor. Values are written once by the op that creates
// the tensor; gradients accumulate only inside a backward pass.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    int size() const { return static_cast<int>(impl_->value.size()); }

    std::vector<double>& data() { return impl_->value; }
    const std::vector<double>& data() const { return impl_->value; }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;

    bool requires_grad() const { return impl_->requires_grad; }
    bool on_grad_path() const { return impl_ && impl_->on_grad_path; }
    void set_requires_grad(bool flag);
    void mark_on_grad_path();
    void zero_grad();

    double item() const;

    TensorImpl* impl() const { return impl_.get(); }
    std::shared_ptr<TensorImpl> handle() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Define-by-run tape: ops append backward closures in forward order; one
// backward pass replays them in reverse. Rebuilt per episode.
class Tape {
public:
    // when disabled, ops neither record closures nor extend the grad path
    void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
    bool grad_enabled() const { return grad_enabled_; }

    void record(std::function<void()> backward_step);
    void backward(const Tensor& loss);
    void clear();
    std::size_t size() const { return steps_.size(); }

private:
    std::vector<std::function<void()>> steps_;
    bool grad_enabled_ = true;
};

class NoGradGuard {
public:
    explicit NoGradGuard(Tape& tape) : tape_(tape), prev_(tape.grad_enabled()) {
        tape_.set_grad_enabled(false);
    }
    ~NoGradGuard() { tape_.set_grad_enabled(prev_); }

private:
    Tape& tape_;
    bool prev_;
};

}  // namespace asl
