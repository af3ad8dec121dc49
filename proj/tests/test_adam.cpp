#include <doctest.h>

#include <cmath>

#include "asl/optimizer.hpp"
#include "test_util.hpp"

using namespace asl;

namespace {

// Straight transcription of the bias-corrected Adam update, kept independent
// of the production implementation.
struct ReferenceAdam {
    std::vector<double> m, v;
    double lr, b1, b2, eps;
    long t = 0;

    ReferenceAdam(std::size_t n, double lr_, double b1_, double b2_, double eps_)
        : m(n, 0.0), v(n, 0.0), lr(lr_), b1(b1_), b2(b2_), eps(eps_) {}

    void step(std::vector<double>& theta, const std::vector<double>& grad) {
        ++t;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            const double mhat = m[i] / (1.0 - std::pow(b1, t));
            const double vhat = v[i] / (1.0 - std::pow(b2, t));
            theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
};

}  // namespace

TEST_SUITE("adam") {

TEST_CASE("zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::from_data({4}, {1.0, -2.0, 0.5, 3.0}, true);
    const auto before = p.data();
    Adam opt({p});
    opt.zero_grad();
    opt.step();
    CHECK(p.data() == before);
}

TEST_CASE("first step with constant gradient moves by roughly the learning rate") {
    Tensor p = Tensor::from_data({3}, {0.0, 1.0, -1.0}, true);
    Adam opt({p}, {.learning_rate = 0.01});
    opt.zero_grad();
    for (double& g : p.grad()) g = 0.7;
    opt.step();
    // with any nonzero constant gradient, the bias-corrected first step is
    // lr * g / (|g| + eps') which is within a hair of lr in magnitude
    CHECK(p.data()[0] == doctest::Approx(-0.01).epsilon(1e-4));
    CHECK(p.data()[1] == doctest::Approx(1.0 - 0.01).epsilon(1e-4));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("three steps match a hand-simulated reference within 1e-12") {
    Rng rng(42);
    Tensor p = testutil::random_tensor({6}, rng, -2.0, 2.0, true);
    Adam::Hyper h{.learning_rate = 0.05, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8};
    Adam opt({p}, h);

    std::vector<double> theta = p.data();
    ReferenceAdam ref(theta.size(), h.learning_rate, h.beta1, h.beta2, h.eps);

    for (int step = 0; step < 3; ++step) {
        std::vector<double> grad(theta.size());
        for (double& g : grad) g = rng.uniform(-1.0, 1.0);
        opt.zero_grad();
        for (std::size_t i = 0; i < grad.size(); ++i) p.grad()[i] = grad[i];
        opt.step();
        ref.step(theta, grad);
        for (std::size_t i = 0; i < theta.size(); ++i)
            CHECK(p.data()[i] == doctest::Approx(theta[i]).epsilon(1e-12));
    }
    CHECK(opt.step_count() == 3);
}

TEST_CASE("moment buffers track gradients per parameter") {
    Tensor a = Tensor::zeros({2}, true);
    Tensor b = Tensor::zeros({3}, true);
    Adam opt({a, b});
    opt.zero_grad();
    a.grad() = {1.0, 2.0};
    b.grad() = {0.0, 0.0, -3.0};
    opt.step();
    CHECK(opt.first_moment(0)[1] == doctest::Approx(0.1 * 2.0).epsilon(1e-12));
    CHECK(opt.second_moment(1)[2] == doctest::Approx(0.001 * 9.0).epsilon(1e-12));
    CHECK(opt.first_moment(1)[0] == 0.0);
}

TEST_CASE("zero_grad clears accumulated gradients") {
    Tensor p = Tensor::zeros({2}, true);
    Adam opt({p});
    p.grad() = {5.0, -5.0};
    opt.zero_grad();
    CHECK(p.grad() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("adam converges on a convex quadratic") {
    Tensor p = Tensor::from_data({2}, {4.0, -3.0}, true);
    Adam opt({p}, {.learning_rate = 0.1});
    for (int i = 0; i < 400; ++i) {
        opt.zero_grad();
        // d/dp of 0.5 * |p - (1, 2)|^2
        p.grad()[0] = p.data()[0] - 1.0;
        p.grad()[1] = p.data()[1] - 2.0;
        opt.step();
    }
    CHECK(p.data()[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(p.data()[1] == doctest::Approx(2.0).epsilon(1e-3));
}

}  // TEST_SUITE
