#include "dppn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace dppn {

namespace {

std::size_t checked_size(int n, int c, int h, int w) {
    if (n < 1 || c < 1 || h < 1 || w < 1)
        throw std::invalid_argument("Tensor4: all dims must be >= 1");
    return static_cast<std::size_t>(n) * c * h * w;
}

} // namespace

Tensor4::Tensor4(int n, int c, int h, int w, float fill)
    : n_(n), c_(c), h_(h), w_(w), v_(checked_size(n, c, h, w), fill) {}

Tensor4 Tensor4::from_data(int n, int c, int h, int w, std::vector<float> data) {
    if (data.size() != checked_size(n, c, h, w))
        throw std::invalid_argument("Tensor4: data length does not match dims");
    Tensor4 t;
    t.n_ = n; t.c_ = c; t.h_ = h; t.w_ = w;
    t.v_ = std::move(data);
    return t;
}

void Tensor4::fill(float value) {
    std::fill(v_.begin(), v_.end(), value);
}

void ensure_same_shape(const Tensor4& a, const Tensor4& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

Tensor4 relu(const Tensor4& input) {
    Tensor4 out = input;
    for (float& v : out.flat())
        v = v > 0.0f ? v : 0.0f;
    return out;
}

Tensor4 relu_backward(const Tensor4& input, const Tensor4& upstream) {
    ensure_same_shape(input, upstream, "relu_backward");
    Tensor4 out = upstream;
    const float* in = input.data();
    float* g = out.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        if (in[i] <= 0.0f) g[i] = 0.0f;
    return out;
}

void sgd_step(std::span<float> params, std::span<const float> grads, float lr,
              std::span<float> velocity, float momentum) {
    if (params.size() != grads.size() || params.size() != velocity.size())
        throw std::invalid_argument("sgd_step: shape mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grads[i];
        params[i] -= lr * velocity[i];
    }
}

void sgd_step(Tensor4& params, const Tensor4& grads, float lr,
              Tensor4& velocity, float momentum) {
    ensure_same_shape(params, grads, "sgd_step");
    ensure_same_shape(params, velocity, "sgd_step");
    sgd_step(params.flat(), grads.flat(), lr, velocity.flat(), momentum);
}

Tensor4 finite_difference_gradient(const std::function<double(const Tensor4&)>& f,
                                   const Tensor4& x, float h) {
    if (!(h > 0.0f))
        throw std::invalid_argument("finite_difference_gradient: h must be > 0");
    Tensor4 grad(x.n(), x.c(), x.h(), x.w(), 0.0f);
    Tensor4 probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float orig = x.data()[i];
        const float hi = orig + h;
        const float lo = orig - h;
        probe.data()[i] = hi;
        const double fp = f(probe);
        probe.data()[i] = lo;
        const double fm = f(probe);
        probe.data()[i] = orig;
        grad.data()[i] = static_cast<float>((fp - fm) / (static_cast<double>(hi) - lo));
    }
    return grad;
}

bool grad_close(double analytic, double numeric, double rel_tol, double abs_floor) {
    const double diff = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    return diff <= std::max(rel_tol * scale, abs_floor);
}

double max_grad_err(std::span<const float> analytic, std::span<const float> numeric,
                    double rel_tol, double abs_floor) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double diff = std::abs(static_cast<double>(analytic[i]) - numeric[i]);
        const double bound = std::max(
            rel_tol * std::max(std::abs(static_cast<double>(analytic[i])),
                               std::abs(static_cast<double>(numeric[i]))),
            abs_floor);
        worst = std::max(worst, diff / bound * rel_tol);
    }
    return worst;
}

} // namespace dppn
