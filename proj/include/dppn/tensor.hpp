#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace dppn {

// Dense rank-4 array (batch x channel x height x width), row-major float32.
class Tensor4 {
public:
    Tensor4() = default;
    Tensor4(int n, int c, int h, int w, float fill = 0.0f);

    static Tensor4 from_data(int n, int c, int h, int w, std::vector<float> data);

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    std::size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    bool same_shape(const Tensor4& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    std::size_t idx(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x;
    }
    float& at(int n, int c, int y, int x) { return v_[idx(n, c, y, x)]; }
    float at(int n, int c, int y, int x) const { return v_[idx(n, c, y, x)]; }

    float* data() { return v_.data(); }
    const float* data() const { return v_.data(); }
    std::span<float> flat() { return v_; }
    std::span<const float> flat() const { return v_; }

    void fill(float value);

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<float> v_;
};

// Throws std::invalid_argument unless both tensors have identical dims.
void ensure_same_shape(const Tensor4& a, const Tensor4& b, const char* what);

Tensor4 relu(const Tensor4& input);
// Masks upstream where input <= 0 (subgradient 0 at exactly 0).
Tensor4 relu_backward(const Tensor4& input, const Tensor4& upstream);

// v <- momentum * v + g;  p <- p - lr * v
void sgd_step(std::span<float> params, std::span<const float> grads, float lr,
              std::span<float> velocity, float momentum);
void sgd_step(Tensor4& params, const Tensor4& grads, float lr,
              Tensor4& velocity, float momentum);

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
// Uses the actually-representable step after float rounding.
Tensor4 finite_difference_gradient(const std::function<double(const Tensor4&)>& f,
                                   const Tensor4& x, float h);

// Pass rule for analytic-vs-numeric gradient comparisons: relative
// tolerance with an absolute floor (float32 limits central differences).
bool grad_close(double analytic, double numeric,
                double rel_tol = 1e-3, double abs_floor = 1e-5);
// Largest scaled mismatch over a pair of gradient spans; 0 means identical.
double max_grad_err(std::span<const float> analytic, std::span<const float> numeric,
                    double rel_tol = 1e-3, double abs_floor = 1e-5);

} // namespace dppn
