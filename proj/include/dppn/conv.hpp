#pragma once

#include <vector>

#include "dppn/tensor.hpp"

namespace dppn {

struct ConvLayer {
    Tensor4 weights;          // out_c x in_c x kh x kw
    std::vector<float> bias;  // out_c
    int stride = 1;
    int padding = 0;
    int dilation = 1;

    int out_channels() const { return weights.n(); }
    int in_channels() const { return weights.c(); }
    int kernel_h() const { return weights.h(); }
    int kernel_w() const { return weights.w(); }
};

// Zero-initialized layer with "same" padding (odd kernels only).
ConvLayer make_conv_same(int in_c, int out_c, int kernel, int stride = 1, int dilation = 1);

int conv_out_dim(int in, int kernel, int stride, int padding, int dilation);

// Cross-correlation with zero padding.
Tensor4 conv2d_forward(const Tensor4& input, const ConvLayer& layer);

struct ConvGrads {
    Tensor4 input;
    Tensor4 weights;
    std::vector<float> bias;
};

// Gradients of sum(upstream * output) with respect to each argument.
ConvGrads conv2d_backward(const Tensor4& input, const ConvLayer& layer,
                          const Tensor4& upstream);

} // namespace dppn
