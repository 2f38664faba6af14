#include "dppn/conv.hpp"

#include <stdexcept>

namespace dppn {

ConvLayer make_conv_same(int in_c, int out_c, int kernel, int stride, int dilation) {
    if (kernel % 2 == 0)
        throw std::invalid_argument("make_conv_same: kernel must be odd for same padding");
    ConvLayer layer;
    layer.weights = Tensor4(out_c, in_c, kernel, kernel, 0.0f);
    layer.bias.assign(out_c, 0.0f);
    layer.stride = stride;
    layer.padding = dilation * (kernel - 1) / 2;
    layer.dilation = dilation;
    return layer;
}

int conv_out_dim(int in, int kernel, int stride, int padding, int dilation) {
    const int span = dilation * (kernel - 1) + 1;
    const int num = in + 2 * padding - span;
    if (num < 0 || stride < 1)
        throw std::invalid_argument("conv_out_dim: kernel does not fit input");
    return num / stride + 1;
}

Tensor4 conv2d_forward(const Tensor4& input, const ConvLayer& layer) {
    if (input.c() != layer.in_channels())
        throw std::invalid_argument("conv2d_forward: input channels do not match layer");
    const int oh = conv_out_dim(input.h(), layer.kernel_h(), layer.stride, layer.padding,
                                layer.dilation);
    const int ow = conv_out_dim(input.w(), layer.kernel_w(), layer.stride, layer.padding,
                                layer.dilation);
    const int n = input.n(), in_c = input.c();
    const int out_c = layer.out_channels();
    const int kh = layer.kernel_h(), kw = layer.kernel_w();
    const int s = layer.stride, p = layer.padding, d = layer.dilation;

    Tensor4 out(n, out_c, oh, ow, 0.0f);
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int oc = 0; oc < out_c; ++oc) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = layer.bias[oc];
                    for (int ic = 0; ic < in_c; ++ic) {
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = oy * s - p + ky * d;
                            if (iy < 0 || iy >= input.h()) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = ox * s - p + kx * d;
                                if (ix < 0 || ix >= input.w()) continue;
                                acc += static_cast<double>(layer.weights.at(oc, ic, ky, kx)) *
                                       input.at(ni, ic, iy, ix);
                            }
                        }
                    }
                    out.at(ni, oc, oy, ox) = static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor4& input, const ConvLayer& layer,
                          const Tensor4& upstream) {
    if (input.c() != layer.in_channels())
        throw std::invalid_argument("conv2d_backward: input channels do not match layer");
    const int oh = conv_out_dim(input.h(), layer.kernel_h(), layer.stride, layer.padding,
                                layer.dilation);
    const int ow = conv_out_dim(input.w(), layer.kernel_w(), layer.stride, layer.padding,
                                layer.dilation);
    if (upstream.n() != input.n() || upstream.c() != layer.out_channels() ||
        upstream.h() != oh || upstream.w() != ow)
        throw std::invalid_argument("conv2d_backward: upstream dims do not match forward output");

    const int n = input.n(), in_c = input.c();
    const int out_c = layer.out_channels();
    const int kh = layer.kernel_h(), kw = layer.kernel_w();
    const int s = layer.stride, p = layer.padding, d = layer.dilation;

    ConvGrads g;
    g.input = Tensor4(input.n(), input.c(), input.h(), input.w(), 0.0f);
    g.weights = Tensor4(out_c, in_c, kh, kw, 0.0f);
    g.bias.assign(out_c, 0.0f);

    // gather form: each grad_input element owned by one iteration
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int ic = 0; ic < in_c; ++ic) {
            for (int iy = 0; iy < input.h(); ++iy) {
                for (int ix = 0; ix < input.w(); ++ix) {
                    double acc = 0.0;
                    for (int oc = 0; oc < out_c; ++oc) {
                        for (int ky = 0; ky < kh; ++ky) {
                            const int num_y = iy + p - ky * d;
                            if (num_y < 0 || num_y % s != 0) continue;
                            const int oy = num_y / s;
                            if (oy >= oh) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int num_x = ix + p - kx * d;
                                if (num_x < 0 || num_x % s != 0) continue;
                                const int ox = num_x / s;
                                if (ox >= ow) continue;
                                acc += static_cast<double>(upstream.at(ni, oc, oy, ox)) *
                                       layer.weights.at(oc, ic, ky, kx);
                            }
                        }
                    }
                    g.input.at(ni, ic, iy, ix) = static_cast<float>(acc);
                }
            }
        }
    }

#pragma omp parallel for collapse(2) schedule(static)
    for (int oc = 0; oc < out_c; ++oc) {
        for (int ic = 0; ic < in_c; ++ic) {
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    double acc = 0.0;
                    for (int ni = 0; ni < n; ++ni) {
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * s - p + ky * d;
                            if (iy < 0 || iy >= input.h()) continue;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * s - p + kx * d;
                                if (ix < 0 || ix >= input.w()) continue;
                                acc += static_cast<double>(upstream.at(ni, oc, oy, ox)) *
                                       input.at(ni, ic, iy, ix);
                            }
                        }
                    }
                    g.weights.at(oc, ic, ky, kx) = static_cast<float>(acc);
                }
            }
        }
    }

#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < out_c; ++oc) {
        double acc = 0.0;
        for (int ni = 0; ni < n; ++ni)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox)
                    acc += upstream.at(ni, oc, oy, ox);
        g.bias[oc] = static_cast<float>(acc);
    }
    return g;
}

} // namespace dppn
