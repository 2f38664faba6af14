#include "dppn/reference.hpp"

#include <cmath>
#include <stdexcept>

namespace dppn::ref {

Tensor4 conv2d_forward(const Tensor4& input, const ConvLayer& layer) {
    if (input.c() != layer.in_channels())
        throw std::invalid_argument("ref::conv2d_forward: channel mismatch");
    const int p = layer.padding, s = layer.stride, d = layer.dilation;
    const int ph = input.h() + 2 * p, pw = input.w() + 2 * p;
    Tensor4 padded(input.n(), input.c(), ph, pw, 0.0f);
    for (int n = 0; n < input.n(); ++n)
        for (int c = 0; c < input.c(); ++c)
            for (int y = 0; y < input.h(); ++y)
                for (int x = 0; x < input.w(); ++x)
                    padded.at(n, c, y + p, x + p) = input.at(n, c, y, x);

    const int kh = layer.kernel_h(), kw = layer.kernel_w();
    const int oh = (ph - (d * (kh - 1) + 1)) / s + 1;
    const int ow = (pw - (d * (kw - 1) + 1)) / s + 1;
    Tensor4 out(input.n(), layer.out_channels(), oh, ow, 0.0f);
    for (int n = 0; n < input.n(); ++n)
        for (int oc = 0; oc < layer.out_channels(); ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = layer.bias[oc];
                    for (int ic = 0; ic < input.c(); ++ic)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx)
                                acc += static_cast<double>(
                                           layer.weights.at(oc, ic, ky, kx)) *
                                       padded.at(n, ic, oy * s + ky * d, ox * s + kx * d);
                    out.at(n, oc, oy, ox) = static_cast<float>(acc);
                }
    return out;
}

std::vector<float> bilinear_interpolate(const Tensor4& grid, int batch, float x, float y) {
    std::vector<float> out(grid.c(), 0.0f);
    for (int k = 0; k < grid.c(); ++k) {
        double acc = 0.0;
        for (int i = 0; i < grid.h(); ++i) {
            const double wi = std::max(0.0, 1.0 - std::abs(static_cast<double>(x) - i));
            if (wi == 0.0) continue;
            for (int j = 0; j < grid.w(); ++j) {
                const double wj = std::max(0.0, 1.0 - std::abs(static_cast<double>(y) - j));
                if (wj == 0.0) continue;
                acc += wi * wj * grid.at(batch, k, i, j);
            }
        }
        out[k] = static_cast<float>(acc);
    }
    return out;
}

std::vector<float> interpolate_full_scan(const Tensor4& grid, int batch, float x, float y) {
    std::vector<float> out(grid.c(), 0.0f);
    for (int k = 0; k < grid.c(); ++k) {
        double zeta = 0.0;
        for (int i = 0; i < grid.h(); ++i) {
            const double wi = std::max(0.0, 1.0 - std::abs(static_cast<double>(x) - i));
            if (wi == 0.0) continue;
            for (int j = 0; j < grid.w(); ++j) {
                const double wj = std::max(0.0, 1.0 - std::abs(static_cast<double>(y) - j));
                if (wj == 0.0) continue;
                const double v = grid.at(batch, k, i, j);
                zeta += wi * wj * v * v;
            }
        }
        out[k] = static_cast<float>(std::sqrt(zeta));
    }
    return out;
}

Tensor4 similarity_map(const UnitFeatureMap& zhat, const DeformablePrototype& proto,
                       const Tensor4& offsets) {
    const Tensor4& t = zhat.tensor;
    Tensor4 map(t.n(), 1, t.h(), t.w(), 0.0f);
    for (int n = 0; n < t.n(); ++n) {
        for (int a = 0; a < t.h(); ++a) {
            for (int b = 0; b < t.w(); ++b) {
                double acc = 0.0;
                for (int mi = 0; mi < proto.rho1; ++mi) {
                    for (int ni = 0; ni < proto.rho2; ++ni) {
                        const int k = mi * proto.rho2 + ni;
                        const float x = static_cast<float>(a + proto.row_offset(mi)) +
                                        offsets.at(n, 2 * k, a, b);
                        const float y = static_cast<float>(b + proto.col_offset(ni)) +
                                        offsets.at(n, 2 * k + 1, a, b);
                        const std::vector<float> vec = interpolate_full_scan(t, n, x, y);
                        const auto part = proto.part(k);
                        for (int ch = 0; ch < t.c(); ++ch)
                            acc += static_cast<double>(part[ch]) * vec[ch];
                    }
                }
                map.at(n, 0, a, b) = static_cast<float>(acc);
            }
        }
    }
    return map;
}

} // namespace dppn::ref
