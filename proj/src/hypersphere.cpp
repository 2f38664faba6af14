#include "dppn/hypersphere.hpp"

#include <cmath>
#include <stdexcept>

namespace dppn {

Tensor4 augment_epsilon(const Tensor4& z, float epsilon) {
    if (!(epsilon > 0.0f))
        throw std::invalid_argument("augment_epsilon: epsilon must be > 0");
    Tensor4 out(z.n(), z.c() + 1, z.h(), z.w(), epsilon);
    for (int n = 0; n < z.n(); ++n)
        for (int c = 0; c < z.c(); ++c)
            for (int y = 0; y < z.h(); ++y)
                for (int x = 0; x < z.w(); ++x)
                    out.at(n, c, y, x) = z.at(n, c, y, x);
    return out;
}

UnitFeatureMap normalize_locations(const Tensor4& z_aug, float radius, int rho) {
    UnitFeatureMap out;
    out.tensor = Tensor4(z_aug.n(), z_aug.c(), z_aug.h(), z_aug.w(), 0.0f);
    out.radius = radius;
    out.rho = rho;
    const int n = z_aug.n(), c = z_aug.c(), h = z_aug.h(), w = z_aug.w();
    bool zero_column = false;  // cannot throw from inside the parallel region
#pragma omp parallel for collapse(2) schedule(static) reduction(||: zero_column)
    for (int ni = 0; ni < n; ++ni) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double sq = 0.0;
                for (int k = 0; k < c; ++k) {
                    const double v = z_aug.at(ni, k, y, x);
                    sq += v * v;
                }
                if (!(sq > 0.0)) {
                    zero_column = true;
                    continue;
                }
                const double scale = radius / std::sqrt(sq);
                for (int k = 0; k < c; ++k)
                    out.tensor.at(ni, k, y, x) =
                        static_cast<float>(scale * z_aug.at(ni, k, y, x));
            }
        }
    }
    if (zero_column)
        throw std::invalid_argument(
            "normalize_locations: zero-norm column (epsilon channel missing?)");
    return out;
}

Tensor4 normalize_backward(const Tensor4& z_aug, float radius, const Tensor4& upstream) {
    ensure_same_shape(z_aug, upstream, "normalize_backward");
    Tensor4 grad(z_aug.n(), z_aug.c(), z_aug.h(), z_aug.w(), 0.0f);
    const int n = z_aug.n(), c = z_aug.c(), h = z_aug.h(), w = z_aug.w();
    bool zero_column = false;
#pragma omp parallel for collapse(2) schedule(static) reduction(||: zero_column)
    for (int ni = 0; ni < n; ++ni) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double sq = 0.0, dot = 0.0;
                for (int k = 0; k < c; ++k) {
                    const double v = z_aug.at(ni, k, y, x);
                    sq += v * v;
                    dot += v * upstream.at(ni, k, y, x);
                }
                if (!(sq > 0.0)) {
                    zero_column = true;
                    continue;
                }
                const double inv_sq = 1.0 / sq;
                const double scale = radius / std::sqrt(sq);
                for (int k = 0; k < c; ++k) {
                    const double v = z_aug.at(ni, k, y, x);
                    grad.at(ni, k, y, x) = static_cast<float>(
                        scale * (upstream.at(ni, k, y, x) - v * dot * inv_sq));
                }
            }
        }
    }
    if (zero_column)
        throw std::invalid_argument("normalize_backward: zero-norm column");
    return grad;
}

namespace {

// 2x2 corner stencil of the triangular interpolation weights at (x, y).
// Weight derivative cases follow the printed three-case formula: -1 on the
// floor row (0 <= x - i < 1), +1 on the ceil row when strictly fractional,
// 0 once the distance reaches 1.
struct Stencil {
    int i0, j0;
    float wi[2], wj[2];  // 1-alpha, alpha / 1-beta, beta
    float si[2], sj[2];  // d(weight)/dx, d(weight)/dy
    bool row_in[2], col_in[2];
};

// Positions far outside the grid keep ordinary floor semantics (all corners
// out of grid, zero contribution); the clamp only protects the int cast.
float clamp_coord(float v, int extent) {
    const float lo = -static_cast<float>(extent + 2);
    const float hi = static_cast<float>(2 * extent + 2);
    if (!(v > lo)) return lo;  // also catches NaN
    if (v > hi) return hi;
    return v;
}

Stencil make_stencil(float x, float y, int h, int w) {
    Stencil s;
    x = clamp_coord(x, h);
    y = clamp_coord(y, w);
    const float fx = std::floor(x), fy = std::floor(y);
    s.i0 = static_cast<int>(fx);
    s.j0 = static_cast<int>(fy);
    const float alpha = x - fx, beta = y - fy;
    s.wi[0] = 1.0f - alpha; s.wi[1] = alpha;
    s.wj[0] = 1.0f - beta;  s.wj[1] = beta;
    s.si[0] = -1.0f; s.si[1] = alpha > 0.0f ? 1.0f : 0.0f;
    s.sj[0] = -1.0f; s.sj[1] = beta > 0.0f ? 1.0f : 0.0f;
    s.row_in[0] = s.i0 >= 0 && s.i0 < h;
    s.row_in[1] = s.i0 + 1 >= 0 && s.i0 + 1 < h;
    s.col_in[0] = s.j0 >= 0 && s.j0 < w;
    s.col_in[1] = s.j0 + 1 >= 0 && s.j0 + 1 < w;
    return s;
}

} // namespace

std::vector<float> norm_preserving_interpolate(const UnitFeatureMap& zhat, int batch,
                                               float x, float y) {
    const Tensor4& t = zhat.tensor;
    const Stencil s = make_stencil(x, y, t.h(), t.w());
    std::vector<float> out(t.c(), 0.0f);
    for (int k = 0; k < t.c(); ++k) {
        double zeta = 0.0;
        for (int a = 0; a < 2; ++a) {
            if (!s.row_in[a]) continue;
            for (int b = 0; b < 2; ++b) {
                if (!s.col_in[b]) continue;
                const double v = t.at(batch, k, s.i0 + a, s.j0 + b);
                zeta += static_cast<double>(s.wi[a]) * s.wj[b] * v * v;
            }
        }
        out[k] = static_cast<float>(std::sqrt(zeta));
    }
    return out;
}

float interpolate_dot(const UnitFeatureMap& zhat, int batch, float x, float y,
                      std::span<const float> part) {
    const Tensor4& t = zhat.tensor;
    const Stencil s = make_stencil(x, y, t.h(), t.w());
    double acc = 0.0;
    for (int k = 0; k < t.c(); ++k) {
        double zeta = 0.0;
        for (int a = 0; a < 2; ++a) {
            if (!s.row_in[a]) continue;
            for (int b = 0; b < 2; ++b) {
                if (!s.col_in[b]) continue;
                const double v = t.at(batch, k, s.i0 + a, s.j0 + b);
                zeta += static_cast<double>(s.wi[a]) * s.wj[b] * v * v;
            }
        }
        acc += part[k] * std::sqrt(zeta);
    }
    return static_cast<float>(acc);
}

InterpGrads interpolate_backward(const UnitFeatureMap& zhat, int batch, float x, float y,
                                 std::span<const float> upstream, Tensor4& grad_zhat) {
    const Tensor4& t = zhat.tensor;
    ensure_same_shape(t, grad_zhat, "interpolate_backward");
    const Stencil s = make_stencil(x, y, t.h(), t.w());
    InterpGrads g;
    double gx = 0.0, gy = 0.0;
    for (int k = 0; k < t.c(); ++k) {
        double zeta = 0.0;
        for (int a = 0; a < 2; ++a) {
            if (!s.row_in[a]) continue;
            for (int b = 0; b < 2; ++b) {
                if (!s.col_in[b]) continue;
                const double v = t.at(batch, k, s.i0 + a, s.j0 + b);
                zeta += static_cast<double>(s.wi[a]) * s.wj[b] * v * v;
            }
        }
        if (!(zeta > 0.0))
            continue;  // subgradient 0 where the interpolated component is 0
        const double inv_sqrt = 1.0 / std::sqrt(zeta);
        const double up = upstream[k];
        double dzeta_dx = 0.0, dzeta_dy = 0.0;
        for (int a = 0; a < 2; ++a) {
            if (!s.row_in[a]) continue;
            for (int b = 0; b < 2; ++b) {
                if (!s.col_in[b]) continue;
                const int i = s.i0 + a, j = s.j0 + b;
                const double v = t.at(batch, k, i, j);
                grad_zhat.at(batch, k, i, j) +=
                    static_cast<float>(up * v * s.wi[a] * s.wj[b] * inv_sqrt);
                dzeta_dx += static_cast<double>(s.si[a]) * s.wj[b] * v * v;
                dzeta_dy += static_cast<double>(s.wi[a]) * s.sj[b] * v * v;
            }
        }
        gx += up * 0.5 * inv_sqrt * dzeta_dx;
        gy += up * 0.5 * inv_sqrt * dzeta_dy;
    }
    g.x = static_cast<float>(gx);
    g.y = static_cast<float>(gy);
    return g;
}

} // namespace dppn
