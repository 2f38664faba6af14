#pragma once

#include <vector>

#include "dppn/tensor.hpp"

namespace dppn {

// Feature tensor whose every spatial column has L2 norm `radius` = 1/sqrt(rho).
struct UnitFeatureMap {
    Tensor4 tensor;     // n x (d+1) x eta1 x eta2
    float radius = 0.0f;
    int rho = 0;
};

// Appends a constant channel of value epsilon; other channels unchanged.
Tensor4 augment_epsilon(const Tensor4& z, float epsilon);

// zhat_{a,b} = r * z_{a,b} / ||z_{a,b}||. Rejects zero-norm columns.
UnitFeatureMap normalize_locations(const Tensor4& z_aug, float radius, int rho);

// Per column, J = (r/||x||)(I - x x^T/||x||^2) applied to upstream.
Tensor4 normalize_backward(const Tensor4& z_aug, float radius, const Tensor4& upstream);

// Square-blend-sqrt interpolation at fractional grid position (x, y) of batch
// item `batch`. Out-of-grid corners contribute zero; when all four corners are
// in-grid the result has norm `radius`.
std::vector<float> norm_preserving_interpolate(const UnitFeatureMap& zhat, int batch,
                                               float x, float y);

// Fused dot(part, interpolate(zhat, x, y)) without temporaries.
float interpolate_dot(const UnitFeatureMap& zhat, int batch, float x, float y,
                      std::span<const float> part);

struct InterpGrads {
    float x = 0.0f;  // d(out . upstream)/dx, equivalently by Delta1
    float y = 0.0f;
};

// Accumulates corner-feature gradients of sum(upstream * interpolated) into
// grad_zhat (full tensor shape) and returns the positional gradients.
InterpGrads interpolate_backward(const UnitFeatureMap& zhat, int batch, float x, float y,
                                 std::span<const float> upstream, Tensor4& grad_zhat);

} // namespace dppn
