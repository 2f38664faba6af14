#pragma once

#include <vector>

#include "dppn/deform.hpp"

// Serial reference implementations kept for testing and benchmarking. These
// are deliberately naive and share no code with the OpenMP kernels: the
// convolution materializes a zero-padded copy, and the interpolation scans
// the whole grid with triangular weights instead of the 4-corner stencil.
namespace dppn::ref {

Tensor4 conv2d_forward(const Tensor4& input, const ConvLayer& layer);

// Plain bilinear blend (the operation Theorem-style interpolation replaces);
// used to reproduce the norm-shrink counterexample.
std::vector<float> bilinear_interpolate(const Tensor4& grid, int batch, float x, float y);

// Square-blend-sqrt interpolation evaluated from the full-grid sum
// zeta_k = sum_ij z_kij^2 max(0, 1-|x-i|) max(0, 1-|y-j|).
std::vector<float> interpolate_full_scan(const Tensor4& grid, int batch, float x, float y);

// Deformed similarity map built on the full-scan interpolation.
Tensor4 similarity_map(const UnitFeatureMap& zhat, const DeformablePrototype& proto,
                       const Tensor4& offsets);

} // namespace dppn::ref
