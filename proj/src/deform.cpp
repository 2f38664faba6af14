#include "dppn/deform.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dppn {

void renormalize_parts(DeformablePrototype& proto) {
    for (int k = 0; k < proto.rho(); ++k) {
        auto p = proto.part(k);
        double sq = 0.0;
        for (float v : p) sq += static_cast<double>(v) * v;
        if (!(sq > 0.0))
            throw std::invalid_argument("renormalize_parts: zero part vector");
        const double scale = proto.radius / std::sqrt(sq);
        for (float& v : p) v = static_cast<float>(v * scale);
    }
}

Tensor4 predict_offsets(const UnitFeatureMap& zhat, const OffsetBranch& branch) {
    const Tensor4 hidden = conv2d_forward(zhat.tensor, branch.conv1);
    return conv2d_forward(relu(hidden), branch.conv2);
}

namespace {

float center_similarity(const UnitFeatureMap& zhat, const DeformablePrototype& proto,
                        const Tensor4& offsets, int image, int a, int b) {
    double acc = 0.0;
    for (int mi = 0; mi < proto.rho1; ++mi) {
        for (int ni = 0; ni < proto.rho2; ++ni) {
            const int k = mi * proto.rho2 + ni;
            const float d1 = offsets.at(image, 2 * k, a, b);
            const float d2 = offsets.at(image, 2 * k + 1, a, b);
            const float x = static_cast<float>(a + proto.row_offset(mi)) + d1;
            const float y = static_cast<float>(b + proto.col_offset(ni)) + d2;
            acc += interpolate_dot(zhat, image, x, y, proto.part(k));
        }
    }
    return static_cast<float>(acc);
}

// Center range whose undeformed part grid stays in bounds.
void interior_range(const DeformablePrototype& proto, int eta1, int eta2,
                    int& a_lo, int& a_hi, int& b_lo, int& b_hi) {
    a_lo = -proto.row_offset(0);
    a_hi = eta1 - proto.row_offset(proto.rho1 - 1);
    b_lo = -proto.col_offset(0);
    b_hi = eta2 - proto.col_offset(proto.rho2 - 1);
    if (a_lo >= a_hi || b_lo >= b_hi)
        throw std::invalid_argument("interior_only: prototype grid does not fit the feature map");
}

std::pair<float, std::pair<int, int>> max_over_range(const Tensor4& map, int batch, int channel,
                                                     int a_lo, int a_hi, int b_lo, int b_hi) {
    float best = -std::numeric_limits<float>::infinity();
    int best_a = a_lo, best_b = b_lo;
    for (int a = a_lo; a < a_hi; ++a) {
        for (int b = b_lo; b < b_hi; ++b) {
            const float v = map.at(batch, channel, a, b);
            if (v > best) {
                best = v;
                best_a = a;
                best_b = b;
            }
        }
    }
    return {best, {best_a, best_b}};
}

void validate_layer_inputs(const UnitFeatureMap& zhat,
                           const std::vector<DeformablePrototype>& protos,
                           const OffsetBranch* branch) {
    if (protos.empty())
        throw std::invalid_argument("layer_forward: no prototypes");
    for (const auto& p : protos) {
        if (p.dim != zhat.tensor.c())
            throw std::invalid_argument("layer_forward: part dimension != feature channels");
        if (p.rho1 != protos.front().rho1 || p.rho2 != protos.front().rho2 ||
            p.dilation != protos.front().dilation)
            throw std::invalid_argument("layer_forward: prototypes must share a part-grid shape");
    }
    if (branch && branch->conv2.out_channels() != 2 * protos.front().rho())
        throw std::invalid_argument("layer_forward: offset branch must emit 2*rho channels");
}

} // namespace

Tensor4 similarity_map(const UnitFeatureMap& zhat, const DeformablePrototype& proto,
                       const Tensor4& offsets) {
    const Tensor4& t = zhat.tensor;
    if (proto.dim != t.c())
        throw std::invalid_argument("similarity_map: part dimension != feature channels");
    if (offsets.c() != 2 * proto.rho())
        throw std::invalid_argument("similarity_map: offset field must have 2*rho channels");
    if (offsets.n() != t.n() || offsets.h() != t.h() || offsets.w() != t.w())
        throw std::invalid_argument("similarity_map: offset field spatial dims mismatch");
    Tensor4 map(t.n(), 1, t.h(), t.w(), 0.0f);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < t.n(); ++n)
        for (int a = 0; a < t.h(); ++a)
            for (int b = 0; b < t.w(); ++b)
                map.at(n, 0, a, b) = center_similarity(zhat, proto, offsets, n, a, b);
    return map;
}

Tensor4 similarity_nondeformable(const UnitFeatureMap& zhat, const DeformablePrototype& proto) {
    const Tensor4& t = zhat.tensor;
    if (proto.dim != t.c())
        throw std::invalid_argument("similarity_nondeformable: part dimension != feature channels");
    Tensor4 map(t.n(), 1, t.h(), t.w(), 0.0f);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < t.n(); ++n) {
        for (int a = 0; a < t.h(); ++a) {
            for (int b = 0; b < t.w(); ++b) {
                double acc = 0.0;
                for (int mi = 0; mi < proto.rho1; ++mi) {
                    const int i = a + proto.row_offset(mi);
                    if (i < 0 || i >= t.h()) continue;
                    for (int ni = 0; ni < proto.rho2; ++ni) {
                        const int j = b + proto.col_offset(ni);
                        if (j < 0 || j >= t.w()) continue;
                        const auto part = proto.part(mi * proto.rho2 + ni);
                        for (int k = 0; k < t.c(); ++k)
                            acc += static_cast<double>(part[k]) * t.at(n, k, i, j);
                    }
                }
                map.at(n, 0, a, b) = static_cast<float>(acc);
            }
        }
    }
    return map;
}

std::pair<float, std::pair<int, int>> max_pool_similarity(const Tensor4& map, int batch,
                                                          int channel) {
    if (map.h() < 1 || map.w() < 1)
        throw std::invalid_argument("max_pool_similarity: empty map");
    return max_over_range(map, batch, channel, 0, map.h(), 0, map.w());
}

LayerCache layer_forward(const UnitFeatureMap& zhat,
                         const std::vector<DeformablePrototype>& protos,
                         const OffsetBranch* branch, bool interior_only) {
    validate_layer_inputs(zhat, protos, branch);
    const Tensor4& t = zhat.tensor;
    const int n = t.n(), eta1 = t.h(), eta2 = t.w();
    const int num_protos = static_cast<int>(protos.size());
    const int rho = protos.front().rho();

    LayerCache cache;
    cache.zhat = zhat;
    cache.deformable = branch != nullptr;
    if (branch) {
        cache.hidden_pre = conv2d_forward(t, branch->conv1);
        cache.offsets = conv2d_forward(relu(cache.hidden_pre), branch->conv2);
    } else {
        cache.offsets = Tensor4(n, 2 * rho, eta1, eta2, 0.0f);
    }
    cache.maps = Tensor4(n, num_protos, eta1, eta2, 0.0f);
    cache.scores.assign(static_cast<std::size_t>(n) * num_protos, 0.0f);
    cache.argmax.assign(static_cast<std::size_t>(n) * num_protos, {0, 0});

    int a_lo = 0, a_hi = eta1, b_lo = 0, b_hi = eta2;
    if (interior_only)
        interior_range(protos.front(), eta1, eta2, a_lo, a_hi, b_lo, b_hi);

#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int k = 0; k < num_protos; ++k) {
            const DeformablePrototype& proto = protos[k];
            for (int a = 0; a < eta1; ++a)
                for (int b = 0; b < eta2; ++b)
                    cache.maps.at(ni, k, a, b) =
                        center_similarity(zhat, proto, cache.offsets, ni, a, b);
            const auto [score, center] =
                max_over_range(cache.maps, ni, k, a_lo, a_hi, b_lo, b_hi);
            cache.scores[static_cast<std::size_t>(ni) * num_protos + k] = score;
            cache.argmax[static_cast<std::size_t>(ni) * num_protos + k] = center;
        }
    }
    return cache;
}

LayerGrads layer_backward(const LayerCache& cache,
                          const std::vector<DeformablePrototype>& protos,
                          const OffsetBranch* branch,
                          const std::vector<CenterContribution>& upstream) {
    const Tensor4& t = cache.zhat.tensor;
    LayerGrads g;
    g.zhat = Tensor4(t.n(), t.c(), t.h(), t.w(), 0.0f);
    g.parts.resize(protos.size());
    for (std::size_t k = 0; k < protos.size(); ++k)
        g.parts[k].assign(protos[k].parts.size(), 0.0f);

    Tensor4 grad_offsets;
    if (cache.deformable)
        grad_offsets = Tensor4(cache.offsets.n(), cache.offsets.c(), cache.offsets.h(),
                               cache.offsets.w(), 0.0f);

    std::vector<float> scaled_part;
    for (const CenterContribution& cc : upstream) {
        if (cc.weight == 0.0f) continue;
        const DeformablePrototype& proto = protos[cc.proto];
        for (int mi = 0; mi < proto.rho1; ++mi) {
            for (int ni = 0; ni < proto.rho2; ++ni) {
                const int k = mi * proto.rho2 + ni;
                if (cache.deformable) {
                    const float d1 = cache.offsets.at(cc.image, 2 * k, cc.a, cc.b);
                    const float d2 = cache.offsets.at(cc.image, 2 * k + 1, cc.a, cc.b);
                    const float x = static_cast<float>(cc.a + proto.row_offset(mi)) + d1;
                    const float y = static_cast<float>(cc.b + proto.col_offset(ni)) + d2;

                    const std::vector<float> vec =
                        norm_preserving_interpolate(cache.zhat, cc.image, x, y);
                    float* gp = g.parts[cc.proto].data() + static_cast<std::size_t>(k) * proto.dim;
                    for (int ch = 0; ch < proto.dim; ++ch)
                        gp[ch] += cc.weight * vec[ch];

                    const auto part = proto.part(k);
                    scaled_part.assign(part.begin(), part.end());
                    for (float& v : scaled_part) v *= cc.weight;
                    const InterpGrads ig = interpolate_backward(cache.zhat, cc.image, x, y,
                                                                scaled_part, g.zhat);
                    grad_offsets.at(cc.image, 2 * k, cc.a, cc.b) += ig.x;
                    grad_offsets.at(cc.image, 2 * k + 1, cc.a, cc.b) += ig.y;
                } else {
                    const int i = cc.a + proto.row_offset(mi);
                    const int j = cc.b + proto.col_offset(ni);
                    if (i < 0 || i >= t.h() || j < 0 || j >= t.w()) continue;
                    const auto part = proto.part(k);
                    float* gp = g.parts[cc.proto].data() + static_cast<std::size_t>(k) * proto.dim;
                    for (int ch = 0; ch < proto.dim; ++ch) {
                        gp[ch] += cc.weight * t.at(cc.image, ch, i, j);
                        g.zhat.at(cc.image, ch, i, j) += cc.weight * part[ch];
                    }
                }
            }
        }
    }

    if (cache.deformable) {
        const Tensor4 hidden_relu = relu(cache.hidden_pre);
        g.branch2 = conv2d_backward(hidden_relu, branch->conv2, grad_offsets);
        const Tensor4 grad_hidden = relu_backward(cache.hidden_pre, g.branch2.input);
        g.branch1 = conv2d_backward(t, branch->conv1, grad_hidden);
        for (std::size_t i = 0; i < g.zhat.size(); ++i)
            g.zhat.data()[i] += g.branch1.input.data()[i];
    }
    return g;
}

LayerGrads layer_backward(const LayerCache& cache,
                          const std::vector<DeformablePrototype>& protos,
                          const OffsetBranch* branch,
                          std::span<const float> upstream_scores) {
    const int num_protos = static_cast<int>(protos.size());
    const int n = cache.zhat.tensor.n();
    std::vector<CenterContribution> contribs;
    contribs.reserve(upstream_scores.size());
    for (int ni = 0; ni < n; ++ni) {
        for (int k = 0; k < num_protos; ++k) {
            const std::size_t idx = static_cast<std::size_t>(ni) * num_protos + k;
            const auto [a, b] = cache.argmax[idx];
            contribs.push_back({ni, k, a, b, upstream_scores[idx]});
        }
    }
    return layer_backward(cache, protos, branch, contribs);
}

} // namespace dppn
