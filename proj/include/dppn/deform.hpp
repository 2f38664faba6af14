#pragma once

#include <utility>
#include <vector>

#include "dppn/conv.hpp"
#include "dppn/hypersphere.hpp"

namespace dppn {

// One deformable prototype: a rho1 x rho2 grid of norm-r part vectors. The
// stacked prototype is a unit vector. Part grid offsets are dilated and
// centred: 3x3 / dilation 1 covers {-1,0,1}, 2x2 / dilation 2 covers {-1,1}.
struct DeformablePrototype {
    int class_id = 0;
    int index_within_class = 0;
    int rho1 = 0, rho2 = 0;
    int dilation = 1;
    int dim = 0;                // part vector length (d + 1)
    float radius = 0.0f;        // 1/sqrt(rho)
    std::vector<float> parts;   // rho1*rho2 x dim, row-major over the grid

    int rho() const { return rho1 * rho2; }
    std::span<float> part(int k) {
        return {parts.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)};
    }
    std::span<const float> part(int k) const {
        return {parts.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)};
    }
    int row_offset(int mi) const { return mi * dilation - (rho1 - 1) * dilation / 2; }
    int col_offset(int ni) const { return ni * dilation - (rho2 - 1) * dilation / 2; }
};

// Rescales every part to norm `radius` (zero parts are rejected).
void renormalize_parts(DeformablePrototype& proto);

// Offset prediction branch: conv + ReLU + conv, both same-padding, the second
// one linear with 2*rho output channels.
struct OffsetBranch {
    ConvLayer conv1;
    ConvLayer conv2;
};

// Offset field layout: channel 2k is Delta1 and 2k+1 is Delta2 for part k.
Tensor4 predict_offsets(const UnitFeatureMap& zhat, const OffsetBranch& branch);

// Deformed similarity map for one prototype (Tensor4 of shape n x 1 x eta1 x eta2).
Tensor4 similarity_map(const UnitFeatureMap& zhat, const DeformablePrototype& proto,
                       const Tensor4& offsets);

// Rigid variant: offsets identically zero, no interpolation round-trip.
Tensor4 similarity_nondeformable(const UnitFeatureMap& zhat, const DeformablePrototype& proto);

// Global max with earliest row-major center on ties.
std::pair<float, std::pair<int, int>> max_pool_similarity(const Tensor4& map, int batch,
                                                          int channel = 0);

struct LayerCache {
    UnitFeatureMap zhat;
    Tensor4 hidden_pre;   // offset branch conv1 output, pre-ReLU
    Tensor4 offsets;      // n x 2rho x eta1 x eta2 (zeros in nd mode)
    Tensor4 maps;         // n x K x eta1 x eta2
    std::vector<float> scores;                 // n*K, row-major (image, proto)
    std::vector<std::pair<int, int>> argmax;   // n*K
    bool deformable = false;

    float score(int image, int proto, int num_protos) const {
        return scores[static_cast<std::size_t>(image) * num_protos + proto];
    }
};

// branch == nullptr selects nd mode. interior_only restricts the pooled
// argmax to centers whose undeformed grid lies fully in bounds.
LayerCache layer_forward(const UnitFeatureMap& zhat,
                         const std::vector<DeformablePrototype>& protos,
                         const OffsetBranch* branch, bool interior_only = false);

// One scalar entering the layer at a specific (image, prototype, center).
struct CenterContribution {
    int image = 0;
    int proto = 0;
    int a = 0, b = 0;
    float weight = 0.0f;
};

struct LayerGrads {
    Tensor4 zhat;                            // wrt zhat.tensor
    std::vector<std::vector<float>> parts;   // per prototype
    ConvGrads branch1, branch2;              // empty in nd mode
};

// Full backward through direct, Delta1 and Delta2 paths. Upstream enters as
// per-center contributions; the offset-field gradient accumulated over all
// prototypes is routed back through the branch convolutions.
LayerGrads layer_backward(const LayerCache& cache,
                          const std::vector<DeformablePrototype>& protos,
                          const OffsetBranch* branch,
                          const std::vector<CenterContribution>& upstream);

// Spec'd convenience: per-prototype upstream scalars routed through each
// prototype's pooled argmax center.
LayerGrads layer_backward(const LayerCache& cache,
                          const std::vector<DeformablePrototype>& protos,
                          const OffsetBranch* branch,
                          std::span<const float> upstream_scores);

} // namespace dppn
