#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dppn/config.hpp"
#include "dppn/deform.hpp"

namespace dppn {

struct LastLayer {
    int num_prototypes = 0;
    int num_classes = 0;
    std::vector<float> w;  // row-major (prototype, class)

    float& at(int p, int c) { return w[static_cast<std::size_t>(p) * num_classes + c]; }
    float at(int p, int c) const { return w[static_cast<std::size_t>(p) * num_classes + c]; }
};

struct ProjectionRecord {
    int prototype = -1;
    int image = -1;       // dataset entry index
    int center_a = 0, center_b = 0;
    std::vector<std::array<float, 2>> part_offsets;  // (Delta1, Delta2) per part
    float cosine = 0.0f;
};

// Backbone f (conv/ReLU stack) + hypersphere normalization + deformable layer
// g + last layer h, plus projection provenance.
struct Model {
    RunConfig cfg;
    std::vector<ConvLayer> backbone;
    std::vector<DeformablePrototype> prototypes;
    OffsetBranch branch;  // untouched in nd mode
    LastLayer last_layer;
    std::vector<ProjectionRecord> provenance;

    int num_prototypes() const { return cfg.num_classes * cfg.protos_per_class; }
    float radius() const { return cfg.radius(); }
    int proto_class(int k) const { return k / cfg.protos_per_class; }
    int latent_h() const;
    int latent_w() const;
    const OffsetBranch* branch_or_null() const { return cfg.nd ? nullptr : &branch; }
};

// Seeded init: He-normal backbone, spherical random parts rescaled to norm r,
// zero final offset conv, last layer 1 / -0.5.
Model init_model(const RunConfig& cfg, std::uint32_t seed);

struct ForwardCache {
    Tensor4 images;
    std::vector<Tensor4> pre;  // backbone conv outputs, pre-ReLU
    Tensor4 z;                 // post final ReLU
    Tensor4 z_aug;             // epsilon channel appended
    LayerCache layer;
};

ForwardCache model_forward(const Model& model, const Tensor4& images);

// Class logits per image: logit[c'] = sum_k w[(k), c'] * score[k].
std::vector<double> class_logits(const Model& model, std::span<const float> scores, int num_images);

struct ParamGrads {
    std::vector<ConvGrads> backbone;
    LayerGrads layer;  // parts + branch grads; zhat grad consumed internally
    Tensor4 z;         // grad at the raw (pre-augment) feature tensor
};

// Backward from per-center score contributions through the deformable layer,
// the normalization and the backbone convolutions.
ParamGrads model_backward(const Model& model, const ForwardCache& cache,
                          const std::vector<CenterContribution>& contribs);

// Checkpoint format "DPPN1": magic, length-prefixed config echo, named DPT1
// tensor blocks, projection records. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

} // namespace dppn
