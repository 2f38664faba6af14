#pragma once

#include <vector>

#include "dppn/model.hpp"

namespace dppn {

struct LossWeights {
    float lambda_sep = 0.01f;
    float lambda_clst = 0.1f;
    float lambda_ortho = 0.1f;
    float margin_phi = 0.1f;
    float lambda_l1_last = 1e-3f;
};

// -(1/N) sum_i max over same-class prototypes. argmax_out (one prototype
// index per image) routes the subgradient.
double cluster_loss(std::span<const float> scores, int num_images, int num_protos,
                    const std::vector<int>& labels, const std::vector<int>& proto_class,
                    int num_classes, std::vector<int>* argmax_out = nullptr);

// +(1/N) sum_i max over other-class prototypes; images with no other-class
// prototype contribute nothing (argmax -1).
double separation_loss(std::span<const float> scores, int num_images, int num_protos,
                       const std::vector<int>& labels, const std::vector<int>& proto_class,
                       int num_classes, std::vector<int>* argmax_out = nullptr);

// One margin-adjusted score per (image, prototype): target-class prototypes
// keep the pooled score, others re-run the max over cos(max(0, theta - phi)).
struct MarginAdjusted {
    float value = 0.0f;  // g^(-)
    float chain = 0.0f;  // d g^(-) / d(map value at the routing center)
    int a = 0, b = 0;
};

std::vector<MarginAdjusted> subtractive_margin_scores(const LayerCache& cache, int num_protos,
                                                      const std::vector<int>& labels,
                                                      const std::vector<int>& proto_class,
                                                      float phi);

// Mean softmax cross entropy over logits sum_k w[(k),c'] g^(-)[k].
// grad_adjusted, when given, receives dCE/dg^(-) (num_images x num_protos).
double margin_cross_entropy(const std::vector<MarginAdjusted>& adjusted, int num_images,
                            const LastLayer& last, const std::vector<int>& labels,
                            std::vector<float>* grad_adjusted = nullptr);

// sum_c ||P^(c) P^(c)^T - r^2 I||_F^2 over all parts of all prototypes of a
// class. grad_parts, when given, is resized per prototype.
double orthogonality_loss(const std::vector<DeformablePrototype>& protos, int num_classes,
                          std::vector<std::vector<float>>* grad_parts = nullptr);

// Standard cross entropy plus lambda * sum of off-class |w|; subgradient of
// |.| at 0 is 0. grad_w matches last.w layout.
double last_layer_loss(std::span<const float> scores, int num_images, const LastLayer& last,
                       const std::vector<int>& labels, float lambda_l1,
                       std::vector<float>* grad_w = nullptr);

struct Stage1Breakdown {
    double ce_margin = 0.0;
    double sep = 0.0;
    double clst = 0.0;
    double ortho = 0.0;
    double total = 0.0;
};

// Loss pieces plus everything model_backward needs, computed from a forward
// cache so the trainer runs one forward per batch.
struct BatchLossInfo {
    Stage1Breakdown losses;
    std::vector<CenterContribution> contribs;
    std::vector<std::vector<float>> ortho_grad_parts;  // already lambda-scaled
};

BatchLossInfo stage1_batch_losses(const Model& model, const LayerCache& cache,
                                  const std::vector<int>& labels, const LossWeights& weights);

struct Stage1Result {
    Stage1Breakdown losses;
    ParamGrads grads;
};

// Composite of Eq.-14 shape: margin cross entropy + weighted separation,
// cluster and orthogonality terms, with gradients via the layer backward.
Stage1Result stage1_loss(const Model& model, const Tensor4& images,
                         const std::vector<int>& labels, const LossWeights& weights);

} // namespace dppn
