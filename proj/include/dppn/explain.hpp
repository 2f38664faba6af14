#pragma once

#include <array>
#include <string>
#include <vector>

#include "dppn/dataset.hpp"
#include "dppn/model.hpp"

namespace dppn {

// Square bounding box of side gamma at a deformed, gamma-scaled part position.
struct PartBox {
    int m_index = 0, n_index = 0;  // part grid indices
    float center_row = 0.0f;       // pixels, gamma * (a + m*dil + Delta1)
    float center_col = 0.0f;
    float side = 0.0f;             // = gamma
    int source_image = -1;         // dataset entry id, -1 for a query image
};

// Image-to-latent spatial ratio; throws when not integral.
int downsampling_factor(const Model& model);

// Forward the image, take the prototype's pooled argmax center, read the
// offsets there and emit one box per part.
std::vector<PartBox> visualize_prototype(const Model& model, const Tensor4& image,
                                         int proto_index, int source_image_id = -1);

// Boxes on a prototype's projection source image, from provenance geometry.
std::vector<PartBox> provenance_boxes(const Model& model, int proto_index);

struct ReasoningReport {
    std::vector<float> scores;                       // per prototype
    std::vector<std::vector<float>> contributions;   // per prototype, per class
    std::vector<float> own_weight;                   // w_h[(c,l), c]
    std::vector<double> class_totals;
    int predicted = 0;
};

ReasoningReport reasoning_report(const Model& model, const Tensor4& image);

// UTF-8 text: `proto=<c>/<l> score=<f> weight=<f> contrib=<f>` lines, then
// `class=<c> total=<f>` lines, then `predicted=<c>`.
std::string format_reasoning_report(const Model& model, const ReasoningReport& report);

struct RankedPrototype {
    int proto_index = 0;
    float score = 0.0f;
    std::vector<PartBox> boxes;  // on the query image
};

// Prototypes ranked by pooled score on this image; top_k clamps.
std::vector<RankedPrototype> local_analysis(const Model& model, const Tensor4& image,
                                            int top_k);

struct RankedImage {
    int image_id = 0;
    float score = 0.0f;
    std::vector<PartBox> boxes;
};

// Dataset images of a split ranked by one prototype's pooled score.
std::vector<RankedImage> global_analysis(const Model& model, const Dataset& dataset,
                                         int proto_index, const std::string& split, int top_k);

// 2-pixel outlines, one palette color per part index, clipped at borders.
void draw_part_boxes(PpmImage& img, const std::vector<PartBox>& boxes);

// Full-precision box geometry, one line per box (boxes reported unclipped).
std::string format_box_sidecar(const std::vector<PartBox>& boxes);

extern const std::array<std::array<std::uint8_t, 3>, 9> kPartPalette;

} // namespace dppn
