#include "dppn/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace dppn {

const std::array<std::array<std::uint8_t, 3>, 9> kPartPalette = {{
    {230, 25, 75},    // red
    {60, 180, 75},    // green
    {255, 225, 25},   // yellow
    {0, 130, 200},    // blue
    {245, 130, 48},   // orange
    {145, 30, 180},   // purple
    {70, 240, 240},   // cyan
    {240, 50, 230},   // magenta
    {250, 190, 212},  // pink
}};

int downsampling_factor(const Model& model) {
    const int latent = model.latent_h();
    if (latent < 1 || model.cfg.image_size % latent != 0)
        throw std::invalid_argument(
            "downsampling_factor: image size not divisible by latent size");
    return model.cfg.image_size / latent;
}

namespace {

std::vector<PartBox> boxes_at_center(const Model& model, const DeformablePrototype& proto,
                                     const Tensor4& offsets, int batch, int a, int b,
                                     int source_image) {
    const float gamma = static_cast<float>(downsampling_factor(model));
    std::vector<PartBox> boxes;
    for (int mi = 0; mi < proto.rho1; ++mi) {
        for (int ni = 0; ni < proto.rho2; ++ni) {
            const int k = mi * proto.rho2 + ni;
            PartBox box;
            box.m_index = mi;
            box.n_index = ni;
            box.center_row = gamma * (static_cast<float>(a + proto.row_offset(mi)) +
                                      offsets.at(batch, 2 * k, a, b));
            box.center_col = gamma * (static_cast<float>(b + proto.col_offset(ni)) +
                                      offsets.at(batch, 2 * k + 1, a, b));
            box.side = gamma;
            box.source_image = source_image;
            boxes.push_back(box);
        }
    }
    return boxes;
}

} // namespace

std::vector<PartBox> visualize_prototype(const Model& model, const Tensor4& image,
                                         int proto_index, int source_image_id) {
    if (proto_index < 0 || proto_index >= model.num_prototypes())
        throw std::invalid_argument("visualize_prototype: prototype index out of range");
    const ForwardCache cache = model_forward(model, image);
    const auto [a, b] =
        cache.layer.argmax[static_cast<std::size_t>(proto_index)];
    return boxes_at_center(model, model.prototypes[proto_index], cache.layer.offsets, 0, a, b,
                           source_image_id);
}

std::vector<PartBox> provenance_boxes(const Model& model, int proto_index) {
    const ProjectionRecord* rec = nullptr;
    for (const ProjectionRecord& r : model.provenance)
        if (r.prototype == proto_index) rec = &r;
    if (!rec)
        throw std::invalid_argument("provenance_boxes: prototype has no projection record");
    const float gamma = static_cast<float>(downsampling_factor(model));
    const DeformablePrototype& proto = model.prototypes[proto_index];
    std::vector<PartBox> boxes;
    for (int mi = 0; mi < proto.rho1; ++mi) {
        for (int ni = 0; ni < proto.rho2; ++ni) {
            const int k = mi * proto.rho2 + ni;
            PartBox box;
            box.m_index = mi;
            box.n_index = ni;
            box.center_row = gamma * (static_cast<float>(rec->center_a + proto.row_offset(mi)) +
                                      rec->part_offsets[k][0]);
            box.center_col = gamma * (static_cast<float>(rec->center_b + proto.col_offset(ni)) +
                                      rec->part_offsets[k][1]);
            box.side = gamma;
            box.source_image = rec->image;
            boxes.push_back(box);
        }
    }
    return boxes;
}

ReasoningReport reasoning_report(const Model& model, const Tensor4& image) {
    const ForwardCache cache = model_forward(model, image);
    const int K = model.num_prototypes();
    const int C = model.cfg.num_classes;

    ReasoningReport report;
    report.scores.assign(cache.layer.scores.begin(), cache.layer.scores.begin() + K);
    report.contributions.resize(K);
    report.class_totals.assign(C, 0.0);
    for (int k = 0; k < K; ++k) {
        report.contributions[k].resize(C);
        for (int c = 0; c < C; ++c) {
            const float contrib = model.last_layer.at(k, c) * report.scores[k];
            report.contributions[k][c] = contrib;
            report.class_totals[c] += contrib;
        }
        report.own_weight.push_back(model.last_layer.at(k, model.proto_class(k)));
    }
    report.predicted = 0;
    for (int c = 1; c < C; ++c)
        if (report.class_totals[c] > report.class_totals[report.predicted])
            report.predicted = c;
    return report;
}

std::string format_reasoning_report(const Model& model, const ReasoningReport& report) {
    std::ostringstream out;
    char buf[160];
    for (int k = 0; k < model.num_prototypes(); ++k) {
        const int c = model.proto_class(k);
        std::snprintf(buf, sizeof buf, "proto=%d/%d score=%.6f weight=%.6f contrib=%.6f\n", c,
                      model.prototypes[k].index_within_class, report.scores[k],
                      report.own_weight[k], report.contributions[k][c]);
        out << buf;
    }
    for (int c = 0; c < model.cfg.num_classes; ++c) {
        std::snprintf(buf, sizeof buf, "class=%d total=%.6f\n", c, report.class_totals[c]);
        out << buf;
    }
    out << "predicted=" << report.predicted << "\n";
    return out.str();
}

std::vector<RankedPrototype> local_analysis(const Model& model, const Tensor4& image,
                                            int top_k) {
    const ForwardCache cache = model_forward(model, image);
    const int K = model.num_prototypes();
    std::vector<int> order(K);
    for (int k = 0; k < K; ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](int lhs, int rhs) {
        return cache.layer.score(0, lhs, K) > cache.layer.score(0, rhs, K);
    });
    top_k = std::clamp(top_k, 0, K);

    std::vector<RankedPrototype> out;
    for (int rank = 0; rank < top_k; ++rank) {
        const int k = order[rank];
        RankedPrototype rp;
        rp.proto_index = k;
        rp.score = cache.layer.score(0, k, K);
        const auto [a, b] = cache.layer.argmax[static_cast<std::size_t>(k)];
        rp.boxes = boxes_at_center(model, model.prototypes[k], cache.layer.offsets, 0, a, b, -1);
        out.push_back(std::move(rp));
    }
    return out;
}

std::vector<RankedImage> global_analysis(const Model& model, const Dataset& dataset,
                                         int proto_index, const std::string& split,
                                         int top_k) {
    if (proto_index < 0 || proto_index >= model.num_prototypes())
        throw std::invalid_argument("global_analysis: prototype index out of range");
    const std::vector<int> ids = dataset.split_indices(split);
    if (ids.empty())
        throw std::invalid_argument("global_analysis: split '" + split + "' is empty");

    std::vector<RankedImage> ranked;
    for (int id : ids) {
        const Tensor4 image = dataset.batch({id}, model.cfg.pixel_mean, model.cfg.pixel_std);
        const ForwardCache cache = model_forward(model, image);
        RankedImage ri;
        ri.image_id = id;
        ri.score = cache.layer.score(0, proto_index, model.num_prototypes());
        const auto [a, b] = cache.layer.argmax[static_cast<std::size_t>(proto_index)];
        ri.boxes = boxes_at_center(model, model.prototypes[proto_index], cache.layer.offsets,
                                   0, a, b, id);
        ranked.push_back(std::move(ri));
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const RankedImage& lhs, const RankedImage& rhs) {
                         return lhs.score > rhs.score;
                     });
    if (top_k < static_cast<int>(ranked.size()))
        ranked.resize(std::max(0, top_k));
    return ranked;
}

namespace {

void fill_clipped(PpmImage& img, int y0, int y1, int x0, int x1,
                  const std::array<std::uint8_t, 3>& color) {
    for (int y = std::max(0, y0); y <= std::min(img.height - 1, y1); ++y)
        for (int x = std::max(0, x0); x <= std::min(img.width - 1, x1); ++x)
            for (int ch = 0; ch < 3; ++ch)
                img.at(y, x, ch) = color[ch];
}

} // namespace

void draw_part_boxes(PpmImage& img, const std::vector<PartBox>& boxes) {
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const PartBox& box = boxes[i];
        const auto& color = kPartPalette[i % kPartPalette.size()];
        const float half = box.side / 2.0f;
        // raster coordinates floor to integer pixels; the sidecar keeps exact values
        const int top = static_cast<int>(std::floor(box.center_row - half));
        const int bottom = static_cast<int>(std::floor(box.center_row + half)) - 1;
        const int left = static_cast<int>(std::floor(box.center_col - half));
        const int right = static_cast<int>(std::floor(box.center_col + half)) - 1;
        fill_clipped(img, top, top + 1, left, right, color);
        fill_clipped(img, bottom - 1, bottom, left, right, color);
        fill_clipped(img, top, bottom, left, left + 1, color);
        fill_clipped(img, top, bottom, right - 1, right, color);
    }
}

std::string format_box_sidecar(const std::vector<PartBox>& boxes) {
    std::ostringstream out;
    char buf[160];
    for (const PartBox& box : boxes) {
        std::snprintf(buf, sizeof buf, "part=%d,%d center=%.9g,%.9g side=%.9g source=%d\n",
                      box.m_index, box.n_index, static_cast<double>(box.center_row),
                      static_cast<double>(box.center_col), static_cast<double>(box.side),
                      box.source_image);
        out << buf;
    }
    return out.str();
}

} // namespace dppn
