#include "dppn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dppn {

namespace {

void check_class_coverage(const std::vector<int>& proto_class, int num_classes) {
    std::vector<int> count(num_classes, 0);
    for (int c : proto_class) {
        if (c < 0 || c >= num_classes)
            throw std::invalid_argument("loss: prototype class id out of range");
        ++count[c];
    }
    for (int c = 0; c < num_classes; ++c)
        if (count[c] == 0)
            throw std::invalid_argument("loss: class " + std::to_string(c) +
                                        " owns no prototypes");
}

double max_pool_over_protos(std::span<const float> scores, int num_images, int num_protos,
                            const std::vector<int>& labels, const std::vector<int>& proto_class,
                            int num_classes, bool same_class, std::vector<int>* argmax_out) {
    check_class_coverage(proto_class, num_classes);
    if (static_cast<int>(labels.size()) != num_images)
        throw std::invalid_argument("loss: labels length != batch size");
    if (argmax_out) argmax_out->assign(num_images, -1);
    double acc = 0.0;
    for (int i = 0; i < num_images; ++i) {
        float best = -std::numeric_limits<float>::infinity();
        int best_k = -1;
        for (int k = 0; k < num_protos; ++k) {
            const bool matches = proto_class[k] == labels[i];
            if (matches != same_class) continue;
            const float v = scores[static_cast<std::size_t>(i) * num_protos + k];
            if (v > best) {
                best = v;
                best_k = k;
            }
        }
        if (best_k < 0) continue;  // e.g. single-class dataset and same_class == false
        if (argmax_out) (*argmax_out)[i] = best_k;
        acc += best;
    }
    return acc / num_images;
}

constexpr double kCosClamp = 1.0 - 1e-7;

} // namespace

double cluster_loss(std::span<const float> scores, int num_images, int num_protos,
                    const std::vector<int>& labels, const std::vector<int>& proto_class,
                    int num_classes, std::vector<int>* argmax_out) {
    return -max_pool_over_protos(scores, num_images, num_protos, labels, proto_class,
                                 num_classes, true, argmax_out);
}

double separation_loss(std::span<const float> scores, int num_images, int num_protos,
                       const std::vector<int>& labels, const std::vector<int>& proto_class,
                       int num_classes, std::vector<int>* argmax_out) {
    return max_pool_over_protos(scores, num_images, num_protos, labels, proto_class,
                                num_classes, false, argmax_out);
}

std::vector<MarginAdjusted> subtractive_margin_scores(const LayerCache& cache, int num_protos,
                                                      const std::vector<int>& labels,
                                                      const std::vector<int>& proto_class,
                                                      float phi) {
    const int n = cache.maps.n();
    const int eta1 = cache.maps.h(), eta2 = cache.maps.w();
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("subtractive_margin: labels length != batch size");

    std::vector<MarginAdjusted> out(static_cast<std::size_t>(n) * num_protos);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < num_protos; ++k) {
            MarginAdjusted& m = out[static_cast<std::size_t>(i) * num_protos + k];
            if (proto_class[k] == labels[i]) {
                m.value = cache.score(i, k, num_protos);
                m.chain = 1.0f;
                const auto [a, b] = cache.argmax[static_cast<std::size_t>(i) * num_protos + k];
                m.a = a;
                m.b = b;
                continue;
            }
            // re-run the max over margin-adjusted per-center values
            double best = -std::numeric_limits<double>::infinity();
            int best_a = 0, best_b = 0;
            double best_theta = 0.0;
            for (int a = 0; a < eta1; ++a) {
                for (int b = 0; b < eta2; ++b) {
                    const double g = std::clamp(
                        static_cast<double>(cache.maps.at(i, k, a, b)), -kCosClamp, kCosClamp);
                    const double theta = std::acos(g);
                    const double adjusted = std::cos(std::max(0.0, theta - phi));
                    if (adjusted > best) {
                        best = adjusted;
                        best_a = a;
                        best_b = b;
                        best_theta = theta;
                    }
                }
            }
            m.value = static_cast<float>(best);
            m.a = best_a;
            m.b = best_b;
            m.chain = best_theta > phi
                          ? static_cast<float>(std::sin(best_theta - phi) / std::sin(best_theta))
                          : 0.0f;
        }
    }
    return out;
}

namespace {

// mean softmax cross entropy shared by the margin and last-layer paths;
// grad_logits receives (softmax - onehot)/N when requested
double softmax_ce(const std::vector<double>& logits, int num_images, int num_classes,
                  const std::vector<int>& labels, std::vector<double>* grad_logits) {
    if (grad_logits) grad_logits->assign(logits.size(), 0.0);
    double loss = 0.0;
    for (int i = 0; i < num_images; ++i) {
        const double* l = logits.data() + static_cast<std::size_t>(i) * num_classes;
        double mx = l[0];
        for (int c = 1; c < num_classes; ++c) mx = std::max(mx, l[c]);
        double denom = 0.0;
        for (int c = 0; c < num_classes; ++c) denom += std::exp(l[c] - mx);
        loss += -(l[labels[i]] - mx) + std::log(denom);
        if (grad_logits) {
            double* g = grad_logits->data() + static_cast<std::size_t>(i) * num_classes;
            for (int c = 0; c < num_classes; ++c)
                g[c] = (std::exp(l[c] - mx) / denom - (c == labels[i] ? 1.0 : 0.0)) / num_images;
        }
    }
    return loss / num_images;
}

} // namespace

double margin_cross_entropy(const std::vector<MarginAdjusted>& adjusted, int num_images,
                            const LastLayer& last, const std::vector<int>& labels,
                            std::vector<float>* grad_adjusted) {
    const int K = last.num_prototypes;
    const int C = last.num_classes;
    std::vector<double> logits(static_cast<std::size_t>(num_images) * C, 0.0);
    for (int i = 0; i < num_images; ++i)
        for (int k = 0; k < K; ++k)
            for (int c = 0; c < C; ++c)
                logits[static_cast<std::size_t>(i) * C + c] +=
                    static_cast<double>(last.at(k, c)) *
                    adjusted[static_cast<std::size_t>(i) * K + k].value;

    std::vector<double> grad_logits;
    const double loss = softmax_ce(logits, num_images, C, labels,
                                   grad_adjusted ? &grad_logits : nullptr);
    if (grad_adjusted) {
        grad_adjusted->assign(static_cast<std::size_t>(num_images) * K, 0.0f);
        for (int i = 0; i < num_images; ++i)
            for (int k = 0; k < K; ++k) {
                double acc = 0.0;
                for (int c = 0; c < C; ++c)
                    acc += grad_logits[static_cast<std::size_t>(i) * C + c] * last.at(k, c);
                (*grad_adjusted)[static_cast<std::size_t>(i) * K + k] = static_cast<float>(acc);
            }
    }
    return loss;
}

double orthogonality_loss(const std::vector<DeformablePrototype>& protos, int num_classes,
                          std::vector<std::vector<float>>* grad_parts) {
    if (grad_parts) {
        grad_parts->resize(protos.size());
        for (std::size_t k = 0; k < protos.size(); ++k)
            (*grad_parts)[k].assign(protos[k].parts.size(), 0.0f);
    }
    double total = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        // gather row views (prototype index, part index) for this class
        std::vector<std::pair<int, int>> rows;
        for (std::size_t k = 0; k < protos.size(); ++k)
            if (protos[k].class_id == c)
                for (int p = 0; p < protos[k].rho(); ++p)
                    rows.emplace_back(static_cast<int>(k), p);
        if (rows.empty()) continue;
        const int dim = protos[rows.front().first].dim;
        const double r2 = static_cast<double>(protos[rows.front().first].radius) *
                          protos[rows.front().first].radius;
        const int R = static_cast<int>(rows.size());
        std::vector<double> gram(static_cast<std::size_t>(R) * R, 0.0);
        for (int u = 0; u < R; ++u) {
            const auto pu = protos[rows[u].first].part(rows[u].second);
            for (int v = 0; v < R; ++v) {
                const auto pv = protos[rows[v].first].part(rows[v].second);
                double dot = 0.0;
                for (int ch = 0; ch < dim; ++ch)
                    dot += static_cast<double>(pu[ch]) * pv[ch];
                gram[static_cast<std::size_t>(u) * R + v] = dot - (u == v ? r2 : 0.0);
            }
        }
        for (double m : gram) total += m * m;
        if (grad_parts) {
            for (int u = 0; u < R; ++u) {
                float* gu = (*grad_parts)[rows[u].first].data() +
                            static_cast<std::size_t>(rows[u].second) * dim;
                for (int v = 0; v < R; ++v) {
                    const double m = gram[static_cast<std::size_t>(u) * R + v];
                    if (m == 0.0) continue;
                    const auto pv = protos[rows[v].first].part(rows[v].second);
                    for (int ch = 0; ch < dim; ++ch)
                        gu[ch] += static_cast<float>(4.0 * m * pv[ch]);
                }
            }
        }
    }
    return total;
}

double last_layer_loss(std::span<const float> scores, int num_images, const LastLayer& last,
                       const std::vector<int>& labels, float lambda_l1,
                       std::vector<float>* grad_w) {
    const int K = last.num_prototypes;
    const int C = last.num_classes;
    std::vector<double> logits(static_cast<std::size_t>(num_images) * C, 0.0);
    for (int i = 0; i < num_images; ++i)
        for (int k = 0; k < K; ++k)
            for (int c = 0; c < C; ++c)
                logits[static_cast<std::size_t>(i) * C + c] +=
                    static_cast<double>(last.at(k, c)) *
                    scores[static_cast<std::size_t>(i) * K + k];

    std::vector<double> grad_logits;
    double loss = softmax_ce(logits, num_images, C, labels, grad_w ? &grad_logits : nullptr);

    if (grad_w) grad_w->assign(last.w.size(), 0.0f);
    if (K % C != 0)
        throw std::invalid_argument("last_layer_loss: prototypes not evenly split over classes");
    double l1 = 0.0;
    for (int k = 0; k < K; ++k) {
        for (int c = 0; c < C; ++c) {
            double g = 0.0;
            if (grad_w)
                for (int i = 0; i < num_images; ++i)
                    g += grad_logits[static_cast<std::size_t>(i) * C + c] *
                         scores[static_cast<std::size_t>(i) * K + k];
            const bool off_class = (k / (K / C)) != c;
            if (off_class) {
                const double w = last.at(k, c);
                l1 += std::abs(w);
                if (grad_w) g += lambda_l1 * (w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0));
            }
            if (grad_w)
                (*grad_w)[static_cast<std::size_t>(k) * C + c] = static_cast<float>(g);
        }
    }
    return loss + lambda_l1 * l1;
}

BatchLossInfo stage1_batch_losses(const Model& model, const LayerCache& cache,
                                  const std::vector<int>& labels, const LossWeights& weights) {
    const int n = cache.maps.n();
    const int K = model.num_prototypes();
    std::vector<int> proto_class(K);
    for (int k = 0; k < K; ++k) proto_class[k] = model.proto_class(k);

    BatchLossInfo info;

    std::vector<int> clst_argmax, sep_argmax;
    info.losses.clst = cluster_loss(cache.scores, n, K, labels, proto_class,
                                    model.cfg.num_classes, &clst_argmax);
    info.losses.sep = separation_loss(cache.scores, n, K, labels, proto_class,
                                      model.cfg.num_classes, &sep_argmax);

    const std::vector<MarginAdjusted> adjusted =
        subtractive_margin_scores(cache, K, labels, proto_class, weights.margin_phi);
    std::vector<float> grad_adjusted;
    info.losses.ce_margin =
        margin_cross_entropy(adjusted, n, model.last_layer, labels, &grad_adjusted);

    info.losses.ortho =
        orthogonality_loss(model.prototypes, model.cfg.num_classes, &info.ortho_grad_parts);
    for (auto& g : info.ortho_grad_parts)
        for (float& v : g)
            v *= weights.lambda_ortho;

    info.losses.total = info.losses.ce_margin + weights.lambda_sep * info.losses.sep +
                        weights.lambda_clst * info.losses.clst +
                        weights.lambda_ortho * info.losses.ortho;

    // margin cross entropy enters at each prototype's margin routing center
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < K; ++k) {
            const std::size_t idx = static_cast<std::size_t>(i) * K + k;
            const float w = grad_adjusted[idx] * adjusted[idx].chain;
            if (w != 0.0f)
                info.contribs.push_back({i, k, adjusted[idx].a, adjusted[idx].b, w});
        }
    }
    // cluster / separation enter at the pooled argmax of the winning prototype
    for (int i = 0; i < n; ++i) {
        if (clst_argmax[i] >= 0) {
            const int k = clst_argmax[i];
            const auto [a, b] = cache.argmax[static_cast<std::size_t>(i) * K + k];
            info.contribs.push_back({i, k, a, b, -weights.lambda_clst / n});
        }
        if (sep_argmax[i] >= 0) {
            const int k = sep_argmax[i];
            const auto [a, b] = cache.argmax[static_cast<std::size_t>(i) * K + k];
            info.contribs.push_back({i, k, a, b, weights.lambda_sep / n});
        }
    }
    return info;
}

Stage1Result stage1_loss(const Model& model, const Tensor4& images,
                         const std::vector<int>& labels, const LossWeights& weights) {
    const ForwardCache cache = model_forward(model, images);
    BatchLossInfo info = stage1_batch_losses(model, cache.layer, labels, weights);
    Stage1Result result;
    result.losses = info.losses;
    result.grads = model_backward(model, cache, info.contribs);
    for (std::size_t k = 0; k < info.ortho_grad_parts.size(); ++k)
        for (std::size_t j = 0; j < info.ortho_grad_parts[k].size(); ++j)
            result.grads.layer.parts[k][j] += info.ortho_grad_parts[k][j];
    return result;
}

} // namespace dppn
