#include "dppn/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace dppn {

TrainSchedule TrainSchedule::from_config(const RunConfig& cfg) {
    TrainSchedule s;
    s.epochs_warm1 = cfg.epochs_warm1;
    s.epochs_warm2 = cfg.epochs_warm2;
    s.epochs_joint = cfg.epochs_joint;
    s.lr_prototypes = cfg.lr_prototypes;
    s.lr_backbone = cfg.lr_backbone;
    s.lr_offsets = cfg.lr_offsets;
    s.lr_last = cfg.lr_last;
    s.lr_decay = cfg.lr_decay;
    s.lr_decay_every = cfg.lr_decay_every;
    s.projection_epochs = cfg.projection_epochs;
    s.epochs_last = cfg.epochs_last;
    s.batch_size = cfg.batch_size;
    s.momentum = cfg.momentum;
    return s;
}

LossWeights weights_from_config(const RunConfig& cfg) {
    LossWeights w;
    w.lambda_sep = cfg.lambda_sep;
    w.lambda_clst = cfg.lambda_clst;
    w.lambda_ortho = cfg.lambda_ortho;
    w.margin_phi = cfg.margin_phi;
    w.lambda_l1_last = cfg.lambda_l1_last;
    return w;
}

OptState OptState::zeros_like(const Model& model) {
    OptState s;
    for (const ConvLayer& l : model.backbone) {
        s.backbone_w.emplace_back(l.weights.n(), l.weights.c(), l.weights.h(), l.weights.w(),
                                  0.0f);
        s.backbone_b.emplace_back(l.bias.size(), 0.0f);
    }
    for (const DeformablePrototype& p : model.prototypes)
        s.parts.emplace_back(p.parts.size(), 0.0f);
    if (!model.cfg.nd) {
        const ConvLayer& c1 = model.branch.conv1;
        const ConvLayer& c2 = model.branch.conv2;
        s.branch1_w = Tensor4(c1.weights.n(), c1.weights.c(), c1.weights.h(), c1.weights.w());
        s.branch2_w = Tensor4(c2.weights.n(), c2.weights.c(), c2.weights.h(), c2.weights.w());
        s.branch1_b.assign(c1.bias.size(), 0.0f);
        s.branch2_b.assign(c2.bias.size(), 0.0f);
    }
    return s;
}

Stage1Breakdown stage1_epoch(Model& model, const Dataset& dataset, Stage1Phase phase,
                             float lr_scale, const TrainSchedule& schedule,
                             const LossWeights& weights, OptState& opt, Rng& rng) {
    std::vector<int> ids = dataset.split_indices("train");
    if (ids.empty())
        throw std::invalid_argument("stage1_epoch: no training images");
    rng.shuffle(ids.begin(), ids.end());

    const bool update_backbone = phase != Stage1Phase::kWarm1;
    const bool update_branch = phase == Stage1Phase::kJoint && !model.cfg.nd;
    const float lr_parts = schedule.lr_prototypes * lr_scale;
    const float lr_backbone = schedule.lr_backbone * lr_scale;
    const float lr_branch = schedule.lr_offsets * lr_scale;

    Stage1Breakdown mean;
    int batches = 0;
    for (std::size_t start = 0; start < ids.size(); start += schedule.batch_size) {
        const std::size_t end = std::min(ids.size(), start + schedule.batch_size);
        const std::vector<int> batch_ids(ids.begin() + start, ids.begin() + end);
        const Tensor4 images =
            dataset.batch(batch_ids, model.cfg.pixel_mean, model.cfg.pixel_std);
        std::vector<int> labels(batch_ids.size());
        for (std::size_t i = 0; i < batch_ids.size(); ++i)
            labels[i] = dataset.label(batch_ids[i]);

        Stage1Result result = stage1_loss(model, images, labels, weights);

        for (std::size_t k = 0; k < model.prototypes.size(); ++k) {
            sgd_step(model.prototypes[k].parts, result.grads.layer.parts[k], lr_parts,
                     opt.parts[k], schedule.momentum);
            renormalize_parts(model.prototypes[k]);
        }
        if (update_backbone) {
            for (std::size_t i = 0; i < model.backbone.size(); ++i) {
                sgd_step(model.backbone[i].weights, result.grads.backbone[i].weights,
                         lr_backbone, opt.backbone_w[i], schedule.momentum);
                sgd_step(model.backbone[i].bias, result.grads.backbone[i].bias, lr_backbone,
                         opt.backbone_b[i], schedule.momentum);
            }
        }
        if (update_branch) {
            sgd_step(model.branch.conv1.weights, result.grads.layer.branch1.weights, lr_branch,
                     opt.branch1_w, schedule.momentum);
            sgd_step(model.branch.conv1.bias, result.grads.layer.branch1.bias, lr_branch,
                     opt.branch1_b, schedule.momentum);
            sgd_step(model.branch.conv2.weights, result.grads.layer.branch2.weights, lr_branch,
                     opt.branch2_w, schedule.momentum);
            sgd_step(model.branch.conv2.bias, result.grads.layer.branch2.bias, lr_branch,
                     opt.branch2_b, schedule.momentum);
        }

        mean.ce_margin += result.losses.ce_margin;
        mean.sep += result.losses.sep;
        mean.clst += result.losses.clst;
        mean.ortho += result.losses.ortho;
        mean.total += result.losses.total;
        ++batches;
    }
    mean.ce_margin /= batches;
    mean.sep /= batches;
    mean.clst /= batches;
    mean.ortho /= batches;
    mean.total /= batches;
    return mean;
}

namespace {

Stage1Phase phase_of_epoch(const TrainSchedule& s, int epoch /* 1-based */) {
    if (epoch <= s.epochs_warm1) return Stage1Phase::kWarm1;
    if (epoch <= s.epochs_warm1 + s.epochs_warm2) return Stage1Phase::kWarm2;
    return Stage1Phase::kJoint;
}

const char* phase_name(Stage1Phase p) {
    switch (p) {
        case Stage1Phase::kWarm1: return "warm1";
        case Stage1Phase::kWarm2: return "warm2";
        default: return "joint";
    }
}

float lr_scale_of_epoch(const TrainSchedule& s, int epoch) {
    // decay counts joint-stage epochs
    if (phase_of_epoch(s, epoch) != Stage1Phase::kJoint || s.lr_decay_every < 1)
        return 1.0f;
    const int joint_epoch = epoch - s.epochs_warm1 - s.epochs_warm2;  // 1-based
    const int steps = (joint_epoch - 1) / s.lr_decay_every;
    return std::pow(s.lr_decay, static_cast<float>(steps));
}

} // namespace

void train_stage1(Model& model, const Dataset& dataset, const TrainSchedule& schedule,
                  const LossWeights& weights, std::vector<EpochLog>* log) {
    Rng rng(model.cfg.seed + 1);
    OptState opt = OptState::zeros_like(model);
    for (int epoch = 1; epoch <= schedule.total_epochs(); ++epoch) {
        const Stage1Phase phase = phase_of_epoch(schedule, epoch);
        const Stage1Breakdown losses = stage1_epoch(
            model, dataset, phase, lr_scale_of_epoch(schedule, epoch), schedule, weights, opt,
            rng);
        if (log) log->push_back({epoch, phase_name(phase), losses});
    }
}

namespace {

struct Candidate {
    double score = -std::numeric_limits<double>::infinity();
    int image = -1;
    int a = 0, b = 0;
    std::vector<std::array<float, 2>> offsets;
};

// all deformed sample positions inside [0, eta-1] so every interpolated
// vector keeps norm r
bool collect_offsets(const DeformablePrototype& proto, const Tensor4& offsets, int batch,
                     int a, int b, int eta1, int eta2,
                     std::vector<std::array<float, 2>>& out) {
    out.clear();
    for (int mi = 0; mi < proto.rho1; ++mi) {
        for (int ni = 0; ni < proto.rho2; ++ni) {
            const int k = mi * proto.rho2 + ni;
            const float d1 = offsets.at(batch, 2 * k, a, b);
            const float d2 = offsets.at(batch, 2 * k + 1, a, b);
            const float x = static_cast<float>(a + proto.row_offset(mi)) + d1;
            const float y = static_cast<float>(b + proto.col_offset(ni)) + d2;
            if (x < 0.0f || x > static_cast<float>(eta1 - 1) || y < 0.0f ||
                y > static_cast<float>(eta2 - 1))
                return false;
            out.push_back({d1, d2});
        }
    }
    return true;
}

} // namespace

std::vector<ProjectionRecord> project_prototypes(Model& model, const Dataset& dataset) {
    const int K = model.num_prototypes();
    std::vector<Candidate> best(K);

    std::vector<std::vector<int>> class_images(model.cfg.num_classes);
    for (int id : dataset.split_indices("train"))
        class_images[dataset.label(id)].push_back(id);
    for (int c = 0; c < model.cfg.num_classes; ++c)
        if (class_images[c].empty())
            throw std::invalid_argument("project_prototypes: class " + std::to_string(c) +
                                        " has no training images");

    // seed incumbents from existing provenance so an immediate re-projection
    // keeps the source configuration on exact ties
    std::vector<std::array<float, 2>> scratch;
    for (const ProjectionRecord& rec : model.provenance) {
        if (rec.prototype < 0 || rec.prototype >= K) continue;
        if (rec.image < 0 || rec.image >= static_cast<int>(dataset.images.size())) continue;
        const Tensor4 image =
            dataset.batch({rec.image}, model.cfg.pixel_mean, model.cfg.pixel_std);
        const ForwardCache cache = model_forward(model, image);
        const int eta1 = cache.layer.maps.h(), eta2 = cache.layer.maps.w();
        if (rec.center_a < 0 || rec.center_a >= eta1 || rec.center_b < 0 ||
            rec.center_b >= eta2)
            continue;
        if (!collect_offsets(model.prototypes[rec.prototype], cache.layer.offsets, 0,
                             rec.center_a, rec.center_b, eta1, eta2, scratch))
            continue;
        Candidate& inc = best[rec.prototype];
        inc.score = cache.layer.maps.at(0, rec.prototype, rec.center_a, rec.center_b);
        inc.image = rec.image;
        inc.a = rec.center_a;
        inc.b = rec.center_b;
        inc.offsets = scratch;
    }

    // pass 1: scan with the model fixed
    for (int c = 0; c < model.cfg.num_classes; ++c) {
        for (int id : class_images[c]) {
            const Tensor4 image = dataset.batch({id}, model.cfg.pixel_mean, model.cfg.pixel_std);
            const ForwardCache cache = model_forward(model, image);
            const int eta1 = cache.layer.maps.h(), eta2 = cache.layer.maps.w();
            int a_lo = 0, a_hi = eta1, b_lo = 0, b_hi = eta2;
            if (model.cfg.interior_only) {
                const auto& p = model.prototypes.front();
                a_lo = -p.row_offset(0);
                a_hi = eta1 - p.row_offset(p.rho1 - 1);
                b_lo = -p.col_offset(0);
                b_hi = eta2 - p.col_offset(p.rho2 - 1);
            }
            for (int k = 0; k < K; ++k) {
                if (model.proto_class(k) != c) continue;
                for (int a = a_lo; a < a_hi; ++a) {
                    for (int b = b_lo; b < b_hi; ++b) {
                        const double v = cache.layer.maps.at(0, k, a, b);
                        if (v <= best[k].score) continue;
                        if (!collect_offsets(model.prototypes[k], cache.layer.offsets, 0, a, b,
                                             eta1, eta2, scratch))
                            continue;
                        best[k].score = v;
                        best[k].image = id;
                        best[k].a = a;
                        best[k].b = b;
                        best[k].offsets = scratch;
                    }
                }
            }
        }
    }

    for (int k = 0; k < K; ++k)
        if (best[k].image < 0)
            throw std::runtime_error(
                "project_prototypes: no fully in-grid candidate for prototype " +
                std::to_string(k));

    // pass 2: overwrite parts with the interpolated features of the winner
    std::vector<ProjectionRecord> records;
    for (int k = 0; k < K; ++k) {
        const Candidate& cand = best[k];
        const Tensor4 image =
            dataset.batch({cand.image}, model.cfg.pixel_mean, model.cfg.pixel_std);
        const ForwardCache cache = model_forward(model, image);
        const UnitFeatureMap& zhat = cache.layer.zhat;
        DeformablePrototype& proto = model.prototypes[k];
        for (int mi = 0; mi < proto.rho1; ++mi) {
            for (int ni = 0; ni < proto.rho2; ++ni) {
                const int part = mi * proto.rho2 + ni;
                const float x = static_cast<float>(cand.a + proto.row_offset(mi)) +
                                cand.offsets[part][0];
                const float y = static_cast<float>(cand.b + proto.col_offset(ni)) +
                                cand.offsets[part][1];
                const std::vector<float> vec = norm_preserving_interpolate(zhat, 0, x, y);
                std::copy(vec.begin(), vec.end(), proto.part(part).begin());
            }
        }
        ProjectionRecord rec;
        rec.prototype = k;
        rec.image = cand.image;
        rec.center_a = cand.a;
        rec.center_b = cand.b;
        rec.part_offsets = cand.offsets;
        rec.cosine = static_cast<float>(cand.score);
        records.push_back(rec);
    }
    model.provenance = records;
    return records;
}

namespace {

// pooled no-margin scores for a split, batched
std::vector<float> split_scores(const Model& model, const Dataset& dataset,
                                const std::vector<int>& ids, int batch_size) {
    const int K = model.num_prototypes();
    std::vector<float> scores(ids.size() * static_cast<std::size_t>(K), 0.0f);
    for (std::size_t start = 0; start < ids.size(); start += batch_size) {
        const std::size_t end = std::min(ids.size(), start + batch_size);
        const std::vector<int> batch_ids(ids.begin() + start, ids.begin() + end);
        const Tensor4 images =
            dataset.batch(batch_ids, model.cfg.pixel_mean, model.cfg.pixel_std);
        const ForwardCache cache = model_forward(model, images);
        for (std::size_t i = 0; i < batch_ids.size(); ++i)
            for (int k = 0; k < K; ++k)
                scores[(start + i) * K + k] =
                    cache.layer.score(static_cast<int>(i), k, K);
    }
    return scores;
}

} // namespace

void train_last_layer(Model& model, const Dataset& dataset, const TrainSchedule& schedule,
                      const LossWeights& weights) {
    const std::vector<int> ids = dataset.split_indices("train");
    if (ids.empty())
        throw std::invalid_argument("train_last_layer: no training images");
    const int n = static_cast<int>(ids.size());
    const int K = model.num_prototypes();
    const int C = model.cfg.num_classes;
    const std::vector<float> scores = split_scores(model, dataset, ids, schedule.batch_size);
    std::vector<int> labels(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        labels[i] = dataset.label(ids[i]);

    // full-batch proximal gradient: CE step, then soft-threshold the
    // off-class entries by lr*lambda
    std::vector<float> grad;
    for (int it = 0; it < schedule.epochs_last; ++it) {
        last_layer_loss(scores, n, model.last_layer, labels, 0.0f, &grad);
        const float lr = schedule.lr_last;
        const float shrink = lr * weights.lambda_l1_last;
        for (int k = 0; k < K; ++k) {
            for (int c = 0; c < C; ++c) {
                float w = model.last_layer.at(k, c) - lr * grad[static_cast<std::size_t>(k) * C + c];
                if (model.proto_class(k) != c) {
                    if (w > shrink)
                        w -= shrink;
                    else if (w < -shrink)
                        w += shrink;
                    else
                        w = 0.0f;
                }
                model.last_layer.at(k, c) = w;
            }
        }
    }
}

EvalResult evaluate(const Model& model, const Dataset& dataset, const std::string& split) {
    const std::vector<int> ids = dataset.split_indices(split);
    if (ids.empty())
        throw std::invalid_argument("evaluate: split '" + split + "' is empty");
    const int K = model.num_prototypes();
    const int C = model.cfg.num_classes;
    const std::vector<float> scores =
        split_scores(model, dataset, ids, std::max(1, model.cfg.batch_size));

    EvalResult result;
    result.image_ids = ids;
    int correct = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::span<const float> row(scores.data() + i * K, static_cast<std::size_t>(K));
        const std::vector<double> logits = class_logits(model, row, 1);
        int pred = 0;
        for (int c = 1; c < C; ++c)
            if (logits[c] > logits[pred]) pred = c;  // ties keep the lowest class index
        const int label = dataset.label(ids[i]);
        correct += pred == label;
        result.labels.push_back(label);
        result.predictions.push_back(pred);
        result.top_scores.push_back(*std::max_element(row.begin(), row.end()));
        result.logits.push_back(logits);
    }
    result.accuracy = static_cast<double>(correct) / static_cast<double>(ids.size());
    return result;
}

std::vector<EpochLog> run_training(Model& model, const Dataset& dataset,
                                   const LossWeights& weights,
                                   const std::function<void(int, const Model&)>& on_epoch) {
    const TrainSchedule schedule = TrainSchedule::from_config(model.cfg);
    std::vector<int> events = schedule.projection_epochs;
    events.push_back(schedule.total_epochs());  // always project + fit h at the end
    std::sort(events.begin(), events.end());
    events.erase(std::unique(events.begin(), events.end()), events.end());

    std::vector<EpochLog> log;
    Rng rng(model.cfg.seed + 1);
    OptState opt = OptState::zeros_like(model);
    for (int epoch = 1; epoch <= schedule.total_epochs(); ++epoch) {
        const Stage1Phase phase = phase_of_epoch(schedule, epoch);
        const Stage1Breakdown losses = stage1_epoch(
            model, dataset, phase, lr_scale_of_epoch(schedule, epoch), schedule, weights, opt,
            rng);
        log.push_back({epoch, phase_name(phase), losses});
        if (std::binary_search(events.begin(), events.end(), epoch)) {
            project_prototypes(model, dataset);
            train_last_layer(model, dataset, schedule, weights);
            opt = OptState::zeros_like(model);  // parts were overwritten
        }
        if (on_epoch) on_epoch(epoch, model);
    }
    return log;
}

} // namespace dppn
