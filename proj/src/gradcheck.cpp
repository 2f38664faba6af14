#include "dppn/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "dppn/losses.hpp"
#include "dppn/rng.hpp"
#include "dppn/train.hpp"

namespace dppn {

namespace {

constexpr float kStep = 1e-3f;
constexpr double kRelTol = 1e-3;
constexpr double kAbsFloor = 1e-5;

// max over coordinates of |a - n| / max(rel*max(|a|,|n|), floor), scaled so
// 1.0 is the pass boundary
double compare_grads(std::span<const float> analytic, std::span<const float> numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        const double bound = std::max(kRelTol * std::max(std::abs(a), std::abs(n)), kAbsFloor);
        worst = std::max(worst, std::abs(a - n) / bound);
    }
    return worst;
}

std::vector<float> fd_over_span(const std::function<double()>& eval, std::span<float> x) {
    std::vector<float> grad(x.size(), 0.0f);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float orig = x[i];
        const float hi = orig + kStep, lo = orig - kStep;
        x[i] = hi;
        const double fp = eval();
        x[i] = lo;
        const double fm = eval();
        x[i] = orig;
        grad[i] = static_cast<float>((fp - fm) / (static_cast<double>(hi) - lo));
    }
    return grad;
}

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.num_classes = 3;
    cfg.protos_per_class = 2;
    cfg.rho1 = 2;
    cfg.rho2 = 2;
    cfg.dilation = 2;
    cfg.feature_dim = 4;
    cfg.offset_hidden = 8;
    cfg.image_size = 12;
    cfg.in_channels = 3;
    cfg.backbone = {{4, 3, 2}};
    return cfg;
}

} // namespace

std::vector<GradCheckEntry> run_grad_checks(std::uint32_t seed) {
    Rng rng(seed);
    const RunConfig cfg = tiny_config();
    Model model = init_model(cfg, seed);

    // fractional offsets keep finite differences away from the piecewise
    // boundaries of the interpolation weights
    for (float& v : model.branch.conv2.weights.flat())
        v = rng.uniform(-0.25f, 0.25f);
    for (float& v : model.branch.conv2.bias)
        v = rng.uniform(-0.15f, 0.15f);

    const int n = 2;
    Tensor4 images(n, cfg.in_channels, cfg.image_size, cfg.image_size, 0.0f);
    for (float& v : images.flat())
        v = rng.uniform(-1.0f, 1.0f);
    const std::vector<int> labels = {0, 1};
    const LossWeights weights;

    const Stage1Result base = stage1_loss(model, images, labels, weights);
    Model work = model;
    const auto eval_total = [&]() {
        return stage1_loss(work, images, labels, weights).losses.total;
    };

    std::vector<GradCheckEntry> entries;
    const auto push = [&entries](const std::string& group, double err) {
        entries.push_back({group, err, err <= 1.0});
    };

    {
        double err = 0.0;
        for (std::size_t i = 0; i < model.backbone.size(); ++i) {
            const auto fd_w = fd_over_span(eval_total, work.backbone[i].weights.flat());
            err = std::max(err, compare_grads(base.grads.backbone[i].weights.flat(), fd_w));
            const auto fd_b = fd_over_span(eval_total, work.backbone[i].bias);
            err = std::max(err, compare_grads(base.grads.backbone[i].bias, fd_b));
        }
        push("backbone", err);
    }

    {
        // gradient at the raw (pre-augment) feature tensor, composing the
        // normalization backward with all three interpolation paths
        const ForwardCache cache = model_forward(model, images);
        Tensor4 z = cache.z;
        const auto eval_from_z = [&]() {
            const Tensor4 z_aug = augment_epsilon(z, model.cfg.epsilon);
            const UnitFeatureMap zhat =
                normalize_locations(z_aug, model.radius(), model.cfg.rho());
            const LayerCache layer = layer_forward(zhat, model.prototypes,
                                                   model.branch_or_null(),
                                                   model.cfg.interior_only);
            return stage1_batch_losses(model, layer, labels, weights).losses.total;
        };
        const auto fd = fd_over_span(eval_from_z, z.flat());
        push("normalization", compare_grads(base.grads.z.flat(), fd));
    }

    {
        // interpolation checked in isolation on a random norm-r feature map
        Tensor4 raw(1, cfg.feature_dim + 1, 6, 6, 0.0f);
        for (float& v : raw.flat())
            v = rng.uniform(0.1f, 1.0f);
        const UnitFeatureMap zhat = normalize_locations(raw, cfg.radius(), cfg.rho());
        double err_feat = 0.0, err_d1 = 0.0, err_d2 = 0.0;
        for (int trial = 0; trial < 8; ++trial) {
            const float x = rng.uniform_int(0, 4) + rng.uniform(0.1f, 0.9f);
            const float y = rng.uniform_int(0, 4) + rng.uniform(0.1f, 0.9f);
            std::vector<float> up(zhat.tensor.c());
            for (float& v : up)
                v = rng.uniform(-1.0f, 1.0f);

            Tensor4 corner_grads(1, zhat.tensor.c(), 6, 6, 0.0f);
            const InterpGrads ig = interpolate_backward(zhat, 0, x, y, up, corner_grads);

            UnitFeatureMap probe = zhat;
            const auto eval_interp = [&]() {
                const std::vector<float> vec = norm_preserving_interpolate(probe, 0, x, y);
                double acc = 0.0;
                for (std::size_t i = 0; i < vec.size(); ++i)
                    acc += static_cast<double>(up[i]) * vec[i];
                return acc;
            };
            const auto fd_corners = fd_over_span(eval_interp, probe.tensor.flat());
            err_feat = std::max(err_feat, compare_grads(corner_grads.flat(), fd_corners));

            const auto eval_at = [&](float px, float py) {
                const std::vector<float> vec = norm_preserving_interpolate(zhat, 0, px, py);
                double acc = 0.0;
                for (std::size_t i = 0; i < vec.size(); ++i)
                    acc += static_cast<double>(up[i]) * vec[i];
                return acc;
            };
            const float d1 = static_cast<float>(
                (eval_at(x + kStep, y) - eval_at(x - kStep, y)) / (2.0 * kStep));
            const float d2 = static_cast<float>(
                (eval_at(x, y + kStep) - eval_at(x, y - kStep)) / (2.0 * kStep));
            const float a1 = ig.x, a2 = ig.y;
            err_d1 = std::max(err_d1, compare_grads({&a1, 1}, {&d1, 1}));
            err_d2 = std::max(err_d2, compare_grads({&a2, 1}, {&d2, 1}));
        }
        push("interpolation/features", err_feat);
        push("interpolation/delta1", err_d1);
        push("interpolation/delta2", err_d2);
    }

    {
        double err = 0.0;
        for (std::size_t k = 0; k < model.prototypes.size(); ++k) {
            const auto fd = fd_over_span(eval_total, work.prototypes[k].parts);
            err = std::max(err, compare_grads(base.grads.layer.parts[k], fd));
        }
        push("parts", err);
    }

    {
        double err = 0.0;
        err = std::max(err, compare_grads(base.grads.layer.branch1.weights.flat(),
                                          fd_over_span(eval_total,
                                                       work.branch.conv1.weights.flat())));
        err = std::max(err, compare_grads(base.grads.layer.branch1.bias,
                                          fd_over_span(eval_total, work.branch.conv1.bias)));
        err = std::max(err, compare_grads(base.grads.layer.branch2.weights.flat(),
                                          fd_over_span(eval_total,
                                                       work.branch.conv2.weights.flat())));
        err = std::max(err, compare_grads(base.grads.layer.branch2.bias,
                                          fd_over_span(eval_total, work.branch.conv2.bias)));
        push("offset branch", err);
    }

    {
        const ForwardCache cache = model_forward(model, images);
        std::vector<float> grad_w;
        last_layer_loss(cache.layer.scores, n, model.last_layer, labels,
                        weights.lambda_l1_last, &grad_w);
        LastLayer probe = model.last_layer;
        const auto eval_last = [&]() {
            return last_layer_loss(cache.layer.scores, n, probe, labels,
                                   weights.lambda_l1_last, nullptr);
        };
        const auto fd = fd_over_span(eval_last, probe.w);
        push("last layer", compare_grads(grad_w, fd));
    }

    return entries;
}

bool all_groups_pass(const std::vector<GradCheckEntry>& entries) {
    for (const GradCheckEntry& e : entries)
        if (!e.pass) return false;
    return true;
}

} // namespace dppn
