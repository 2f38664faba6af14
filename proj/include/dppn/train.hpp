#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dppn/dataset.hpp"
#include "dppn/losses.hpp"
#include "dppn/rng.hpp"

namespace dppn {

struct TrainSchedule {
    int epochs_warm1 = 5;
    int epochs_warm2 = 5;
    int epochs_joint = 20;
    float lr_prototypes = 3e-3f;
    float lr_backbone = 1e-4f;
    float lr_offsets = 5e-4f;
    float lr_last = 0.1f;
    float lr_decay = 0.1f;
    int lr_decay_every = 5;
    std::vector<int> projection_epochs = {20, 30};
    int epochs_last = 20;
    int batch_size = 10;
    float momentum = 0.9f;

    static TrainSchedule from_config(const RunConfig& cfg);
    int total_epochs() const { return epochs_warm1 + epochs_warm2 + epochs_joint; }
};

enum class Stage1Phase { kWarm1, kWarm2, kJoint };

// Momentum buffers per parameter group.
struct OptState {
    std::vector<Tensor4> backbone_w;
    std::vector<std::vector<float>> backbone_b;
    std::vector<std::vector<float>> parts;
    Tensor4 branch1_w, branch2_w;
    std::vector<float> branch1_b, branch2_b;

    static OptState zeros_like(const Model& model);
};

struct EpochLog {
    int epoch = 0;
    std::string phase;
    Stage1Breakdown losses;  // means over the epoch's batches
};

// One epoch of minibatch SGD on the Eq.-14 composite. Only the phase's
// parameter groups move; prototype parts are re-projected to norm r after
// every step.
Stage1Breakdown stage1_epoch(Model& model, const Dataset& dataset, Stage1Phase phase,
                             float lr_scale, const TrainSchedule& schedule,
                             const LossWeights& weights, OptState& opt, Rng& rng);

// The three sub-phases in sequence (prototypes only, + backbone, + offset
// branch), h frozen throughout. No projection events.
void train_stage1(Model& model, const Dataset& dataset, const TrainSchedule& schedule,
                  const LossWeights& weights, std::vector<EpochLog>* log = nullptr);

// For each prototype, scans all training images of its class and overwrites
// every part with the interpolated features of the best-scoring deformed
// configuration. Candidates keep all deformed samples fully in-grid so
// projected parts have norm r and the source re-evaluates to cosine 1.
std::vector<ProjectionRecord> project_prototypes(Model& model, const Dataset& dataset);

// Optimizes w_h alone (proximal step for the off-class L1 term); everything
// else is bit-unchanged.
void train_last_layer(Model& model, const Dataset& dataset, const TrainSchedule& schedule,
                      const LossWeights& weights);

struct EvalResult {
    double accuracy = 0.0;
    std::vector<int> image_ids;
    std::vector<int> labels;
    std::vector<int> predictions;
    std::vector<float> top_scores;             // best prototype score per image
    std::vector<std::vector<double>> logits;   // per image, per class
};

EvalResult evaluate(const Model& model, const Dataset& dataset, const std::string& split);

// Full pipeline: stage-1 epochs with projection + last-layer events at the
// configured global epochs (the final epoch is always an event).
std::vector<EpochLog> run_training(
    Model& model, const Dataset& dataset, const LossWeights& weights,
    const std::function<void(int epoch, const Model&)>& on_epoch = nullptr);

LossWeights weights_from_config(const RunConfig& cfg);

} // namespace dppn
