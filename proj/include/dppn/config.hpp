#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dppn {

struct BackboneLayerSpec {
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
};

// Every tunable, as line-based `key = value` text. Unknown keys are rejected;
// the serialized form is echoed into checkpoints and is sufficient to re-run
// training without the original file.
struct RunConfig {
    int num_classes = 0;  // 0: derive from the manifest
    int protos_per_class = 2;
    int rho1 = 2, rho2 = 2;
    int dilation = 2;
    int feature_dim = 16;
    float epsilon = 1e-5f;
    int offset_hidden = 128;
    bool nd = false;
    bool interior_only = false;
    int image_size = 64;
    int in_channels = 3;
    std::vector<BackboneLayerSpec> backbone = {{16, 3, 2}, {16, 3, 2}, {16, 3, 2}};

    float lambda_sep = 0.01f;
    float lambda_clst = 0.1f;
    float lambda_ortho = 0.1f;
    float margin_phi = 0.1f;
    float lambda_l1_last = 1e-3f;

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
    std::uint32_t seed = 0;

    float pixel_mean[3] = {0.5f, 0.5f, 0.5f};
    float pixel_std[3] = {0.5f, 0.5f, 0.5f};

    int rho() const { return rho1 * rho2; }
    int part_dim() const { return feature_dim + 1; }
    float radius() const;
    int total_stage1_epochs() const { return epochs_warm1 + epochs_warm2 + epochs_joint; }
};

// Throws std::invalid_argument with a line-numbered message on unknown keys
// or malformed values.
RunConfig parse_config(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// Canonical echo: every key in fixed order, floats formatted to round-trip.
std::string serialize_config(const RunConfig& cfg);

// Structural sanity checks shared by init and checkpoint loading.
void validate_config(const RunConfig& cfg);

} // namespace dppn
