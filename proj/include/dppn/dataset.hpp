#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dppn/tensor.hpp"

namespace dppn {

struct PpmImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

    std::uint8_t& at(int y, int x, int ch) {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
    }
    std::uint8_t at(int y, int x, int ch) const {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
    }
};

// Binary 8-bit P6 only.
PpmImage read_ppm(const std::string& path);
void write_ppm(const std::string& path, const PpmImage& img);

struct ManifestEntry {
    std::string path;  // relative to the manifest directory
    int class_id = 0;
    std::string split;  // "train" or "test"
};

struct DatasetManifest {
    std::string root;
    std::vector<ManifestEntry> entries;
    int num_classes = 0;
    int image_size = 0;
};

// CSV `path,class_id,split` with a header line.
void write_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& path);

struct Dataset {
    DatasetManifest manifest;
    std::vector<PpmImage> images;  // aligned with manifest.entries

    std::vector<int> split_indices(const std::string& split) const;
    int label(int id) const { return manifest.entries[id].class_id; }
    // Pixels map to [0,1] then (v - mean)/std per channel.
    Tensor4 batch(const std::vector<int>& ids, const float mean[3], const float std[3]) const;
};

// Reads the manifest and loads every image; validates dense class ids and
// uniform image sizes.
Dataset load_dataset(const std::string& manifest_path);

struct GenDataParams {
    int classes = 3;
    int per_class_train = 20;
    int per_class_test = 10;
    int image_size = 64;
    float pose_jitter = 4.0f;
    std::uint32_t seed = 0;
};

// Synthetic pose-jittered blob-part classes: each class is a fixed multiset
// of colored parts; samples apply global translation plus per-part jitter.
// Deterministic under seed. Writes images and manifest.csv under out_dir.
DatasetManifest gen_data(const std::string& out_dir, const GenDataParams& params);

} // namespace dppn
