#include "dppn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dppn/rng.hpp"

namespace fs = std::filesystem;

namespace dppn {

namespace {

int read_ppm_token(std::istream& in) {
    // skips whitespace and '#' comments
    while (true) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int value = 0;
    if (!(in >> value))
        throw std::runtime_error("ppm: malformed header");
    return value;
}

} // namespace

PpmImage read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("ppm: cannot open " + path);
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '6')
        throw std::runtime_error("ppm: not a P6 file: " + path);
    PpmImage img;
    img.width = read_ppm_token(in);
    img.height = read_ppm_token(in);
    const int maxval = read_ppm_token(in);
    if (img.width < 1 || img.height < 1 || maxval != 255)
        throw std::runtime_error("ppm: unsupported header in " + path);
    in.get();  // single whitespace after maxval
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    in.read(reinterpret_cast<char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
    if (!in)
        throw std::runtime_error("ppm: truncated pixel data in " + path);
    return img;
}

void write_ppm(const std::string& path, const PpmImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("ppm: cannot open " + path + " for writing");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()),
              static_cast<std::streamsize>(img.rgb.size()));
    if (!out)
        throw std::runtime_error("ppm: write failed for " + path);
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("manifest: cannot open " + path + " for writing");
    out << "path,class_id,split\n";
    for (const ManifestEntry& e : manifest.entries)
        out << e.path << "," << e.class_id << "," << e.split << "\n";
    if (!out)
        throw std::runtime_error("manifest: write failed for " + path);
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("manifest: cannot open " + path);
    DatasetManifest m;
    m.root = fs::path(path).parent_path().string();
    std::string line;
    if (!std::getline(in, line) || line.rfind("path,class_id,split", 0) != 0)
        throw std::runtime_error("manifest: missing header line in " + path);
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        ManifestEntry e;
        std::string class_str;
        if (!std::getline(ss, e.path, ',') || !std::getline(ss, class_str, ',') ||
            !std::getline(ss, e.split))
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": expected path,class_id,split");
        e.class_id = std::stoi(class_str);
        if (e.split != "train" && e.split != "test")
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": split must be train or test");
        m.num_classes = std::max(m.num_classes, e.class_id + 1);
        m.entries.push_back(std::move(e));
    }
    std::vector<bool> seen(m.num_classes, false);
    for (const auto& e : m.entries) {
        if (e.class_id < 0)
            throw std::runtime_error("manifest: negative class id");
        seen[e.class_id] = true;
    }
    for (int c = 0; c < m.num_classes; ++c)
        if (!seen[c])
            throw std::runtime_error("manifest: class ids are not dense (missing " +
                                     std::to_string(c) + ")");
    return m;
}

std::vector<int> Dataset::split_indices(const std::string& split) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        if (manifest.entries[i].split == split)
            out.push_back(static_cast<int>(i));
    return out;
}

Tensor4 Dataset::batch(const std::vector<int>& ids, const float mean[3],
                       const float std[3]) const {
    if (ids.empty())
        throw std::invalid_argument("Dataset::batch: empty id list");
    const int size = manifest.image_size;
    Tensor4 t(static_cast<int>(ids.size()), 3, size, size, 0.0f);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const PpmImage& img = images[ids[i]];
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    t.at(static_cast<int>(i), ch, y, x) =
                        (static_cast<float>(img.at(y, x, ch)) / 255.0f - mean[ch]) / std[ch];
    }
    return t;
}

Dataset load_dataset(const std::string& manifest_path) {
    Dataset ds;
    ds.manifest = read_manifest(manifest_path);
    ds.images.reserve(ds.manifest.entries.size());
    for (const ManifestEntry& e : ds.manifest.entries) {
        const fs::path p = fs::path(ds.manifest.root) / e.path;
        ds.images.push_back(read_ppm(p.string()));
        const PpmImage& img = ds.images.back();
        if (img.width != img.height)
            throw std::runtime_error("dataset: image not square: " + e.path);
        if (ds.manifest.image_size == 0)
            ds.manifest.image_size = img.width;
        else if (img.width != ds.manifest.image_size)
            throw std::runtime_error("dataset: inconsistent image size: " + e.path);
    }
    return ds;
}

namespace {

struct PartRecipe {
    float offset_y, offset_x;  // nominal offset from the object center, pixels
    float radius;
    bool square;
    std::uint8_t color[3];
};

void hsv_to_rgb(float h, float s, float v, std::uint8_t out[3]) {
    h = h - std::floor(h);
    const float c = v * s;
    const float hp = h * 6.0f;
    const float x = c * (1.0f - std::abs(std::fmod(hp, 2.0f) - 1.0f));
    float r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    const float m = v - c;
    out[0] = static_cast<std::uint8_t>(std::lround((r + m) * 255.0f));
    out[1] = static_cast<std::uint8_t>(std::lround((g + m) * 255.0f));
    out[2] = static_cast<std::uint8_t>(std::lround((b + m) * 255.0f));
}

void draw_part(PpmImage& img, float cy, float cx, const PartRecipe& part) {
    const int lo_y = static_cast<int>(std::floor(cy - part.radius));
    const int hi_y = static_cast<int>(std::ceil(cy + part.radius));
    const int lo_x = static_cast<int>(std::floor(cx - part.radius));
    const int hi_x = static_cast<int>(std::ceil(cx + part.radius));
    for (int y = std::max(0, lo_y); y <= std::min(img.height - 1, hi_y); ++y) {
        for (int x = std::max(0, lo_x); x <= std::min(img.width - 1, hi_x); ++x) {
            const float dy = y - cy, dx = x - cx;
            const bool inside = part.square
                                    ? std::max(std::abs(dy), std::abs(dx)) <= part.radius
                                    : dy * dy + dx * dx <= part.radius * part.radius;
            if (inside)
                for (int ch = 0; ch < 3; ++ch)
                    img.at(y, x, ch) = part.color[ch];
        }
    }
}

} // namespace

DatasetManifest gen_data(const std::string& out_dir, const GenDataParams& params) {
    if (params.classes < 2)
        throw std::invalid_argument("gen_data: need at least 2 classes");
    if (params.image_size < 16)
        throw std::invalid_argument("gen_data: image_size too small");
    if (params.per_class_train < 1 || params.per_class_test < 0)
        throw std::invalid_argument("gen_data: bad per-class counts");
    if (params.pose_jitter < 0.0f)
        throw std::invalid_argument("gen_data: pose_jitter must be >= 0");

    fs::create_directories(out_dir);
    Rng rng(params.seed);
    const float scale = static_cast<float>(params.image_size) / 64.0f;

    // fixed per-class multiset of parts; appearance + arrangement carry identity
    constexpr int kPartsPerClass = 4;
    std::vector<std::vector<PartRecipe>> recipes(params.classes);
    for (int c = 0; c < params.classes; ++c) {
        const float class_hue = (static_cast<float>(c) + rng.uniform(0.0f, 0.25f)) /
                                static_cast<float>(params.classes);
        for (int p = 0; p < kPartsPerClass; ++p) {
            PartRecipe part;
            const float angle = 6.2831853f * (p + rng.uniform(-0.2f, 0.2f)) / kPartsPerClass;
            const float dist = rng.uniform(7.0f, 11.0f) * scale;
            part.offset_y = dist * std::sin(angle);
            part.offset_x = dist * std::cos(angle);
            part.radius = rng.uniform(3.0f, 4.5f) * scale;
            part.square = rng.uniform() < 0.5f;
            hsv_to_rgb(class_hue + 0.08f * p, rng.uniform(0.7f, 1.0f),
                       rng.uniform(0.75f, 1.0f), part.color);
            recipes[c].push_back(part);
        }
    }

    DatasetManifest manifest;
    manifest.root = out_dir;
    manifest.num_classes = params.classes;
    manifest.image_size = params.image_size;

    float extent = 0.0f;
    for (const auto& recipe : recipes)
        for (const PartRecipe& p : recipe)
            extent = std::max({extent, std::abs(p.offset_y) + p.radius,
                               std::abs(p.offset_x) + p.radius});
    const int margin = static_cast<int>(std::ceil(extent)) + 1;
    const int lo = margin;
    const int hi = std::max(margin, params.image_size - 1 - margin);

    auto emit = [&](const char* split, int count, int class_id, int index_base) {
        for (int s = 0; s < count; ++s) {
            PpmImage img;
            img.width = img.height = params.image_size;
            img.rgb.assign(static_cast<std::size_t>(params.image_size) * params.image_size * 3,
                           0);
            const int cy = rng.uniform_int(lo, hi);
            const int cx = rng.uniform_int(lo, hi);
            for (const PartRecipe& part : recipes[class_id]) {
                // integer jitter so jitter 0 keeps classes pixel-identical
                const float jy = params.pose_jitter > 0.0f
                                     ? std::round(rng.uniform(-params.pose_jitter,
                                                              params.pose_jitter))
                                     : 0.0f;
                const float jx = params.pose_jitter > 0.0f
                                     ? std::round(rng.uniform(-params.pose_jitter,
                                                              params.pose_jitter))
                                     : 0.0f;
                draw_part(img, cy + part.offset_y + jy, cx + part.offset_x + jx, part);
            }
            char name[64];
            std::snprintf(name, sizeof name, "class%d_%s_%03d.ppm", class_id, split,
                          index_base + s);
            write_ppm((fs::path(out_dir) / name).string(), img);
            manifest.entries.push_back({name, class_id, split});
        }
    };

    for (int c = 0; c < params.classes; ++c)
        emit("train", params.per_class_train, c, 0);
    for (int c = 0; c < params.classes; ++c)
        emit("test", params.per_class_test, c, 0);

    write_manifest((fs::path(out_dir) / "manifest.csv").string(), manifest);
    return manifest;
}

} // namespace dppn
