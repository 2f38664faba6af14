#include "dppn/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace dppn {

float RunConfig::radius() const {
    return 1.0f / std::sqrt(static_cast<float>(rho()));
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        out.push_back(trim(item));
    return out;
}

int to_int(const std::string& v) {
    std::size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return r;
}

float to_float(const std::string& v) {
    std::size_t pos = 0;
    const float r = std::stof(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return r;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("expected true/false");
}

std::string fmt_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
    return buf;
}

std::vector<BackboneLayerSpec> parse_backbone(const std::string& v) {
    std::vector<BackboneLayerSpec> layers;
    for (const std::string& item : split(v, ',')) {
        const auto f = split(item, ':');
        if (f.size() != 3) throw std::invalid_argument("expected out:kernel:stride triples");
        layers.push_back({to_int(f[0]), to_int(f[1]), to_int(f[2])});
    }
    if (layers.empty()) throw std::invalid_argument("empty backbone spec");
    return layers;
}

void parse_triple(const std::string& v, float out[3]) {
    const auto f = split(v, ',');
    if (f.size() != 3) throw std::invalid_argument("expected three comma-separated values");
    for (int i = 0; i < 3; ++i) out[i] = to_float(f[i]);
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"num_classes", [](RunConfig& c, const std::string& v) { c.num_classes = to_int(v); }},
        {"protos_per_class", [](RunConfig& c, const std::string& v) { c.protos_per_class = to_int(v); }},
        {"rho1", [](RunConfig& c, const std::string& v) { c.rho1 = to_int(v); }},
        {"rho2", [](RunConfig& c, const std::string& v) { c.rho2 = to_int(v); }},
        {"dilation", [](RunConfig& c, const std::string& v) { c.dilation = to_int(v); }},
        {"feature_dim", [](RunConfig& c, const std::string& v) { c.feature_dim = to_int(v); }},
        {"epsilon", [](RunConfig& c, const std::string& v) { c.epsilon = to_float(v); }},
        {"offset_hidden", [](RunConfig& c, const std::string& v) { c.offset_hidden = to_int(v); }},
        {"nd", [](RunConfig& c, const std::string& v) { c.nd = to_bool(v); }},
        {"interior_only", [](RunConfig& c, const std::string& v) { c.interior_only = to_bool(v); }},
        {"image_size", [](RunConfig& c, const std::string& v) { c.image_size = to_int(v); }},
        {"in_channels", [](RunConfig& c, const std::string& v) { c.in_channels = to_int(v); }},
        {"backbone", [](RunConfig& c, const std::string& v) { c.backbone = parse_backbone(v); }},
        {"lambda_sep", [](RunConfig& c, const std::string& v) { c.lambda_sep = to_float(v); }},
        {"lambda_clst", [](RunConfig& c, const std::string& v) { c.lambda_clst = to_float(v); }},
        {"lambda_ortho", [](RunConfig& c, const std::string& v) { c.lambda_ortho = to_float(v); }},
        {"margin_phi", [](RunConfig& c, const std::string& v) { c.margin_phi = to_float(v); }},
        {"lambda_l1_last", [](RunConfig& c, const std::string& v) { c.lambda_l1_last = to_float(v); }},
        {"epochs_warm1", [](RunConfig& c, const std::string& v) { c.epochs_warm1 = to_int(v); }},
        {"epochs_warm2", [](RunConfig& c, const std::string& v) { c.epochs_warm2 = to_int(v); }},
        {"epochs_joint", [](RunConfig& c, const std::string& v) { c.epochs_joint = to_int(v); }},
        {"lr_prototypes", [](RunConfig& c, const std::string& v) { c.lr_prototypes = to_float(v); }},
        {"lr_backbone", [](RunConfig& c, const std::string& v) { c.lr_backbone = to_float(v); }},
        {"lr_offsets", [](RunConfig& c, const std::string& v) { c.lr_offsets = to_float(v); }},
        {"lr_last", [](RunConfig& c, const std::string& v) { c.lr_last = to_float(v); }},
        {"lr_decay", [](RunConfig& c, const std::string& v) { c.lr_decay = to_float(v); }},
        {"lr_decay_every", [](RunConfig& c, const std::string& v) { c.lr_decay_every = to_int(v); }},
        {"projection_epochs", [](RunConfig& c, const std::string& v) {
             c.projection_epochs.clear();
             if (trim(v).empty()) return;
             for (const std::string& e : split(v, ','))
                 c.projection_epochs.push_back(to_int(e));
         }},
        {"epochs_last", [](RunConfig& c, const std::string& v) { c.epochs_last = to_int(v); }},
        {"batch_size", [](RunConfig& c, const std::string& v) { c.batch_size = to_int(v); }},
        {"momentum", [](RunConfig& c, const std::string& v) { c.momentum = to_float(v); }},
        {"seed", [](RunConfig& c, const std::string& v) {
             c.seed = static_cast<std::uint32_t>(std::stoul(v));
         }},
        {"pixel_mean", [](RunConfig& c, const std::string& v) { parse_triple(v, c.pixel_mean); }},
        {"pixel_std", [](RunConfig& c, const std::string& v) { parse_triple(v, c.pixel_std); }},
    };
    return table;
}

} // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end())
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": unknown key '" + key + "'");
        try {
            it->second(cfg, value);
        } catch (const std::exception& e) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": key '" +
                                        key + "': " + e.what());
        }
    }
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::invalid_argument("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "num_classes = " << cfg.num_classes << "\n";
    out << "protos_per_class = " << cfg.protos_per_class << "\n";
    out << "rho1 = " << cfg.rho1 << "\n";
    out << "rho2 = " << cfg.rho2 << "\n";
    out << "dilation = " << cfg.dilation << "\n";
    out << "feature_dim = " << cfg.feature_dim << "\n";
    out << "epsilon = " << fmt_float(cfg.epsilon) << "\n";
    out << "offset_hidden = " << cfg.offset_hidden << "\n";
    out << "nd = " << (cfg.nd ? "true" : "false") << "\n";
    out << "interior_only = " << (cfg.interior_only ? "true" : "false") << "\n";
    out << "image_size = " << cfg.image_size << "\n";
    out << "in_channels = " << cfg.in_channels << "\n";
    out << "backbone = ";
    for (std::size_t i = 0; i < cfg.backbone.size(); ++i) {
        if (i) out << ",";
        out << cfg.backbone[i].out_channels << ":" << cfg.backbone[i].kernel << ":"
            << cfg.backbone[i].stride;
    }
    out << "\n";
    out << "lambda_sep = " << fmt_float(cfg.lambda_sep) << "\n";
    out << "lambda_clst = " << fmt_float(cfg.lambda_clst) << "\n";
    out << "lambda_ortho = " << fmt_float(cfg.lambda_ortho) << "\n";
    out << "margin_phi = " << fmt_float(cfg.margin_phi) << "\n";
    out << "lambda_l1_last = " << fmt_float(cfg.lambda_l1_last) << "\n";
    out << "epochs_warm1 = " << cfg.epochs_warm1 << "\n";
    out << "epochs_warm2 = " << cfg.epochs_warm2 << "\n";
    out << "epochs_joint = " << cfg.epochs_joint << "\n";
    out << "lr_prototypes = " << fmt_float(cfg.lr_prototypes) << "\n";
    out << "lr_backbone = " << fmt_float(cfg.lr_backbone) << "\n";
    out << "lr_offsets = " << fmt_float(cfg.lr_offsets) << "\n";
    out << "lr_last = " << fmt_float(cfg.lr_last) << "\n";
    out << "lr_decay = " << fmt_float(cfg.lr_decay) << "\n";
    out << "lr_decay_every = " << cfg.lr_decay_every << "\n";
    out << "projection_epochs = ";
    for (std::size_t i = 0; i < cfg.projection_epochs.size(); ++i) {
        if (i) out << ",";
        out << cfg.projection_epochs[i];
    }
    out << "\n";
    out << "epochs_last = " << cfg.epochs_last << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "momentum = " << fmt_float(cfg.momentum) << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "pixel_mean = " << fmt_float(cfg.pixel_mean[0]) << "," << fmt_float(cfg.pixel_mean[1])
        << "," << fmt_float(cfg.pixel_mean[2]) << "\n";
    out << "pixel_std = " << fmt_float(cfg.pixel_std[0]) << "," << fmt_float(cfg.pixel_std[1])
        << "," << fmt_float(cfg.pixel_std[2]) << "\n";
    return out.str();
}

void validate_config(const RunConfig& cfg) {
    if (cfg.num_classes < 1)
        throw std::invalid_argument("config: num_classes must be >= 1");
    if (cfg.protos_per_class < 1)
        throw std::invalid_argument("config: protos_per_class must be >= 1");
    if (cfg.rho1 < 1 || cfg.rho2 < 1 || cfg.dilation < 1)
        throw std::invalid_argument("config: rho1/rho2/dilation must be >= 1");
    if ((cfg.rho1 - 1) * cfg.dilation % 2 != 0 || (cfg.rho2 - 1) * cfg.dilation % 2 != 0)
        throw std::invalid_argument("config: part grid cannot be centred (odd extent required)");
    if (!(cfg.epsilon > 0.0f))
        throw std::invalid_argument("config: epsilon must be > 0");
    if (cfg.backbone.empty() || cfg.backbone.back().out_channels != cfg.feature_dim)
        throw std::invalid_argument("config: backbone must end with feature_dim channels");
    for (const auto& l : cfg.backbone) {
        if (l.kernel % 2 == 0)
            throw std::invalid_argument("config: backbone kernels must be odd (same padding)");
        if (l.out_channels < 1 || l.stride < 1)
            throw std::invalid_argument("config: invalid backbone layer");
    }
    if (cfg.epochs_warm1 < 0 || cfg.epochs_warm2 < 0 || cfg.epochs_joint < 0 ||
        cfg.epochs_last < 0)
        throw std::invalid_argument("config: epoch counts must be >= 0");
    if (!(cfg.lr_prototypes > 0.0f) || !(cfg.lr_backbone > 0.0f) || !(cfg.lr_offsets > 0.0f) ||
        !(cfg.lr_last > 0.0f))
        throw std::invalid_argument("config: learning rates must be > 0");
    if (cfg.lambda_sep < 0.0f || cfg.lambda_clst < 0.0f || cfg.lambda_ortho < 0.0f ||
        cfg.margin_phi < 0.0f || cfg.lambda_l1_last < 0.0f)
        throw std::invalid_argument("config: loss weights must be >= 0");
    if (cfg.batch_size < 1)
        throw std::invalid_argument("config: batch_size must be >= 1");
    if (cfg.image_size < 1 || cfg.in_channels < 1)
        throw std::invalid_argument("config: invalid image dims");
}

} // namespace dppn
