#include "dppn/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dppn/rng.hpp"
#include "dppn/tensor_io.hpp"

namespace dppn {

namespace {

int latent_dim(const RunConfig& cfg, int image_dim) {
    int d = image_dim;
    for (const auto& l : cfg.backbone) {
        const int pad = (l.kernel - 1) / 2;
        d = conv_out_dim(d, l.kernel, l.stride, pad, 1);
    }
    return d;
}

void he_init(ConvLayer& layer, Rng& rng) {
    const float fan_in = static_cast<float>(layer.in_channels() * layer.kernel_h() *
                                            layer.kernel_w());
    const float stddev = std::sqrt(2.0f / fan_in);
    for (float& v : layer.weights.flat())
        v = stddev * rng.normal();
}

} // namespace

int Model::latent_h() const { return latent_dim(cfg, cfg.image_size); }
int Model::latent_w() const { return latent_dim(cfg, cfg.image_size); }

Model init_model(const RunConfig& cfg_in, std::uint32_t seed) {
    RunConfig cfg = cfg_in;
    cfg.seed = seed;
    validate_config(cfg);

    Model m;
    m.cfg = cfg;

    Rng rng(seed);
    int in_c = cfg.in_channels;
    for (const auto& spec : cfg.backbone) {
        ConvLayer layer = make_conv_same(in_c, spec.out_channels, spec.kernel, spec.stride);
        he_init(layer, rng);
        m.backbone.push_back(std::move(layer));
        in_c = spec.out_channels;
    }

    const int eta = latent_dim(cfg, cfg.image_size);
    if (eta < 1)
        throw std::invalid_argument("init_model: backbone collapses the image to nothing");

    const float r = cfg.radius();
    for (int c = 0; c < cfg.num_classes; ++c) {
        for (int l = 0; l < cfg.protos_per_class; ++l) {
            DeformablePrototype p;
            p.class_id = c;
            p.index_within_class = l;
            p.rho1 = cfg.rho1;
            p.rho2 = cfg.rho2;
            p.dilation = cfg.dilation;
            p.dim = cfg.part_dim();
            p.radius = r;
            p.parts.resize(static_cast<std::size_t>(p.rho()) * p.dim);
            for (float& v : p.parts)
                v = rng.normal();
            renormalize_parts(p);
            m.prototypes.push_back(std::move(p));
        }
    }

    m.branch.conv1 = make_conv_same(cfg.part_dim(), cfg.offset_hidden, 3);
    he_init(m.branch.conv1, rng);
    m.branch.conv2 = make_conv_same(cfg.offset_hidden, 2 * cfg.rho(), 3);
    // final conv stays zero: training starts with zero deformation

    m.last_layer.num_prototypes = m.num_prototypes();
    m.last_layer.num_classes = cfg.num_classes;
    m.last_layer.w.resize(static_cast<std::size_t>(m.num_prototypes()) * cfg.num_classes);
    for (int k = 0; k < m.num_prototypes(); ++k)
        for (int c = 0; c < cfg.num_classes; ++c)
            m.last_layer.at(k, c) = m.proto_class(k) == c ? 1.0f : -0.5f;

    return m;
}

ForwardCache model_forward(const Model& model, const Tensor4& images) {
    ForwardCache cache;
    cache.images = images;
    Tensor4 x = images;
    for (const ConvLayer& layer : model.backbone) {
        cache.pre.push_back(conv2d_forward(x, layer));
        x = relu(cache.pre.back());
    }
    cache.z = std::move(x);
    cache.z_aug = augment_epsilon(cache.z, model.cfg.epsilon);
    const UnitFeatureMap zhat =
        normalize_locations(cache.z_aug, model.radius(), model.cfg.rho());
    cache.layer = layer_forward(zhat, model.prototypes, model.branch_or_null(),
                                model.cfg.interior_only);
    return cache;
}

std::vector<double> class_logits(const Model& model, std::span<const float> scores,
                                 int num_images) {
    const int K = model.num_prototypes();
    const int C = model.cfg.num_classes;
    std::vector<double> logits(static_cast<std::size_t>(num_images) * C, 0.0);
    for (int i = 0; i < num_images; ++i)
        for (int k = 0; k < K; ++k)
            for (int c = 0; c < C; ++c)
                logits[static_cast<std::size_t>(i) * C + c] +=
                    static_cast<double>(model.last_layer.at(k, c)) *
                    scores[static_cast<std::size_t>(i) * K + k];
    return logits;
}

ParamGrads model_backward(const Model& model, const ForwardCache& cache,
                          const std::vector<CenterContribution>& contribs) {
    ParamGrads g;
    g.layer = layer_backward(cache.layer, model.prototypes, model.branch_or_null(), contribs);

    // normalization, then strip the constant epsilon channel
    const Tensor4 grad_aug = normalize_backward(cache.z_aug, model.radius(), g.layer.zhat);
    g.z = Tensor4(cache.z.n(), cache.z.c(), cache.z.h(), cache.z.w(), 0.0f);
    for (int n = 0; n < cache.z.n(); ++n)
        for (int c = 0; c < cache.z.c(); ++c)
            for (int y = 0; y < cache.z.h(); ++y)
                for (int x = 0; x < cache.z.w(); ++x)
                    g.z.at(n, c, y, x) = grad_aug.at(n, c, y, x);

    g.backbone.resize(model.backbone.size());
    Tensor4 upstream = g.z;
    for (int i = static_cast<int>(model.backbone.size()) - 1; i >= 0; --i) {
        upstream = relu_backward(cache.pre[i], upstream);
        const Tensor4& input = i == 0 ? cache.images : relu(cache.pre[i - 1]);
        g.backbone[i] = conv2d_backward(input, model.backbone[i], upstream);
        upstream = g.backbone[i].input;
    }
    return g;
}

namespace {

constexpr char kCkptMagic[5] = {'D', 'P', 'P', 'N', '1'};

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    const std::uint32_t len = read_u32(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in)
        throw DecodeError("dppn1: truncated string");
    return s;
}

Tensor4 bias_tensor(const std::vector<float>& b) {
    return Tensor4::from_data(1, 1, 1, static_cast<int>(b.size()), b);
}

Tensor4 prototypes_tensor(const Model& m) {
    const int K = m.num_prototypes();
    const int dim = m.cfg.part_dim();
    Tensor4 t(K, dim, m.cfg.rho1, m.cfg.rho2, 0.0f);
    for (int k = 0; k < K; ++k)
        for (int mi = 0; mi < m.cfg.rho1; ++mi)
            for (int ni = 0; ni < m.cfg.rho2; ++ni) {
                const auto part = m.prototypes[k].part(mi * m.cfg.rho2 + ni);
                for (int ch = 0; ch < dim; ++ch)
                    t.at(k, ch, mi, ni) = part[ch];
            }
    return t;
}

std::vector<std::pair<std::string, Tensor4>> named_tensors(const Model& m) {
    std::vector<std::pair<std::string, Tensor4>> out;
    for (std::size_t i = 0; i < m.backbone.size(); ++i) {
        out.emplace_back("backbone." + std::to_string(i) + ".w", m.backbone[i].weights);
        out.emplace_back("backbone." + std::to_string(i) + ".b", bias_tensor(m.backbone[i].bias));
    }
    out.emplace_back("prototypes", prototypes_tensor(m));
    if (!m.cfg.nd) {
        out.emplace_back("branch.1.w", m.branch.conv1.weights);
        out.emplace_back("branch.1.b", bias_tensor(m.branch.conv1.bias));
        out.emplace_back("branch.2.w", m.branch.conv2.weights);
        out.emplace_back("branch.2.b", bias_tensor(m.branch.conv2.bias));
    }
    out.emplace_back("last_layer.w",
                     Tensor4::from_data(m.last_layer.num_prototypes, m.last_layer.num_classes,
                                        1, 1, m.last_layer.w));
    return out;
}

} // namespace

void save_checkpoint(const std::string& path, const Model& model) {
    std::ostringstream out(std::ios::binary);
    out.write(kCkptMagic, 5);
    write_string(out, serialize_config(model.cfg));
    const auto tensors = named_tensors(model);
    write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        write_string(out, name);
        dpt1_encode(out, tensor);
    }
    write_u32(out, static_cast<std::uint32_t>(model.provenance.size()));
    for (const ProjectionRecord& rec : model.provenance) {
        write_u32(out, static_cast<std::uint32_t>(rec.prototype));
        write_u32(out, static_cast<std::uint32_t>(rec.image));
        write_u32(out, static_cast<std::uint32_t>(rec.center_a));
        write_u32(out, static_cast<std::uint32_t>(rec.center_b));
        write_u32(out, static_cast<std::uint32_t>(rec.part_offsets.size()));
        for (const auto& d : rec.part_offsets) {
            write_f32(out, d[0]);
            write_f32(out, d[1]);
        }
        write_f32(out, rec.cosine);
    }

    std::ofstream file(path, std::ios::binary);
    if (!file)
        throw std::runtime_error("save_checkpoint: cannot open " + path);
    const std::string blob = out.str();
    file.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!file)
        throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DecodeError("load_checkpoint: cannot open " + path);
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, kCkptMagic, 5) != 0)
        throw DecodeError("dppn1: bad magic");

    const RunConfig cfg = parse_config(read_string(in));
    validate_config(cfg);

    std::map<std::string, Tensor4> tensors;
    const std::uint32_t tensor_count = read_u32(in);
    for (std::uint32_t i = 0; i < tensor_count; ++i) {
        const std::string name = read_string(in);
        tensors.emplace(name, dpt1_decode(in));
    }

    Model m;
    m.cfg = cfg;

    auto take = [&tensors](const std::string& name) -> Tensor4 {
        const auto it = tensors.find(name);
        if (it == tensors.end())
            throw DecodeError("dppn1: missing tensor " + name);
        Tensor4 t = std::move(it->second);
        tensors.erase(it);
        return t;
    };
    auto take_bias = [&take](const std::string& name, int expect) {
        const Tensor4 t = take(name);
        if (t.n() != 1 || t.c() != 1 || t.h() != 1 || t.w() != expect)
            throw DecodeError("dppn1: bad bias shape for " + name);
        return std::vector<float>(t.flat().begin(), t.flat().end());
    };

    int in_c = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.backbone.size(); ++i) {
        const auto& spec = cfg.backbone[i];
        ConvLayer layer = make_conv_same(in_c, spec.out_channels, spec.kernel, spec.stride);
        layer.weights = take("backbone." + std::to_string(i) + ".w");
        if (layer.weights.n() != spec.out_channels || layer.weights.c() != in_c ||
            layer.weights.h() != spec.kernel || layer.weights.w() != spec.kernel)
            throw DecodeError("dppn1: backbone tensor shape mismatch");
        layer.bias = take_bias("backbone." + std::to_string(i) + ".b", spec.out_channels);
        m.backbone.push_back(std::move(layer));
        in_c = spec.out_channels;
    }

    const Tensor4 protos = take("prototypes");
    const int K = cfg.num_classes * cfg.protos_per_class;
    if (protos.n() != K || protos.c() != cfg.part_dim() || protos.h() != cfg.rho1 ||
        protos.w() != cfg.rho2)
        throw DecodeError("dppn1: prototype tensor shape mismatch");
    for (int k = 0; k < K; ++k) {
        DeformablePrototype p;
        p.class_id = k / cfg.protos_per_class;
        p.index_within_class = k % cfg.protos_per_class;
        p.rho1 = cfg.rho1;
        p.rho2 = cfg.rho2;
        p.dilation = cfg.dilation;
        p.dim = cfg.part_dim();
        p.radius = cfg.radius();
        p.parts.resize(static_cast<std::size_t>(p.rho()) * p.dim);
        for (int mi = 0; mi < cfg.rho1; ++mi)
            for (int ni = 0; ni < cfg.rho2; ++ni)
                for (int ch = 0; ch < p.dim; ++ch)
                    p.part(mi * cfg.rho2 + ni)[ch] = protos.at(k, ch, mi, ni);
        m.prototypes.push_back(std::move(p));
    }

    if (!cfg.nd) {
        m.branch.conv1 = make_conv_same(cfg.part_dim(), cfg.offset_hidden, 3);
        m.branch.conv1.weights = take("branch.1.w");
        m.branch.conv1.bias = take_bias("branch.1.b", cfg.offset_hidden);
        m.branch.conv2 = make_conv_same(cfg.offset_hidden, 2 * cfg.rho(), 3);
        m.branch.conv2.weights = take("branch.2.w");
        m.branch.conv2.bias = take_bias("branch.2.b", 2 * cfg.rho());
    }

    const Tensor4 last = take("last_layer.w");
    if (last.n() != K || last.c() != cfg.num_classes || last.h() != 1 || last.w() != 1)
        throw DecodeError("dppn1: last layer shape mismatch");
    m.last_layer.num_prototypes = K;
    m.last_layer.num_classes = cfg.num_classes;
    m.last_layer.w.assign(last.flat().begin(), last.flat().end());

    if (!tensors.empty())
        throw DecodeError("dppn1: unexpected tensor " + tensors.begin()->first);

    const std::uint32_t rec_count = read_u32(in);
    for (std::uint32_t i = 0; i < rec_count; ++i) {
        ProjectionRecord rec;
        rec.prototype = static_cast<int>(read_u32(in));
        rec.image = static_cast<int>(read_u32(in));
        rec.center_a = static_cast<int>(read_u32(in));
        rec.center_b = static_cast<int>(read_u32(in));
        const std::uint32_t parts = read_u32(in);
        rec.part_offsets.resize(parts);
        for (auto& d : rec.part_offsets) {
            d[0] = read_f32(in);
            d[1] = read_f32(in);
        }
        rec.cosine = read_f32(in);
        m.provenance.push_back(std::move(rec));
    }
    return m;
}

} // namespace dppn
