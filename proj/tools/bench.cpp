// Compares the OpenMP kernels against the serial reference implementations.
#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#include "dppn/reference.hpp"
#include "dppn/rng.hpp"

using namespace dppn;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double max_abs_diff(const Tensor4& a, const Tensor4& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
    return worst;
}

Tensor4 random_tensor(int n, int c, int h, int w, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    Tensor4 t(n, c, h, w, 0.0f);
    for (float& v : t.flat())
        v = rng.uniform(lo, hi);
    return t;
}

} // namespace

int main(int argc, char** argv) {
    int jobs = omp_get_max_threads();
    int repeats = 5;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--jobs" && i + 1 < argc) jobs = std::atoi(argv[++i]);
        if (arg == "--repeats" && i + 1 < argc) repeats = std::atoi(argv[++i]);
    }
    omp_set_num_threads(jobs);
    std::printf("kernels vs serial reference, %d thread(s), %d repeat(s)\n", jobs, repeats);
    std::printf("%-22s %10s %10s %8s %10s\n", "kernel", "ref ms", "omp ms", "speedup",
                "max|diff|");

    Rng rng(7);

    {
        const Tensor4 input = random_tensor(8, 16, 48, 48, rng);
        ConvLayer layer = make_conv_same(16, 32, 3, 1);
        for (float& v : layer.weights.flat()) v = rng.uniform(-0.2f, 0.2f);
        for (float& v : layer.bias) v = rng.uniform(-0.1f, 0.1f);

        Tensor4 out_ref, out_omp;
        auto t0 = Clock::now();
        for (int r = 0; r < repeats; ++r) out_ref = ref::conv2d_forward(input, layer);
        const double ref_ms = ms_since(t0) / repeats;
        t0 = Clock::now();
        for (int r = 0; r < repeats; ++r) out_omp = conv2d_forward(input, layer);
        const double omp_ms = ms_since(t0) / repeats;
        std::printf("%-22s %10.2f %10.2f %8.2f %10.2e\n", "conv2d 8x16x48x48", ref_ms, omp_ms,
                    ref_ms / omp_ms, max_abs_diff(out_ref, out_omp));
    }

    {
        const int d = 16, eta = 24, rho = 4;
        Tensor4 raw = random_tensor(4, d + 1, eta, eta, rng, 0.05f, 1.0f);
        const UnitFeatureMap zhat = normalize_locations(raw, 0.5f, rho);
        DeformablePrototype proto;
        proto.rho1 = proto.rho2 = 2;
        proto.dilation = 2;
        proto.dim = d + 1;
        proto.radius = 0.5f;
        proto.parts.resize(static_cast<std::size_t>(rho) * proto.dim);
        for (float& v : proto.parts) v = rng.uniform(0.0f, 1.0f);
        renormalize_parts(proto);
        const Tensor4 offsets = random_tensor(4, 2 * rho, eta, eta, rng, -1.5f, 1.5f);

        Tensor4 out_ref, out_omp;
        auto t0 = Clock::now();
        for (int r = 0; r < repeats; ++r) out_ref = ref::similarity_map(zhat, proto, offsets);
        const double ref_ms = ms_since(t0) / repeats;
        t0 = Clock::now();
        for (int r = 0; r < repeats; ++r) out_omp = similarity_map(zhat, proto, offsets);
        const double omp_ms = ms_since(t0) / repeats;
        std::printf("%-22s %10.2f %10.2f %8.2f %10.2e\n", "similarity 4x24x24", ref_ms, omp_ms,
                    ref_ms / omp_ms, max_abs_diff(out_ref, out_omp));
    }

    return 0;
}
