#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>

namespace dppn {

// mt19937 with hand-rolled float mappings; std distributions are
// implementation-defined, these streams are reproducible everywhere.
class Rng {
public:
    explicit Rng(std::uint32_t seed) : gen_(seed) {}

    std::uint32_t next_u32() { return gen_(); }

    // [0, 1) with 24-bit resolution
    float uniform() { return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u32() % static_cast<std::uint32_t>(hi - lo + 1));
    }

    float normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        float u1 = uniform();
        while (u1 <= 1e-7f) u1 = uniform();
        const float u2 = uniform();
        const float mag = std::sqrt(-2.0f * std::log(u1));
        const float ang = 6.2831853071795864769f * u2;
        spare_ = mag * std::sin(ang);
        have_spare_ = true;
        return mag * std::cos(ang);
    }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = last - first;
        for (auto i = n - 1; i > 0; --i)
            std::swap(first[i], first[uniform_int(0, static_cast<int>(i))]);
    }

private:
    std::mt19937 gen_;
    bool have_spare_ = false;
    float spare_ = 0.0f;
};

} // namespace dppn
