#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "dppn/hypersphere.hpp"
#include "dppn/reference.hpp"
#include "dppn/rng.hpp"
#include "dppn/tensor.hpp"

using namespace dppn;

namespace {

double column_norm(const Tensor4& t, int n, int y, int x) {
    double sq = 0.0;
    for (int c = 0; c < t.c(); ++c) {
        const double v = t.at(n, c, y, x);
        sq += v * v;
    }
    return std::sqrt(sq);
}

double vec_norm(const std::vector<float>& v) {
    double sq = 0.0;
    for (float x : v) sq += static_cast<double>(x) * x;
    return std::sqrt(sq);
}

UnitFeatureMap random_unit_map(int n, int d, int eta, int rho, Rng& rng) {
    Tensor4 raw(n, d, eta, eta, 0.0f);
    for (float& v : raw.flat())
        v = rng.uniform(0.0f, 1.0f);
    const Tensor4 aug = augment_epsilon(raw, 1e-5f);
    return normalize_locations(aug, 1.0f / std::sqrt(static_cast<float>(rho)), rho);
}

} // namespace

TEST_CASE("augment_epsilon") {
    SUBCASE("all-zero column gains norm epsilon") {
        const Tensor4 z(1, 2, 1, 1, 0.0f);
        const Tensor4 out = augment_epsilon(z, 1e-5f);
        REQUIRE(out.c() == 3);
        CHECK(out.at(0, 0, 0, 0) == 0.0f);
        CHECK(out.at(0, 1, 0, 0) == 0.0f);
        CHECK(out.at(0, 2, 0, 0) == doctest::Approx(1e-5f));
        CHECK(column_norm(out, 0, 0, 0) == doctest::Approx(1e-5).epsilon(1e-6));
    }
    SUBCASE("existing channels unchanged") {
        Rng rng(1);
        Tensor4 z(2, 3, 4, 4, 0.0f);
        for (float& v : z.flat()) v = rng.uniform(-1.0f, 1.0f);
        const Tensor4 out = augment_epsilon(z, 0.5f);
        for (int n = 0; n < 2; ++n)
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < 4; ++y)
                    for (int x = 0; x < 4; ++x)
                        CHECK(out.at(n, c, y, x) == z.at(n, c, y, x));
    }
    SUBCASE("epsilon 0.5 fills the appended channel") {
        const Tensor4 z(1, 1, 2, 2, 0.0f);
        const Tensor4 out = augment_epsilon(z, 0.5f);
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x)
                CHECK(out.at(0, 1, y, x) == 0.5f);
    }
    SUBCASE("epsilon must be positive") {
        CHECK_THROWS_AS(augment_epsilon(Tensor4(1, 1, 1, 1), 0.0f), std::invalid_argument);
    }
}

TEST_CASE("normalize_locations") {
    SUBCASE("3-4-5 column at r = 0.5") {
        const Tensor4 col = Tensor4::from_data(1, 3, 1, 1, {3.0f, 4.0f, 1e-5f});
        const UnitFeatureMap out = normalize_locations(col, 0.5f, 4);
        CHECK(out.tensor.at(0, 0, 0, 0) == doctest::Approx(0.3f).epsilon(1e-6));
        CHECK(out.tensor.at(0, 1, 0, 0) == doctest::Approx(0.4f).epsilon(1e-6));
        CHECK(out.tensor.at(0, 2, 0, 0) == doctest::Approx(1e-6f).epsilon(1e-5));
        CHECK(column_norm(out.tensor, 0, 0, 0) == doctest::Approx(0.5).epsilon(1e-7));
    }
    SUBCASE("epsilon-only column maps to r on the epsilon axis") {
        const Tensor4 col = Tensor4::from_data(1, 3, 1, 1, {0.0f, 0.0f, 1e-5f});
        const UnitFeatureMap out = normalize_locations(col, 0.5f, 4);
        CHECK(out.tensor.at(0, 0, 0, 0) == 0.0f);
        CHECK(out.tensor.at(0, 1, 0, 0) == 0.0f);
        CHECK(out.tensor.at(0, 2, 0, 0) == doctest::Approx(0.5f).epsilon(1e-7));
    }
    SUBCASE("idempotent on an already-normalized column") {
        const Tensor4 col = Tensor4::from_data(1, 2, 1, 1, {0.3f, 0.4f});
        const UnitFeatureMap once = normalize_locations(col, 0.5f, 4);
        const UnitFeatureMap twice = normalize_locations(once.tensor, 0.5f, 4);
        for (int c = 0; c < 2; ++c)
            CHECK(twice.tensor.at(0, c, 0, 0) ==
                  doctest::Approx(once.tensor.at(0, c, 0, 0)).epsilon(1e-7));
    }
    SUBCASE("zero column rejected") {
        const Tensor4 z(1, 3, 1, 1, 0.0f);
        CHECK_THROWS_AS(normalize_locations(z, 0.5f, 4), std::invalid_argument);
    }
    SUBCASE("every column of a random map has norm r") {
        Rng rng(3);
        const UnitFeatureMap map = random_unit_map(2, 6, 5, 4, rng);
        for (int n = 0; n < 2; ++n)
            for (int y = 0; y < 5; ++y)
                for (int x = 0; x < 5; ++x)
                    CHECK(column_norm(map.tensor, n, y, x) ==
                          doctest::Approx(0.5).epsilon(2e-5));
    }
}

TEST_CASE("normalize_backward") {
    Rng rng(4);
    SUBCASE("radial upstream is annihilated") {
        const Tensor4 x = Tensor4::from_data(1, 3, 1, 1, {1.0f, 2.0f, 2.0f});
        Tensor4 upstream = x;  // parallel to x
        const Tensor4 g = normalize_backward(x, 0.5f, upstream);
        for (float v : g.flat())
            CHECK(std::abs(v) < 1e-7f);
    }
    SUBCASE("tangent upstream at radius r passes through") {
        // ||x|| = r = 0.5, upstream orthogonal to x
        const Tensor4 x = Tensor4::from_data(1, 2, 1, 1, {0.3f, 0.4f});
        const Tensor4 upstream = Tensor4::from_data(1, 2, 1, 1, {-0.4f, 0.3f});
        const Tensor4 g = normalize_backward(x, 0.5f, upstream);
        CHECK(g.at(0, 0, 0, 0) == doctest::Approx(-0.4f).epsilon(1e-5));
        CHECK(g.at(0, 1, 0, 0) == doctest::Approx(0.3f).epsilon(1e-5));
    }
    SUBCASE("matches finite differences on a random column") {
        Tensor4 x(1, 5, 2, 2, 0.0f);
        for (float& v : x.flat()) v = rng.uniform(0.2f, 1.0f);
        Tensor4 upstream(1, 5, 2, 2, 0.0f);
        for (float& v : upstream.flat()) v = rng.uniform(-1.0f, 1.0f);

        const Tensor4 analytic = normalize_backward(x, 0.5f, upstream);
        const auto f = [&](const Tensor4& probe) {
            const UnitFeatureMap out = normalize_locations(probe, 0.5f, 4);
            double acc = 0.0;
            for (std::size_t i = 0; i < out.tensor.size(); ++i)
                acc += static_cast<double>(out.tensor.data()[i]) * upstream.data()[i];
            return acc;
        };
        const Tensor4 fd = finite_difference_gradient(f, x, 1e-3f);
        CHECK(max_grad_err(analytic.flat(), fd.flat()) <= 1e-3);
    }
}

TEST_CASE("norm-preserving interpolation at integer coordinates") {
    Rng rng(5);
    const UnitFeatureMap map = random_unit_map(1, 4, 5, 4, rng);
    for (int a = 0; a < 5; ++a) {
        for (int b = 0; b < 5; ++b) {
            const std::vector<float> v = norm_preserving_interpolate(
                map, 0, static_cast<float>(a), static_cast<float>(b));
            for (int c = 0; c < map.tensor.c(); ++c)
                CHECK(v[c] == doctest::Approx(map.tensor.at(0, c, a, b)).epsilon(1e-6));
        }
    }
}

TEST_CASE("supplement counterexample: bilinear shrinks, square-blend preserves") {
    // corners r*e1..r*e4 stacked on a 2x2 grid, alpha = beta = 1/2
    const float r = 0.5f;
    Tensor4 grid(1, 4, 2, 2, 0.0f);
    grid.at(0, 0, 0, 0) = r;
    grid.at(0, 1, 0, 1) = r;
    grid.at(0, 2, 1, 0) = r;
    grid.at(0, 3, 1, 1) = r;
    UnitFeatureMap map;
    map.tensor = grid;
    map.radius = r;
    map.rho = 4;

    const std::vector<float> np = norm_preserving_interpolate(map, 0, 0.5f, 0.5f);
    for (float v : np)
        CHECK(v == doctest::Approx(r / 2.0f).epsilon(1e-6));
    CHECK(vec_norm(np) == doctest::Approx(r).epsilon(1e-6));

    const std::vector<float> bl = ref::bilinear_interpolate(grid, 0, 0.5f, 0.5f);
    for (float v : bl)
        CHECK(v == doctest::Approx(r / 4.0f).epsilon(1e-6));
    CHECK(vec_norm(bl) == doctest::Approx(r / 2.0f).epsilon(1e-6));
}

TEST_CASE("norm preservation on random in-grid fractional samples") {
    Rng rng(6);
    const UnitFeatureMap map = random_unit_map(1, 7, 6, 4, rng);
    for (int trial = 0; trial < 500; ++trial) {
        const float x = rng.uniform(0.0f, 5.0f);
        const float y = rng.uniform(0.0f, 5.0f);
        const std::vector<float> v = norm_preserving_interpolate(map, 0, x, y);
        CHECK(vec_norm(v) == doctest::Approx(0.5).epsilon(2e-5));
    }
}

TEST_CASE("interpolation agrees with the full-scan reference") {
    Rng rng(7);
    const UnitFeatureMap map = random_unit_map(1, 5, 6, 4, rng);
    for (int trial = 0; trial < 50; ++trial) {
        const float x = rng.uniform(-1.5f, 6.5f);  // includes out-of-grid support
        const float y = rng.uniform(-1.5f, 6.5f);
        const std::vector<float> fast = norm_preserving_interpolate(map, 0, x, y);
        const std::vector<float> slow = ref::interpolate_full_scan(map.tensor, 0, x, y);
        for (std::size_t c = 0; c < fast.size(); ++c)
            CHECK(fast[c] == doctest::Approx(slow[c]).epsilon(1e-6));
    }
}

TEST_CASE("interpolated squares are convex combinations of corner squares") {
    Rng rng(8);
    const UnitFeatureMap map = random_unit_map(1, 4, 5, 4, rng);
    for (int trial = 0; trial < 100; ++trial) {
        const float x = rng.uniform(0.0f, 4.0f);
        const float y = rng.uniform(0.0f, 4.0f);
        const int i0 = static_cast<int>(std::floor(x));
        const int j0 = static_cast<int>(std::floor(y));
        const std::vector<float> v = norm_preserving_interpolate(map, 0, x, y);
        for (int c = 0; c < map.tensor.c(); ++c) {
            float lo = 1e9f, hi = -1e9f;
            for (int di = 0; di < 2; ++di)
                for (int dj = 0; dj < 2; ++dj) {
                    const int i = std::min(i0 + di, 4), j = std::min(j0 + dj, 4);
                    const float a = std::abs(map.tensor.at(0, c, i, j));
                    lo = std::min(lo, a);
                    hi = std::max(hi, a);
                }
            CHECK(v[c] >= lo - 1e-6f);
            CHECK(v[c] <= hi + 1e-6f);
        }
    }
}

TEST_CASE("out-of-grid corners contribute zero") {
    Rng rng(9);
    const UnitFeatureMap map = random_unit_map(1, 4, 4, 4, rng);
    // fully outside: zero vector
    const std::vector<float> far = norm_preserving_interpolate(map, 0, -5.0f, 1.0f);
    for (float v : far) CHECK(v == 0.0f);
    // half outside: norm below r
    const std::vector<float> edge = norm_preserving_interpolate(map, 0, -0.5f, 1.0f);
    CHECK(vec_norm(edge) < 0.5);
    CHECK(vec_norm(edge) > 0.0);
}

TEST_CASE("interpolate_backward routes everything to the corner at integer coords") {
    Rng rng(10);
    const UnitFeatureMap map = random_unit_map(1, 4, 4, 4, rng);
    std::vector<float> up(map.tensor.c());
    for (float& v : up) v = rng.uniform(0.1f, 1.0f);

    Tensor4 grads(1, map.tensor.c(), 4, 4, 0.0f);
    interpolate_backward(map, 0, 2.0f, 1.0f, up, grads);
    for (int c = 0; c < map.tensor.c(); ++c) {
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                if (i == 2 && j == 1)
                    CHECK(grads.at(0, c, i, j) == doctest::Approx(up[c]).epsilon(1e-5));
                else
                    CHECK(grads.at(0, c, i, j) == 0.0f);
            }
    }
}

TEST_CASE("interpolate_backward matches finite differences") {
    Rng rng(11);
    const UnitFeatureMap map = random_unit_map(1, 5, 6, 4, rng);
    for (int trial = 0; trial < 5; ++trial) {
        const float x = rng.uniform_int(0, 4) + rng.uniform(0.15f, 0.85f);
        const float y = rng.uniform_int(0, 4) + rng.uniform(0.15f, 0.85f);
        std::vector<float> up(map.tensor.c());
        for (float& v : up) v = rng.uniform(-1.0f, 1.0f);

        Tensor4 corner_grads(1, map.tensor.c(), 6, 6, 0.0f);
        const InterpGrads ig = interpolate_backward(map, 0, x, y, up, corner_grads);

        const auto eval = [&](const Tensor4& probe, float px, float py) {
            UnitFeatureMap m = map;
            m.tensor = probe;
            const std::vector<float> v = norm_preserving_interpolate(m, 0, px, py);
            double acc = 0.0;
            for (std::size_t c = 0; c < v.size(); ++c)
                acc += static_cast<double>(up[c]) * v[c];
            return acc;
        };
        const Tensor4 fd = finite_difference_gradient(
            [&](const Tensor4& t) { return eval(t, x, y); }, map.tensor, 1e-3f);
        CHECK(max_grad_err(corner_grads.flat(), fd.flat()) <= 1e-3);

        const double dx =
            (eval(map.tensor, x + 1e-3f, y) - eval(map.tensor, x - 1e-3f, y)) / 2e-3;
        const double dy =
            (eval(map.tensor, x, y + 1e-3f) - eval(map.tensor, x, y - 1e-3f)) / 2e-3;
        CHECK(grad_close(ig.x, dx));
        CHECK(grad_close(ig.y, dy));
    }
}
