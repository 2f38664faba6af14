#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dppn/conv.hpp"
#include "dppn/reference.hpp"
#include "dppn/rng.hpp"
#include "dppn/tensor.hpp"
#include "dppn/tensor_io.hpp"

using namespace dppn;

namespace {

Tensor4 random_tensor(int n, int c, int h, int w, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    Tensor4 t(n, c, h, w, 0.0f);
    for (float& v : t.flat())
        v = rng.uniform(lo, hi);
    return t;
}

} // namespace

TEST_CASE("tensor4 invariants") {
    CHECK_THROWS_AS(Tensor4(0, 1, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(Tensor4::from_data(1, 1, 2, 2, {1.0f, 2.0f}), std::invalid_argument);
    const Tensor4 t(2, 3, 4, 5, 1.5f);
    CHECK(t.size() == 120);
    CHECK(t.at(1, 2, 3, 4) == 1.5f);
}

TEST_CASE("conv2d identity kernel") {
    Tensor4 input = Tensor4::from_data(1, 1, 3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    ConvLayer layer;
    layer.weights = Tensor4(1, 1, 1, 1, 1.0f);
    layer.bias = {0.0f};
    const Tensor4 out = conv2d_forward(input, layer);
    REQUIRE(out.size() == input.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out.data()[i] == input.data()[i]);
}

TEST_CASE("conv2d zero kernel") {
    Rng rng(1);
    const Tensor4 input = random_tensor(2, 3, 5, 5, rng);
    ConvLayer layer = make_conv_same(3, 4, 3);
    const Tensor4 out = conv2d_forward(input, layer);
    for (float v : out.flat())
        CHECK(v == 0.0f);
}

TEST_CASE("conv2d hand cross-correlation") {
    const Tensor4 input = Tensor4::from_data(1, 1, 2, 2, {1, 2, 3, 4});
    ConvLayer layer;
    layer.weights = Tensor4::from_data(1, 1, 2, 2, {1, 0, 0, 1});
    layer.bias = {0.0f};
    const Tensor4 out = conv2d_forward(input, layer);
    REQUIRE(out.size() == 1);
    CHECK(out.at(0, 0, 0, 0) == doctest::Approx(5.0f));
}

TEST_CASE("conv2d rejects channel mismatch") {
    const Tensor4 input(1, 2, 4, 4, 0.0f);
    const ConvLayer layer = make_conv_same(3, 4, 3);
    CHECK_THROWS_AS(conv2d_forward(input, layer), std::invalid_argument);
}

TEST_CASE("conv2d matches the serial reference over shapes") {
    Rng rng(7);
    for (const auto& [stride, dilation] : {std::pair{1, 1}, {2, 1}, {1, 2}}) {
        const Tensor4 input = random_tensor(2, 3, 9, 9, rng);
        ConvLayer layer = make_conv_same(3, 4, 3, stride, dilation);
        for (float& v : layer.weights.flat()) v = rng.uniform(-0.5f, 0.5f);
        for (float& v : layer.bias) v = rng.uniform(-0.5f, 0.5f);
        const Tensor4 a = conv2d_forward(input, layer);
        const Tensor4 b = ref::conv2d_forward(input, layer);
        REQUIRE(a.same_shape(b));
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-6));
    }
}

TEST_CASE("conv2d is linear in input and weights") {
    Rng rng(11);
    const Tensor4 input = random_tensor(1, 2, 6, 6, rng);
    ConvLayer layer = make_conv_same(2, 3, 3);
    for (float& v : layer.weights.flat()) v = rng.uniform(-0.5f, 0.5f);

    Tensor4 scaled = input;
    for (float& v : scaled.flat()) v *= 3.0f;
    const Tensor4 base = conv2d_forward(input, layer);
    const Tensor4 out = conv2d_forward(scaled, layer);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(3.0f * base.data()[i]).epsilon(1e-6));

    ConvLayer wscaled = layer;
    for (float& v : wscaled.weights.flat()) v *= -2.0f;
    const Tensor4 wout = conv2d_forward(input, wscaled);
    for (std::size_t i = 0; i < wout.size(); ++i)
        CHECK(wout.data()[i] == doctest::Approx(-2.0f * base.data()[i]).epsilon(1e-6));
}

TEST_CASE("conv2d_backward zero upstream") {
    Rng rng(2);
    const Tensor4 input = random_tensor(1, 2, 4, 4, rng);
    ConvLayer layer = make_conv_same(2, 3, 3);
    for (float& v : layer.weights.flat()) v = rng.uniform(-0.5f, 0.5f);
    const Tensor4 upstream(1, 3, 4, 4, 0.0f);
    const ConvGrads g = conv2d_backward(input, layer, upstream);
    for (float v : g.input.flat()) CHECK(v == 0.0f);
    for (float v : g.weights.flat()) CHECK(v == 0.0f);
    for (float v : g.bias) CHECK(v == 0.0f);
}

TEST_CASE("conv2d_backward identity pass-through") {
    const Tensor4 input = Tensor4::from_data(1, 1, 3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    ConvLayer layer;
    layer.weights = Tensor4(1, 1, 1, 1, 1.0f);
    layer.bias = {0.0f};
    const Tensor4 upstream(1, 1, 3, 3, 1.0f);
    const ConvGrads g = conv2d_backward(input, layer, upstream);
    for (float v : g.input.flat())
        CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("conv2d_backward rejects shape mismatch") {
    const Tensor4 input(1, 2, 4, 4, 0.0f);
    const ConvLayer layer = make_conv_same(2, 3, 3);
    const Tensor4 upstream(1, 3, 5, 5, 0.0f);
    CHECK_THROWS_AS(conv2d_backward(input, layer, upstream), std::invalid_argument);
}

TEST_CASE("conv2d_backward matches finite differences") {
    Rng rng(3);
    const Tensor4 input = random_tensor(1, 2, 4, 4, rng);
    ConvLayer layer = make_conv_same(2, 3, 3);
    for (float& v : layer.weights.flat()) v = rng.uniform(-0.5f, 0.5f);
    for (float& v : layer.bias) v = rng.uniform(-0.2f, 0.2f);
    const Tensor4 upstream = random_tensor(1, 3, 4, 4, rng);

    const ConvGrads g = conv2d_backward(input, layer, upstream);

    const auto loss_of_input = [&](const Tensor4& x) {
        const Tensor4 out = conv2d_forward(x, layer);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i)
            acc += static_cast<double>(out.data()[i]) * upstream.data()[i];
        return acc;
    };
    const Tensor4 fd_input = finite_difference_gradient(loss_of_input, input, 1e-3f);
    CHECK(max_grad_err(g.input.flat(), fd_input.flat()) <= 1e-3);

    const auto loss_of_weights = [&](const Tensor4& w) {
        ConvLayer probe = layer;
        probe.weights = w;
        const Tensor4 out = conv2d_forward(input, probe);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i)
            acc += static_cast<double>(out.data()[i]) * upstream.data()[i];
        return acc;
    };
    const Tensor4 fd_weights = finite_difference_gradient(loss_of_weights, layer.weights, 1e-3f);
    CHECK(max_grad_err(g.weights.flat(), fd_weights.flat()) <= 1e-3);
}

TEST_CASE("relu forward and backward") {
    const Tensor4 input = Tensor4::from_data(1, 1, 1, 3, {-1.0f, 0.0f, 2.0f});
    const Tensor4 out = relu(input);
    CHECK(out.at(0, 0, 0, 0) == 0.0f);
    CHECK(out.at(0, 0, 0, 1) == 0.0f);
    CHECK(out.at(0, 0, 0, 2) == 2.0f);

    const Tensor4 upstream = Tensor4::from_data(1, 1, 1, 3, {5.0f, 5.0f, 5.0f});
    const Tensor4 grad = relu_backward(input, upstream);
    CHECK(grad.at(0, 0, 0, 0) == 0.0f);
    CHECK(grad.at(0, 0, 0, 1) == 0.0f);  // subgradient 0 at exactly 0
    CHECK(grad.at(0, 0, 0, 2) == 5.0f);

    const Tensor4 positive = Tensor4::from_data(1, 1, 1, 3, {1.0f, 2.0f, 3.0f});
    const Tensor4 id = relu(positive);
    for (std::size_t i = 0; i < id.size(); ++i)
        CHECK(id.data()[i] == positive.data()[i]);
}

TEST_CASE("sgd_step") {
    SUBCASE("lr zero keeps params") {
        Tensor4 p(1, 1, 1, 4, 1.0f), g(1, 1, 1, 4, 2.0f), v(1, 1, 1, 4, 0.0f);
        sgd_step(p, g, 0.0f, v, 0.9f);
        for (float x : p.flat()) CHECK(x == 1.0f);
    }
    SUBCASE("plain step") {
        Tensor4 p(1, 1, 1, 1, 1.0f), g(1, 1, 1, 1, 2.0f), v(1, 1, 1, 1, 0.0f);
        sgd_step(p, g, 0.1f, v, 0.0f);
        CHECK(p.at(0, 0, 0, 0) == doctest::Approx(0.8f));
    }
    SUBCASE("two momentum steps follow the hand iterate") {
        Tensor4 p(1, 1, 1, 1, 0.0f), g(1, 1, 1, 1, 1.0f), v(1, 1, 1, 1, 0.0f);
        sgd_step(p, g, 1.0f, v, 0.9f);
        sgd_step(p, g, 1.0f, v, 0.9f);
        CHECK(p.at(0, 0, 0, 0) == doctest::Approx(-2.9f));
    }
    SUBCASE("shape mismatch rejected") {
        Tensor4 p(1, 1, 1, 4, 0.0f), g(1, 1, 1, 3, 0.0f), v(1, 1, 1, 4, 0.0f);
        CHECK_THROWS_AS(sgd_step(p, g, 0.1f, v, 0.9f), std::invalid_argument);
    }
}

TEST_CASE("finite_difference_gradient") {
    SUBCASE("quadratic is exact for central differences") {
        const Tensor4 x(1, 1, 1, 1, 3.0f);
        const auto f = [](const Tensor4& t) {
            return static_cast<double>(t.at(0, 0, 0, 0)) * t.at(0, 0, 0, 0);
        };
        const Tensor4 g = finite_difference_gradient(f, x, 1e-3f);
        CHECK(g.at(0, 0, 0, 0) == doctest::Approx(6.0).epsilon(1e-6));
    }
    SUBCASE("constant function has zero gradient") {
        const Tensor4 x(1, 1, 2, 2, 0.5f);
        const Tensor4 g = finite_difference_gradient(
            [](const Tensor4&) { return 42.0; }, x, 1e-3f);
        for (float v : g.flat()) CHECK(v == 0.0f);
    }
    SUBCASE("sum of sines matches cosines") {
        Rng rng(5);
        Tensor4 x(1, 1, 1, 6, 0.0f);
        for (float& v : x.flat()) v = rng.uniform(-1.5f, 1.5f);
        const auto f = [](const Tensor4& t) {
            double acc = 0.0;
            for (float v : t.flat()) acc += std::sin(static_cast<double>(v));
            return acc;
        };
        const Tensor4 g = finite_difference_gradient(f, x, 1e-3f);
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(g.data()[i] ==
                  doctest::Approx(std::cos(static_cast<double>(x.data()[i]))).epsilon(1e-5));
    }
    SUBCASE("h must be positive") {
        const Tensor4 x(1, 1, 1, 1, 0.0f);
        CHECK_THROWS_AS(
            finite_difference_gradient([](const Tensor4&) { return 0.0; }, x, 0.0f),
            std::invalid_argument);
    }
}

TEST_CASE("dpt1 round-trip is bit-exact") {
    Rng rng(9);
    Tensor4 t(2, 3, 4, 5, 0.0f);
    for (float& v : t.flat()) v = rng.uniform(-10.0f, 10.0f);
    t.at(0, 0, 0, 0) = -0.0f;
    t.at(0, 0, 0, 1) = 0.0f;
    t.at(0, 0, 0, 2) = 1e-38f;

    const std::string path = (std::filesystem::temp_directory_path() / "dppn_t.dpt").string();
    tensor_write(path, t);
    const Tensor4 back = tensor_read(path);
    REQUIRE(back.same_shape(t));
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint32_t a, b;
        std::memcpy(&a, t.data() + i, 4);
        std::memcpy(&b, back.data() + i, 4);
        CHECK(a == b);
    }
    std::filesystem::remove(path);
}

TEST_CASE("dpt1 decode errors") {
    SUBCASE("empty stream") {
        std::istringstream in(std::string{});
        CHECK_THROWS_AS(dpt1_decode(in), DecodeError);
    }
    SUBCASE("wrong magic") {
        std::istringstream in(std::string("XXXX\0\4\0\0\0", 9));
        CHECK_THROWS_AS(dpt1_decode(in), DecodeError);
    }
    SUBCASE("truncated payload") {
        std::ostringstream out(std::ios::binary);
        dpt1_encode(out, Tensor4(1, 1, 2, 2, 1.0f));
        std::string blob = out.str();
        blob.resize(blob.size() - 3);
        std::istringstream in(blob);
        CHECK_THROWS_AS(dpt1_decode(in), DecodeError);
    }
    SUBCASE("dimension overflow") {
        std::ostringstream out(std::ios::binary);
        out.write("DPT1", 4);
        out.put('\0');
        write_u32(out, 4);
        write_u32(out, 0xffffffffu);
        write_u32(out, 0xffffffffu);
        write_u32(out, 2);
        write_u32(out, 2);
        std::istringstream in(out.str());
        CHECK_THROWS_AS(dpt1_decode(in), DecodeError);
    }
}
