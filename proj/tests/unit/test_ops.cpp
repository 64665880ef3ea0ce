#include "fixtures.hpp"
#include "gradcheck.hpp"

#include "dfuse/error.hpp"
#include "dfuse/ops.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace dfuse;
using ag::Var;
using fixtures::max_grad_error;
using fixtures::param;

namespace {

constexpr double kGradTol = 1e-6;

Var weighted_total(const Var& y, std::uint64_t seed)
{
    // Random projection so every output entry matters.
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> w(y.numel());
    for (auto& x : w)
        x = u(rng);
    return ops::sum(ops::mul(y, Var::constant(y.shape(), std::move(w))));
}

}  // namespace

TEST_SUITE("ops")
{
    TEST_CASE("tape accumulates through shared subexpressions")
    {
        Var x = Var::parameter({1}, {3.0});
        const Var y = ops::mul(x, x);
        ag::backward(ops::add(y, y));
        CHECK(x.grad()[0] == doctest::Approx(12.0));
        ag::backward(ops::add(y, y));
        CHECK(x.grad()[0] == doctest::Approx(24.0));
        x.zero_grad();
        CHECK(x.grad()[0] == 0.0);
    }

    TEST_CASE("no-grad guard drops the closure")
    {
        Var x = Var::parameter({2}, {1.0, 2.0});
        {
            ag::NoGradGuard g;
            CHECK_FALSE(ag::grad_enabled());
            CHECK_FALSE(ops::square(x).requires_grad());
        }
        CHECK(ag::grad_enabled());
        CHECK(ops::square(x).requires_grad());
        CHECK_FALSE(ops::square(Var::constant({2}, 1.0)).requires_grad());
    }

    TEST_CASE("elementwise gradients")
    {
        Var a = param({2, 3, 3}, 1), b = param({2, 3, 3}, 2, 0.5, 2.0);
        CHECK(max_grad_error([&] { return weighted_total(ops::add(a, b), 9); }, {a, b}) < kGradTol);
        CHECK(max_grad_error([&] { return weighted_total(ops::sub(a, b), 9); }, {a, b}) < kGradTol);
        CHECK(max_grad_error([&] { return weighted_total(ops::mul(a, b), 9); }, {a, b}) < kGradTol);
        CHECK(max_grad_error([&] { return weighted_total(ops::div(a, b), 9); }, {a, b}) < kGradTol);
        CHECK(max_grad_error([&] { return weighted_total(ops::square(ops::scale(a, 1.5)), 9); }, {a}) < kGradTol);
        CHECK(max_grad_error([&] { return weighted_total(ops::abs(ops::add_scalar(a, 0.01)), 9); }, {a}) < kGradTol);
        CHECK(max_grad_error([&] { return ops::mean(ops::gelu(a)); }, {a}) < kGradTol);
        CHECK_THROWS_AS(ops::add(a, Var::constant({3, 3}, 0.0)), Error);
    }

    TEST_CASE("abs has zero subgradient at zero")
    {
        Var x = Var::parameter({3}, {-2.0, 0.0, 2.0});
        ag::backward(ops::sum(ops::abs(x)));
        CHECK(x.grad()[0] == -1.0);
        CHECK(x.grad()[1] == 0.0);
        CHECK(x.grad()[2] == 1.0);
    }

    TEST_CASE("weighted_sum skips zero weights")
    {
        Var a = Var::parameter({1}, {2.0}), b = Var::parameter({1}, {std::nan("")});
        const Var s = ops::weighted_sum({a, b}, {3.0, 0.0});
        CHECK(s.item() == 6.0);
        ag::backward(s);
        CHECK(a.grad()[0] == 3.0);
        CHECK(b.grad().empty());
    }

    TEST_CASE("gelu values")
    {
        const Var y = ops::gelu(Var::constant({3}, std::vector<double>{0.0, 1.0, -1.0}));
        CHECK(y.value()[0] == 0.0);
        CHECK(y.value()[1] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
        CHECK(y.value()[2] == doctest::Approx(-0.15865525393145707).epsilon(1e-12));
    }

    TEST_CASE("conv2d by hand")
    {
        std::vector<double> xv(9);
        std::iota(xv.begin(), xv.end(), 1.0);
        const Var x = Var::constant({1, 3, 3}, xv);
        const Var w = Var::constant({1, 1, 3, 3}, std::vector<double>{0, 0, 0, 0, 1, 2, 0, 0, 0});
        const Var b = Var::constant({1}, 0.5);
        const Var y = ops::conv2d(x, w, b, 1, 1);
        REQUIRE(y.shape() == ag::Shape{1, 3, 3});
        // y(r,c) = x(r,c) + 2 x(r,c+1), zero padded
        CHECK(y.value()[0] == 1 + 2 * 2 + 0.5);
        CHECK(y.value()[2] == 3 + 0 + 0.5);
        CHECK(y.value()[4] == 5 + 2 * 6 + 0.5);

        const Var s2 = ops::conv2d(Var::constant({1, 8, 6}, 1.0), Var::constant({2, 1, 3, 3}, 1.0), Var{}, 2, 1);
        CHECK(s2.shape() == ag::Shape{2, 4, 3});
        CHECK(s2.value()[0] == 4.0);   // corner sees a 2x2 patch
        CHECK(s2.value()[4] == 9.0);   // interior (row 1, col 1)
    }

    TEST_CASE("conv gradients")
    {
        Var x = param({3, 6, 6}, 3), w = param({4, 3, 3, 3}, 4), b = param({4}, 5);
        CHECK(max_grad_error([&] { return weighted_total(ops::conv2d(x, w, b, 1, 1), 1); }, {x, w, b}) < kGradTol);
        CHECK(max_grad_error([&] { return weighted_total(ops::conv2d(x, w, b, 2, 1), 2); }, {x, w, b}) < kGradTol);
        Var w1 = param({5, 3}, 6), b1 = param({5}, 7);
        CHECK(max_grad_error([&] { return weighted_total(ops::conv1x1(x, w1, b1), 3); }, {x, w1, b1}) < kGradTol);
        CHECK_THROWS_AS(ops::conv1x1(x, param({5, 2}, 1), b1), Error);
    }

    TEST_CASE("pixel shuffle layout and gradient")
    {
        std::vector<double> v(8);
        std::iota(v.begin(), v.end(), 0.0);
        const Var y = ops::pixel_shuffle2(Var::constant({4, 1, 2}, v));
        REQUIRE(y.shape() == ag::Shape{1, 2, 4});
        // out(0, i, 2x+j) = in(2i+j, 0, x)
        const std::vector<double> expect{0, 2, 1, 3, 4, 6, 5, 7};
        CHECK(std::vector<double>(y.value().begin(), y.value().end()) == expect);

        Var x = param({8, 3, 2}, 8);
        CHECK(max_grad_error([&] { return weighted_total(ops::pixel_shuffle2(x), 4); }, {x}) < kGradTol);
    }

    TEST_CASE("concat, crop, slice")
    {
        Var a = param({2, 4, 4}, 9), b = param({3, 4, 4}, 10);
        const Var c = ops::concat_channels(a, b);
        CHECK(c.shape() == ag::Shape{5, 4, 4});
        CHECK(c.value()[2 * 16] == b.value()[0]);
        CHECK(max_grad_error([&] { return weighted_total(ops::concat_channels(a, b), 5); }, {a, b}) < kGradTol);
        const Var k = ops::crop(a, 1, 2, 2, 2);
        CHECK(k.shape() == ag::Shape{2, 2, 2});
        CHECK(k.value()[0] == a.value()[1 * 4 + 2]);
        CHECK(max_grad_error([&] { return weighted_total(ops::crop(a, 1, 1, 3, 2), 6); }, {a}) < kGradTol);
        CHECK_THROWS_AS(ops::crop(a, 2, 2, 3, 3), Error);
        Var v = param({6}, 11);
        CHECK(max_grad_error([&] { return weighted_total(ops::slice(v, 2, 3), 7); }, {v}) < kGradTol);
    }

    TEST_CASE("layer norm over channels")
    {
        Var x = param({4, 3, 3}, 12), g = param({4}, 13), b = param({4}, 14);
        const Var y = ops::layer_norm_channels(x, Var::constant({4}, 1.0), Var::constant({4}, 0.0));
        for (int p = 0; p < 9; ++p) {
            double m = 0.0, s = 0.0;
            for (int c = 0; c < 4; ++c)
                m += y.value()[c * 9 + p];
            m /= 4;
            for (int c = 0; c < 4; ++c)
                s += (y.value()[c * 9 + p] - m) * (y.value()[c * 9 + p] - m);
            CHECK(std::abs(m) < 1e-12);
            CHECK(s / 4 == doctest::Approx(1.0).epsilon(1e-2));
        }
        CHECK(max_grad_error([&] { return weighted_total(ops::layer_norm_channels(x, g, b), 8); }, {x, g, b}) <
              kGradTol);
    }

    TEST_CASE("film")
    {
        Var x = param({3, 2, 2}, 15), g = param({3}, 16), b = param({3}, 17);
        const Var id = ops::film(x, Var::constant({3}, 0.0), Var::constant({3}, 0.0));
        CHECK(std::equal(id.value().begin(), id.value().end(), x.value().begin()));
        const Var y = ops::film(x, g, b);
        CHECK(y.value()[5] == doctest::Approx((1 + g.value()[1]) * x.value()[5] + b.value()[1]));
        CHECK(max_grad_error([&] { return weighted_total(ops::film(x, g, b), 9); }, {x, g, b}) < kGradTol);
        CHECK_THROWS_AS(ops::film(x, param({2}, 1), b), Error);
    }

    TEST_CASE("linear")
    {
        Var x = param({5}, 18), w = param({3, 5}, 19), b = param({3}, 20);
        const Var y = ops::linear(x, w, b);
        double e = b.value()[1];
        for (int i = 0; i < 5; ++i)
            e += w.value()[5 + i] * x.value()[i];
        CHECK(y.value()[1] == doctest::Approx(e));
        CHECK(max_grad_error([&] { return weighted_total(ops::linear(x, w, b), 10); }, {x, w, b}) < kGradTol);
    }

    TEST_CASE("channel mix and reflect filter")
    {
        Var x = param({3, 5, 5}, 21);
        const std::vector<std::vector<double>> m{{0.2, 0.3, 0.5}, {1.0, -1.0, 0.0}};
        CHECK(max_grad_error([&] { return weighted_total(ops::channel_mix(x, m, {0.5, 0.0}), 11); }, {x}) < kGradTol);
        const std::vector<double> k{1, 2, 3, 4, 5, 6, 7, 8, 9};
        CHECK(max_grad_error([&] { return weighted_total(ops::filter_reflect(x, k, 3), 12); }, {x}) < kGradTol);

        // Reflect borders: a constant stays constant under a normalised kernel.
        const Var c = ops::filter_reflect(Var::constant({1, 4, 4}, 0.25), std::vector<double>(9, 1.0 / 9.0), 3);
        for (double v : c.value())
            CHECK(v == doctest::Approx(0.25));
    }

    TEST_CASE("window attention")
    {
        // Zero queries give uniform attention: output is the window mean of V.
        const int c = 2, h = 4, w = 4, win = 2;
        std::vector<double> qkv(static_cast<std::size_t>(3 * c) * h * w, 0.0);
        for (int ch = 0; ch < c; ++ch)
            for (int p = 0; p < h * w; ++p)
                qkv[static_cast<std::size_t>(2 * c + ch) * h * w + p] = ch * 100 + p;
        const Var y = ops::window_attention(Var::constant({3 * c, h, w}, qkv), 1, win);
        // Window (0,0) covers pixels 0,1,4,5.
        CHECK(y.value()[0] == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
        CHECK(y.value()[16 + 15] == doctest::Approx(100 + (10 + 11 + 14 + 15) / 4.0));

        Var x = param({3 * 4, 4, 4}, 22);
        {
            ops::AttentionProbe probe;
            ops::window_attention(x, 2, 2);
            REQUIRE(probe.matrices.size() == 4 * 2);
            for (const auto& m : probe.matrices) {
                CHECK(m.rows == 4);
                CHECK(m.cols == 4);
                for (int r = 0; r < m.rows; ++r) {
                    double s = 0.0;
                    for (int k = 0; k < m.cols; ++k)
                        s += m.values[static_cast<std::size_t>(r) * m.cols + k];
                    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
                }
            }
        }
        CHECK(ops::AttentionProbe::active() == nullptr);
        CHECK(max_grad_error([&] { return weighted_total(ops::window_attention(x, 2, 2), 13); }, {x}) < kGradTol);
        CHECK_THROWS_AS(ops::window_attention(param({9, 4, 4}, 1), 1, 3), Error);
        CHECK_THROWS_AS(ops::window_attention(param({9, 4, 4}, 1), 2, 2), Error);
    }

    TEST_CASE("channel attention")
    {
        Var x = param({3 * 4, 3, 3}, 23), t = param({2}, 24, 0.5, 2.0);
        {
            ops::AttentionProbe probe;
            ops::channel_attention(x, t, 2);
            REQUIRE(probe.matrices.size() == 2);
            for (const auto& m : probe.matrices) {
                CHECK(m.rows == 2);
                for (int r = 0; r < m.rows; ++r)
                    CHECK(m.values[r * 2] + m.values[r * 2 + 1] == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
        CHECK(max_grad_error([&] { return weighted_total(ops::channel_attention(x, t, 2), 14); }, {x, t}) < kGradTol);

        // Scaling Q and K leaves the output unchanged (they are L2-normalised).
        std::vector<double> v(x.value().begin(), x.value().end());
        for (std::size_t i = 0; i < 8 * 9; ++i)
            v[i] *= 3.0;
        const Var a = ops::channel_attention(x, t, 2);
        const Var b = ops::channel_attention(Var::constant(x.shape(), v), t, 2);
        for (std::size_t i = 0; i < a.numel(); ++i)
            CHECK(a.value()[i] == doctest::Approx(b.value()[i]).epsilon(1e-12));
        CHECK_THROWS_AS(ops::channel_attention(x, t, 3), Error);
    }

    TEST_CASE("image conversion")
    {
        const Image img = fixtures::random_image(3, 4, Channels::Rgb3, 5);
        const Var v = ops::from_image(img);
        CHECK(v.shape() == ag::Shape{3, 3, 4});
        CHECK(ops::to_image(v, false) == img);
        const Image clamped = ops::to_image(Var::constant({1, 1, 2}, std::vector<double>{-0.5, 1.5}), true);
        CHECK(clamped.data()[0] == 0.0f);
        CHECK(clamped.data()[1] == 1.0f);
        CHECK_THROWS_AS(ops::to_image(Var::constant({2, 1, 1}, 0.0), false), Error);
    }
}
