#pragma once

// Deterministic inputs shared with tests/oracles/images.py.

#include "dfuse/image.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

namespace fixtures {

inline dfuse::Image textured(int h, int w)
{
    dfuse::Image img(h, w, dfuse::Channels::Gray1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = 0.5 + 0.2 * std::sin(0.37 * x + 0.11 * y) + 0.15 * std::cos(0.23 * y - 0.05 * x * x / 64.0) +
                             0.1 * ((x * 7 + y * 13) % 17) / 17.0 - 0.05;
            img.at(0, y, x) = static_cast<float>(v);
        }
    return img;
}

inline dfuse::Image lcg_noise(int h, int w, std::uint64_t seed)
{
    dfuse::Image img(h, w, dfuse::Channels::Gray1);
    std::uint64_t s = seed;
    for (auto& v : img.data()) {
        s = s * 6364136223846793005ull + 1442695040888963407ull;
        v = static_cast<float>(static_cast<double>(s >> 40) / static_cast<double>(1u << 24));
    }
    return img;
}

struct Triple {
    dfuse::Image vis, ir, fused;
};

inline Triple two_edge_scene()
{
    Triple t{dfuse::Image(8, 8, dfuse::Channels::Gray1, 0.2f), dfuse::Image(8, 8, dfuse::Channels::Gray1, 0.1f),
             dfuse::Image(8, 8, dfuse::Channels::Gray1)};
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            if (x >= 4)
                t.vis.at(0, y, x) = 0.8f;
            if (y >= 3)
                t.ir.at(0, y, x) = 0.9f;
            t.fused.at(0, y, x) = static_cast<float>(0.5 * (static_cast<double>(t.vis.at(0, y, x)) + t.ir.at(0, y, x)));
        }
    return t;
}

inline dfuse::Image random_image(int h, int w, dfuse::Channels c, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f)
{
    dfuse::Image img(h, w, c);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(lo, hi);
    for (auto& v : img.data())
        v = u(rng);
    return img;
}

inline dfuse::Image gray_to_rgb(const dfuse::Image& g)
{
    dfuse::Image out(g.height(), g.width(), dfuse::Channels::Rgb3);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < g.height(); ++y)
            for (int x = 0; x < g.width(); ++x)
                out.at(c, y, x) = g.at(0, y, x);
    return out;
}

inline dfuse::Image from_rows(int h, int w, std::initializer_list<float> values)
{
    dfuse::Image img(h, w, dfuse::Channels::Gray1);
    std::size_t i = 0;
    for (float v : values)
        img.data()[i++] = v;
    return img;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("dfuse_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

}  // namespace fixtures
