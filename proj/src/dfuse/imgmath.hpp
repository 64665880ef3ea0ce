#pragma once

#include "dfuse/image.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace dfuse::imgmath {

// BT.601 full-range RGB -> YCbCr. Rows are (Y, Cb, Cr); chroma rows get +0.5 offset.
inline constexpr std::array<std::array<double, 3>, 3> kRgbToYcbcr = {{
    {0.299, 0.587, 0.114},
    {-0.168736, -0.331264, 0.5},
    {0.5, -0.418688, -0.081312},
}};
inline constexpr double kChromaOffset = 0.5;

// Exact inverse of kRgbToYcbcr (computed once from the forward table).
const std::array<std::array<double, 3>, 3>& ycbcr_to_rgb_matrix();

// Single-channel double-precision plane; used where float images lose too much.
struct Plane {
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Plane() = default;
    Plane(int height, int width, double fill = 0.0) : h(height), w(width), v(static_cast<std::size_t>(height) * width, fill) {}

    double& operator()(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    double operator()(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    std::size_t size() const noexcept { return v.size(); }
};

struct GradientPair {
    Plane gx;
    Plane gy;
};

Image rgb_to_ycbcr(const Image& img);
// Inverse transform; `clamp` = false exposes the pre-clamp values for roundtrip checks.
Image ycbcr_to_rgb(const Image& img, bool clamp = true);

Image luma(const Image& img);
Plane to_plane(const Image& gray);
Plane luma_plane(const Image& img);

// 3x3 Sobel (correlation form, gx responds to left->right increase), reflect-padded.
GradientPair sobel(const Plane& img);
GradientPair sobel(const Image& gray);

// Reflect-padded 'same' correlation of a plane with a square odd-sized kernel.
Plane filter_reflect(const Plane& img, const std::vector<double>& kernel, int ksize);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// Normalized 1-D Gaussian taps.
std::vector<double> gaussian_taps(int size, double sigma);
// Normalized 2-D Gaussian kernel (outer product of gaussian_taps), row-major size*size.
std::vector<double> gaussian_kernel(int size, double sigma);

// Mean SSIM, 11x11 Gaussian window (sigma 1.5), reflect borders, [0,1] dynamic range.
double ssim(const Plane& a, const Plane& b);
double ssim(const Image& a, const Image& b);

std::array<std::uint64_t, 256> histogram256(const Plane& gray);
std::array<std::uint64_t, 256> histogram256(const Image& gray);
int histogram_bin(double v) noexcept;

}  // namespace dfuse::imgmath
