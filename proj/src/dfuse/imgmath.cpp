#include "dfuse/imgmath.hpp"

#include "dfuse/error.hpp"

#include <algorithm>
#include <cmath>

namespace dfuse::imgmath {

namespace {

std::array<std::array<double, 3>, 3> invert3(const std::array<std::array<double, 3>, 3>& m)
{
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                       m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    std::array<std::array<double, 3>, 3> inv{};
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    return inv;
}

void require_rgb(const Image& img, const char* op)
{
    require(img.is_rgb(), ErrorCode::InvalidChannel, std::string(op) + " requires a 3-channel image");
}

// Separable reflect-padded correlation with a symmetric 1-D kernel.
Plane filter_separable(const Plane& img, const std::vector<double>& taps)
{
    const int r = static_cast<int>(taps.size()) / 2;
    Plane tmp(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double s = 0.0;
            for (int k = -r; k <= r; ++k)
                s += taps[k + r] * img(y, reflect_index(x + k, img.w));
            tmp(y, x) = s;
        }
    Plane out(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double s = 0.0;
            for (int k = -r; k <= r; ++k)
                s += taps[k + r] * tmp(reflect_index(y + k, img.h), x);
            out(y, x) = s;
        }
    return out;
}

}  // namespace

const std::array<std::array<double, 3>, 3>& ycbcr_to_rgb_matrix()
{
    static const auto inv = invert3(kRgbToYcbcr);
    return inv;
}

Image rgb_to_ycbcr(const Image& img)
{
    require_rgb(img, "rgb_to_ycbcr");
    Image out(img.height(), img.width(), Channels::Rgb3);
    const auto r = img.plane(0), g = img.plane(1), b = img.plane(2);
    for (int k = 0; k < 3; ++k) {
        auto dst = out.plane(k);
        const auto& row = kRgbToYcbcr[k];
        const double off = k == 0 ? 0.0 : kChromaOffset;
        for (std::size_t i = 0; i < img.pixels(); ++i)
            dst[i] = static_cast<float>(row[0] * r[i] + row[1] * g[i] + row[2] * b[i] + off);
    }
    return out;
}

Image ycbcr_to_rgb(const Image& img, bool clamp)
{
    require_rgb(img, "ycbcr_to_rgb");
    const auto& inv = ycbcr_to_rgb_matrix();
    Image out(img.height(), img.width(), Channels::Rgb3);
    const auto y = img.plane(0), cb = img.plane(1), cr = img.plane(2);
    for (int k = 0; k < 3; ++k) {
        auto dst = out.plane(k);
        for (std::size_t i = 0; i < img.pixels(); ++i) {
            double v = inv[k][0] * y[i] + inv[k][1] * (cb[i] - kChromaOffset) + inv[k][2] * (cr[i] - kChromaOffset);
            if (clamp)
                v = std::clamp(v, 0.0, 1.0);
            dst[i] = static_cast<float>(v);
        }
    }
    return out;
}

Image luma(const Image& img)
{
    if (!img.is_rgb())
        return img;
    Image out(img.height(), img.width(), Channels::Gray1);
    const auto r = img.plane(0), g = img.plane(1), b = img.plane(2);
    auto dst = out.plane(0);
    const auto& row = kRgbToYcbcr[0];
    for (std::size_t i = 0; i < img.pixels(); ++i)
        dst[i] = static_cast<float>(row[0] * r[i] + row[1] * g[i] + row[2] * b[i]);
    return out;
}

Plane to_plane(const Image& gray)
{
    require(!gray.is_rgb(), ErrorCode::InvalidChannel, "expected a single-channel image");
    Plane p(gray.height(), gray.width());
    const auto src = gray.plane(0);
    std::copy(src.begin(), src.end(), p.v.begin());
    return p;
}

Plane luma_plane(const Image& img)
{
    if (!img.is_rgb())
        return to_plane(img);
    Plane p(img.height(), img.width());
    const auto r = img.plane(0), g = img.plane(1), b = img.plane(2);
    const auto& row = kRgbToYcbcr[0];
    for (std::size_t i = 0; i < img.pixels(); ++i)
        p.v[i] = row[0] * r[i] + row[1] * g[i] + row[2] * b[i];
    return p;
}

Plane filter_reflect(const Plane& img, const std::vector<double>& kernel, int ksize)
{
    require(ksize % 2 == 1 && kernel.size() == static_cast<std::size_t>(ksize) * ksize,
            ErrorCode::InvalidArgument, "kernel must be odd and square");
    const int r = ksize / 2;
    Plane out(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double s = 0.0;
            for (int i = 0; i < ksize; ++i) {
                const int sy = reflect_index(y + i - r, img.h);
                for (int j = 0; j < ksize; ++j)
                    s += kernel[i * ksize + j] * img(sy, reflect_index(x + j - r, img.w));
            }
            out(y, x) = s;
        }
    return out;
}

GradientPair sobel(const Plane& img)
{
    static const std::vector<double> kx = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    static const std::vector<double> ky = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
    return {filter_reflect(img, kx, 3), filter_reflect(img, ky, 3)};
}

GradientPair sobel(const Image& gray) { return sobel(to_plane(gray)); }

std::vector<double> gaussian_taps(int size, double sigma)
{
    std::vector<double> t(size);
    const double c = (size - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        t[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
        sum += t[i];
    }
    for (auto& v : t)
        v /= sum;
    return t;
}

std::vector<double> gaussian_kernel(int size, double sigma)
{
    const auto t = gaussian_taps(size, sigma);
    std::vector<double> k(static_cast<std::size_t>(size) * size);
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j)
            k[i * size + j] = t[i] * t[j];
    return k;
}

double ssim(const Plane& a, const Plane& b)
{
    require(a.h == b.h && a.w == b.w, ErrorCode::ShapeMismatch, "ssim: shape mismatch");
    static const auto taps = gaussian_taps(kSsimWindow, kSsimSigma);
    Plane aa(a.h, a.w), bb(a.h, a.w), ab(a.h, a.w);
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa.v[i] = a.v[i] * a.v[i];
        bb.v[i] = b.v[i] * b.v[i];
        ab.v[i] = a.v[i] * b.v[i];
    }
    const Plane mu_a = filter_separable(a, taps), mu_b = filter_separable(b, taps);
    const Plane s_aa = filter_separable(aa, taps), s_bb = filter_separable(bb, taps), s_ab = filter_separable(ab, taps);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double ma = mu_a.v[i], mb = mu_b.v[i];
        const double va = s_aa.v[i] - ma * ma, vb = s_bb.v[i] - mb * mb, cov = s_ab.v[i] - ma * mb;
        sum += ((2.0 * ma * mb + kSsimC1) * (2.0 * cov + kSsimC2)) /
               ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
    }
    return sum / static_cast<double>(a.size());
}

double ssim(const Image& a, const Image& b)
{
    require(a.same_shape(b), ErrorCode::ShapeMismatch, "ssim: shape mismatch");
    return ssim(to_plane(a), to_plane(b));
}

int histogram_bin(double v) noexcept
{
    const int k = static_cast<int>(std::floor(v * 256.0));
    return std::clamp(k, 0, 255);
}

std::array<std::uint64_t, 256> histogram256(const Plane& gray)
{
    std::array<std::uint64_t, 256> h{};
    for (double v : gray.v)
        ++h[histogram_bin(v)];
    return h;
}

std::array<std::uint64_t, 256> histogram256(const Image& gray) { return histogram256(to_plane(gray)); }

}  // namespace dfuse::imgmath
