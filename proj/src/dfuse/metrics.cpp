#include "dfuse/metrics.hpp"

#include "dfuse/error.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace dfuse::metrics {

using imgmath::Plane;

namespace {

double entropy_of_counts(const std::uint64_t* counts, std::size_t bins, double total)
{
    double h = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
        if (counts[k] == 0)
            continue;
        const double p = static_cast<double>(counts[k]) / total;
        h -= p * std::log2(p);
    }
    return h;
}

void require_extent(const Image& a, const Image& b, const char* op)
{
    require(a.same_extent(b), ErrorCode::ShapeMismatch, std::string(op) + ": image extents differ");
}

// MATLAB fspecial('gaussian', n, sigma).
std::vector<double> gaussian_window(int n, double sigma)
{
    std::vector<double> k(static_cast<std::size_t>(n) * n);
    const double c = (n - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double v = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2.0 * sigma * sigma));
            k[i * n + j] = v;
            sum += v;
        }
    for (auto& v : k)
        v /= sum;
    return k;
}

// 'valid' correlation (the window is symmetric, so this equals filter2).
Plane filter_valid(const Plane& img, const std::vector<double>& win, int n)
{
    Plane out(img.h - n + 1, img.w - n + 1);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    s += win[i * n + j] * img(y + i, x + j);
            out(y, x) = s;
        }
    return out;
}

Plane decimate2(const Plane& img)
{
    Plane out((img.h + 1) / 2, (img.w + 1) / 2);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            out(y, x) = img(2 * y, 2 * x);
    return out;
}

Plane product(const Plane& a, const Plane& b)
{
    Plane out(a.h, a.w);
    for (std::size_t i = 0; i < a.size(); ++i)
        out.v[i] = a.v[i] * b.v[i];
    return out;
}

struct EdgeField {
    Plane strength;
    Plane orientation;
};

EdgeField edges(const Plane& p)
{
    const auto g = imgmath::sobel(p);
    EdgeField e{Plane(p.h, p.w), Plane(p.h, p.w)};
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double gx = g.gx.v[i], gy = g.gy.v[i];
        e.strength.v[i] = std::sqrt(gx * gx + gy * gy);
        e.orientation.v[i] = gx == 0.0 ? std::numbers::pi / 2.0 : std::atan(gy / gx);
    }
    return e;
}

// Per-pixel edge preservation of source edges `s` in fused edges `f`.
double preservation(double gs, double as, double gf, double af)
{
    constexpr double kGammaG = 0.9994, kKappaG = -15.0, kSigmaG = 0.5;
    constexpr double kGammaA = 0.9879, kKappaA = -22.0, kSigmaA = 0.8;
    double g_rel;
    if (gs > gf)
        g_rel = gf / gs;
    else if (gs == gf)
        g_rel = 1.0;
    else
        g_rel = gs / gf;
    // Orientation is taken modulo pi (undirected edges), so +-pi/2 agree.
    const double a_rel = std::abs(std::abs(as - af) - std::numbers::pi / 2.0) / (std::numbers::pi / 2.0);
    const double qg = kGammaG / (1.0 + std::exp(kKappaG * (g_rel - kSigmaG)));
    const double qa = kGammaA / (1.0 + std::exp(kKappaA * (a_rel - kSigmaA)));
    return qg * qa;
}

}  // namespace

double entropy(const Plane& luma)
{
    const auto h = imgmath::histogram256(luma);
    return entropy_of_counts(h.data(), h.size(), static_cast<double>(luma.size()));
}

double entropy(const Image& img) { return entropy(imgmath::luma_plane(img)); }

double mutual_information(const Image& fused, const Image& src)
{
    require_extent(fused, src, "mutual_information");
    const Plane f = imgmath::luma_plane(fused), s = imgmath::luma_plane(src);
    std::vector<std::uint64_t> joint(256 * 256, 0);
    std::array<std::uint64_t, 256> hf{}, hs{};
    for (std::size_t i = 0; i < f.size(); ++i) {
        const int a = imgmath::histogram_bin(f.v[i]), b = imgmath::histogram_bin(s.v[i]);
        ++joint[static_cast<std::size_t>(a) * 256 + b];
        ++hf[a];
        ++hs[b];
    }
    const double n = static_cast<double>(f.size());
    return entropy_of_counts(hf.data(), 256, n) + entropy_of_counts(hs.data(), 256, n) -
           entropy_of_counts(joint.data(), joint.size(), n);
}

double spatial_frequency(const Image& img)
{
    const Plane p = imgmath::luma_plane(img);
    double rf = 0.0, cf = 0.0;
    if (p.w > 1) {
        for (int y = 0; y < p.h; ++y)
            for (int x = 1; x < p.w; ++x) {
                const double d = p(y, x) - p(y, x - 1);
                rf += d * d;
            }
        rf /= static_cast<double>(p.h) * (p.w - 1);
    }
    if (p.h > 1) {
        for (int y = 1; y < p.h; ++y)
            for (int x = 0; x < p.w; ++x) {
                const double d = p(y, x) - p(y - 1, x);
                cf += d * d;
            }
        cf /= static_cast<double>(p.h - 1) * p.w;
    }
    return std::sqrt(rf + cf);
}

double vif_single(const Plane& ref_in, const Plane& dist_in)
{
    require(ref_in.h == dist_in.h && ref_in.w == dist_in.w, ErrorCode::ShapeMismatch, "vif: extents differ");
    constexpr double kSigmaNsq = 2.0;
    constexpr double kTiny = 1e-10;
    Plane ref = ref_in, dist = dist_in;
    for (auto& v : ref.v)
        v *= 255.0;
    for (auto& v : dist.v)
        v *= 255.0;

    double num = 0.0, den = 0.0;
    for (int scale = 1; scale <= 4; ++scale) {
        const int n = (1 << (4 - scale + 1)) + 1;
        const auto win = gaussian_window(n, n / 5.0);
        if (scale > 1) {
            require(ref.h >= n && ref.w >= n, ErrorCode::ShapeMismatch,
                    "vif: image too small for the scale-" + std::to_string(scale) + " window");
            ref = decimate2(filter_valid(ref, win, n));
            dist = decimate2(filter_valid(dist, win, n));
        }
        require(ref.h >= n && ref.w >= n, ErrorCode::ShapeMismatch,
                "vif: image too small for the scale-" + std::to_string(scale) + " window");
        const Plane mu1 = filter_valid(ref, win, n), mu2 = filter_valid(dist, win, n);
        const Plane s11 = filter_valid(product(ref, ref), win, n);
        const Plane s22 = filter_valid(product(dist, dist), win, n);
        const Plane s12 = filter_valid(product(ref, dist), win, n);
        for (std::size_t i = 0; i < mu1.size(); ++i) {
            double sigma1_sq = std::max(0.0, s11.v[i] - mu1.v[i] * mu1.v[i]);
            const double sigma2_sq = std::max(0.0, s22.v[i] - mu2.v[i] * mu2.v[i]);
            const double sigma12 = s12.v[i] - mu1.v[i] * mu2.v[i];
            double g = sigma12 / (sigma1_sq + kTiny);
            double sv_sq = sigma2_sq - g * sigma12;
            if (sigma1_sq < kTiny) {
                g = 0.0;
                sv_sq = sigma2_sq;
                sigma1_sq = 0.0;
            }
            if (sigma2_sq < kTiny) {
                g = 0.0;
                sv_sq = 0.0;
            }
            if (g < 0.0) {
                sv_sq = sigma2_sq;
                g = 0.0;
            }
            sv_sq = std::max(sv_sq, kTiny);
            num += std::log10(1.0 + g * g * sigma1_sq / (sv_sq + kSigmaNsq));
            den += std::log10(1.0 + sigma1_sq / kSigmaNsq);
        }
    }
    // A reference without any variance carries no information to preserve.
    return den > 0.0 ? num / den : 0.0;
}

double vif(const Image& fused, const Image& vis, const Image& ir)
{
    require_extent(fused, vis, "vif");
    require_extent(fused, ir, "vif");
    const Plane f = imgmath::luma_plane(fused);
    return 0.5 * (vif_single(imgmath::luma_plane(vis), f) + vif_single(imgmath::luma_plane(ir), f));
}

double qabf(const Image& vis, const Image& ir, const Image& fused)
{
    require_extent(fused, vis, "qabf");
    require_extent(fused, ir, "qabf");
    const EdgeField a = edges(imgmath::luma_plane(vis));
    const EdgeField b = edges(imgmath::luma_plane(ir));
    const EdgeField f = edges(imgmath::luma_plane(fused));
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < f.strength.size(); ++i) {
        const double wa = a.strength.v[i], wb = b.strength.v[i];
        num += preservation(wa, a.orientation.v[i], f.strength.v[i], f.orientation.v[i]) * wa +
               preservation(wb, b.orientation.v[i], f.strength.v[i], f.orientation.v[i]) * wb;
        den += wa + wb;
    }
    return den > 0.0 ? num / den : 0.0;
}

double ssim_sum(const Image& vis, const Image& ir, const Image& fused)
{
    require_extent(fused, vis, "ssim_sum");
    require_extent(fused, ir, "ssim_sum");
    const Plane f = imgmath::luma_plane(fused);
    return imgmath::ssim(f, imgmath::luma_plane(vis)) + imgmath::ssim(f, imgmath::luma_plane(ir));
}

MetricReport evaluate_pair(const Image& vis, const Image& ir, const Image& fused)
{
    MetricReport r;
    r.en = entropy(fused);
    r.mi = mutual_information(fused, vis) + mutual_information(fused, ir);
    r.sf = spatial_frequency(fused);
    r.vif = vif(fused, vis, ir);
    r.qabf = qabf(vis, ir, fused);
    r.ssim_sum = ssim_sum(vis, ir, fused);
    return r;
}

}  // namespace dfuse::metrics
