#pragma once

#include "dfuse/image.hpp"
#include "dfuse/imgmath.hpp"

namespace dfuse::metrics {

struct MetricReport {
    double en = 0.0;        // bits
    double mi = 0.0;        // MI(fused, vis) + MI(fused, ir), bits
    double sf = 0.0;
    double vif = 0.0;       // mean over the two sources
    double qabf = 0.0;
    double ssim_sum = 0.0;  // SSIM(fused, vis) + SSIM(fused, ir)
};

// All metrics operate on BT.601 luma; grayscale inputs are used as-is.
double entropy(const Image& img);
double entropy(const imgmath::Plane& luma);
double mutual_information(const Image& fused, const Image& src);
double spatial_frequency(const Image& img);

// Pixel-domain multi-scale VIF of `dist` against `ref` (4 scales, sigma_n^2 = 2 on 0..255).
double vif_single(const imgmath::Plane& ref, const imgmath::Plane& dist);
double vif(const Image& fused, const Image& vis, const Image& ir);

// Xydeas-Petrovic edge-transfer quality.
double qabf(const Image& vis, const Image& ir, const Image& fused);
double ssim_sum(const Image& vis, const Image& ir, const Image& fused);

MetricReport evaluate_pair(const Image& vis, const Image& ir, const Image& fused);

}  // namespace dfuse::metrics
