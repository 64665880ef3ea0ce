#pragma once

#include "dfuse/autograd.hpp"
#include "dfuse/image.hpp"
#include "dfuse/loss_weights.hpp"
#include "dfuse/net.hpp"

#include <array>
#include <cstdint>

namespace dfuse::losses {

using ag::Var;

// Differentiable luma / chroma of an RGB tensor {3,H,W}; gray tensors pass through luma().
Var luma(const Var& rgb);
Var chroma(const Var& rgb);  // {2,H,W}: Cb, Cr
// Mean SSIM between two single-channel tensors, same window and constants as imgmath::ssim.
Var ssim(const Var& a, const Var& b);
// Sobel responses of a single-channel tensor, reflect borders.
Var sobel_x(const Var& gray);
Var sobel_y(const Var& gray);

// Fusion objective terms. `fused` is the differentiable output {3,H,W};
// guidance images are constants. All terms except l_color work on luma.
Var l_int(const Var& fused, const Image& vis_g, const Image& ir_g);
Var l_ssim(const Var& fused, const Image& vis_g, const Image& ir_g, double delta_ir);
Var l_grad(const Var& fused, const Image& vis_g, const Image& ir_g);
Var l_color(const Var& fused, const Image& vis_g);
Var l_res(const Var& teacher_out, const Var& student_out);

struct TeacherTerms {
    Var l_int, l_ssim, l_grad, l_color;
    Var total;
};

TeacherTerms teacher_loss(const Var& fused, const Image& vis_g, const Image& ir_g, const LossWeights& w);

// Learnable per-level 1x1 projection from teacher widths to student widths.
class DownProjector {
public:
    DownProjector(const net::NetConfig& teacher, const net::NetConfig& student, std::uint64_t seed);

    Var project(int level, const Var& teacher_feature) const;
    net::ParamSet& params() noexcept { return params_; }
    const net::ParamSet& params() const noexcept { return params_; }

private:
    net::ParamSet params_;
    std::array<Var, net::kLevels> w_, b_;
};

// Sum over levels of mean |Down(F_t) - F_s| on the pre-modulation fused features.
Var l_feat(const net::FeaturePyramid& teacher, const net::FeaturePyramid& student, const DownProjector& proj);

struct DistillTerms {
    TeacherTerms base;
    Var l_feat, l_res;
    Var total;
};

Var distill_loss(const Var& base, const Var& feat, const Var& res, const std::array<double, 3>& alpha);

}  // namespace dfuse::losses
