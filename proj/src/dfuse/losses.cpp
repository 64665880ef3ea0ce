#include "dfuse/losses.hpp"

#include "dfuse/error.hpp"
#include "dfuse/imgmath.hpp"
#include "dfuse/ops.hpp"

#include <algorithm>
#include <cmath>

namespace dfuse {

void LossWeights::validate() const
{
    const double all[] = {lambda_int, lambda_ssim, lambda_grad, lambda_color, delta_ir, alpha[0], alpha[1], alpha[2]};
    for (double v : all)
        require(std::isfinite(v) && v >= 0.0, ErrorCode::Config, "loss weights must be finite and non-negative");
}

LossWeights LossWeights::scaled(double k) const
{
    LossWeights w = *this;
    w.lambda_int *= k;
    w.lambda_ssim *= k;
    w.lambda_grad *= k;
    w.lambda_color *= k;
    return w;
}

}  // namespace dfuse

namespace dfuse::losses {

namespace {

const std::vector<double> kSobelX = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
const std::vector<double> kSobelY = {-1, -2, -1, 0, 0, 0, 1, 2, 1};

std::vector<double> row_vec(int k)
{
    const auto& r = imgmath::kRgbToYcbcr[static_cast<std::size_t>(k)];
    return {r[0], r[1], r[2]};
}

void require_extent(const Var& fused, const Image& g, const char* op)
{
    require(fused.rank() == 3 && fused.dim(1) == g.height() && fused.dim(2) == g.width(), ErrorCode::ShapeMismatch,
            std::string(op) + ": fused and guidance extents differ");
}

// Elementwise max of two same-sized constant tensors.
Var max_const(const Var& a, const Var& b)
{
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = std::max(a.value()[i], b.value()[i]);
    return Var::constant(a.shape(), std::move(v));
}

Var guidance_luma(const Image& g) { return luma(ops::from_image(g)); }

Var mean_abs_diff(const Var& a, const Var& b) { return ops::mean(ops::abs(ops::sub(a, b))); }

}  // namespace

Var luma(const Var& rgb)
{
    if (rgb.dim(0) == 1)
        return rgb;
    require(rgb.dim(0) == 3, ErrorCode::InvalidChannel, "luma: expected 1 or 3 channels");
    return ops::channel_mix(rgb, {row_vec(0)}, {0.0});
}

Var chroma(const Var& rgb)
{
    require(rgb.rank() == 3 && rgb.dim(0) == 3, ErrorCode::InvalidChannel, "chroma: expected an RGB tensor");
    return ops::channel_mix(rgb, {row_vec(1), row_vec(2)}, {imgmath::kChromaOffset, imgmath::kChromaOffset});
}

Var ssim(const Var& a, const Var& b)
{
    require(a.shape() == b.shape() && a.dim(0) == 1, ErrorCode::ShapeMismatch, "ssim: expected equal {1,H,W} tensors");
    static const auto kernel = imgmath::gaussian_kernel(imgmath::kSsimWindow, imgmath::kSsimSigma);
    auto blur = [](const Var& x) { return ops::filter_reflect(x, kernel, imgmath::kSsimWindow); };
    const Var mu_a = blur(a), mu_b = blur(b);
    const Var mu_aa = ops::mul(mu_a, mu_a), mu_bb = ops::mul(mu_b, mu_b), mu_ab = ops::mul(mu_a, mu_b);
    const Var var_a = ops::sub(blur(ops::mul(a, a)), mu_aa);
    const Var var_b = ops::sub(blur(ops::mul(b, b)), mu_bb);
    const Var cov = ops::sub(blur(ops::mul(a, b)), mu_ab);
    const Var num = ops::mul(ops::add_scalar(ops::scale(mu_ab, 2.0), imgmath::kSsimC1),
                             ops::add_scalar(ops::scale(cov, 2.0), imgmath::kSsimC2));
    const Var den = ops::mul(ops::add_scalar(ops::add(mu_aa, mu_bb), imgmath::kSsimC1),
                             ops::add_scalar(ops::add(var_a, var_b), imgmath::kSsimC2));
    return ops::mean(ops::div(num, den));
}

Var sobel_x(const Var& gray) { return ops::filter_reflect(gray, kSobelX, 3); }
Var sobel_y(const Var& gray) { return ops::filter_reflect(gray, kSobelY, 3); }

Var l_int(const Var& fused, const Image& vis_g, const Image& ir_g)
{
    require_extent(fused, vis_g, "l_int");
    require(vis_g.same_extent(ir_g), ErrorCode::ShapeMismatch, "l_int: guidance extents differ");
    const Var target = max_const(guidance_luma(vis_g), guidance_luma(ir_g));
    return mean_abs_diff(luma(fused), target);
}

Var l_ssim(const Var& fused, const Image& vis_g, const Image& ir_g, double delta_ir)
{
    require_extent(fused, vis_g, "l_ssim");
    require(vis_g.same_extent(ir_g), ErrorCode::ShapeMismatch, "l_ssim: guidance extents differ");
    const Var y = luma(fused);
    const Var vis_term = ops::add_scalar(ops::scale(ssim(y, guidance_luma(vis_g)), -1.0), 1.0);
    if (delta_ir == 0.0)
        return vis_term;
    const Var ir_term = ops::add_scalar(ops::scale(ssim(y, guidance_luma(ir_g)), -1.0), 1.0);
    return ops::add(vis_term, ops::scale(ir_term, delta_ir));
}

Var l_grad(const Var& fused, const Image& vis_g, const Image& ir_g)
{
    require_extent(fused, vis_g, "l_grad");
    require(vis_g.same_extent(ir_g), ErrorCode::ShapeMismatch, "l_grad: guidance extents differ");
    const Var y = luma(fused);
    const Var yv = guidance_luma(vis_g), yi = guidance_luma(ir_g);
    Var total;
    for (auto* grad_op : {&sobel_x, &sobel_y}) {
        const Var target = max_const(ops::abs((*grad_op)(yv)), ops::abs((*grad_op)(yi)));
        const Var term = mean_abs_diff(ops::abs((*grad_op)(y)), target);
        total = total ? ops::add(total, term) : term;
    }
    return total;
}

Var l_color(const Var& fused, const Image& vis_g)
{
    require(fused.rank() == 3 && fused.dim(0) == 3, ErrorCode::InvalidChannel, "l_color: fused must be RGB");
    require(vis_g.is_rgb(), ErrorCode::InvalidChannel, "l_color: visible guidance must be RGB");
    require_extent(fused, vis_g, "l_color");
    const Var diff = ops::abs(ops::sub(chroma(fused), chroma(ops::from_image(vis_g))));
    return ops::scale(ops::sum(diff), 1.0 / (static_cast<double>(vis_g.height()) * vis_g.width()));
}

Var l_res(const Var& teacher_out, const Var& student_out)
{
    require(teacher_out.shape() == student_out.shape(), ErrorCode::ShapeMismatch, "l_res: output shapes differ");
    return mean_abs_diff(teacher_out, student_out);
}

TeacherTerms teacher_loss(const Var& fused, const Image& vis_g, const Image& ir_g, const LossWeights& w)
{
    w.validate();
    TeacherTerms t;
    t.l_int = l_int(fused, vis_g, ir_g);
    t.l_ssim = l_ssim(fused, vis_g, ir_g, w.delta_ir);
    t.l_grad = l_grad(fused, vis_g, ir_g);
    t.l_color = l_color(fused, vis_g);
    t.total = ops::weighted_sum({t.l_int, t.l_ssim, t.l_grad, t.l_color},
                                {w.lambda_int, w.lambda_ssim, w.lambda_grad, w.lambda_color});
    return t;
}

DownProjector::DownProjector(const net::NetConfig& teacher, const net::NetConfig& student, std::uint64_t seed)
{
    require(teacher.levels == student.levels, ErrorCode::Config, "teacher/student level count mismatch");
    net::Initializer init(seed);
    for (int l = 0; l < net::kLevels; ++l) {
        const int ct = teacher.channels(l), cs = student.channels(l);
        const std::string p = "proj." + std::to_string(l);
        w_[l] = params_.add(p + ".w", {cs, ct}, init.uniform_fan_in(static_cast<std::size_t>(cs) * ct, ct));
        b_[l] = params_.add(p + ".b", {cs}, std::vector<double>(cs, 0.0));
    }
}

Var DownProjector::project(int level, const Var& teacher_feature) const
{
    return ops::conv1x1(teacher_feature, w_[level], b_[level]);
}

Var l_feat(const net::FeaturePyramid& teacher, const net::FeaturePyramid& student, const DownProjector& proj)
{
    Var total;
    for (int l = 0; l < net::kLevels; ++l) {
        const Var& ft = teacher.fused[l];
        const Var& fs = student.fused[l];
        require(ft && fs, ErrorCode::InvalidArgument, "l_feat: incomplete pyramid");
        require(ft.dim(1) == fs.dim(1) && ft.dim(2) == fs.dim(2), ErrorCode::ShapeMismatch,
                "l_feat: spatial mismatch at level " + std::to_string(l));
        const Var term = mean_abs_diff(proj.project(l, ft), fs);
        total = total ? ops::add(total, term) : term;
    }
    return total;
}

Var distill_loss(const Var& base, const Var& feat, const Var& res, const std::array<double, 3>& alpha)
{
    for (double a : alpha)
        require(std::isfinite(a) && a >= 0.0, ErrorCode::Config, "alpha must be finite and non-negative");
    return ops::weighted_sum({base, feat, res}, {alpha[0], alpha[1], alpha[2]});
}

}  // namespace dfuse::losses
