#pragma once

// Differentiable tensor ops. Feature maps are rank-3 {C, H, W}, row-major.

#include "dfuse/autograd.hpp"
#include "dfuse/image.hpp"

#include <vector>

namespace dfuse::ops {

using ag::Var;

// Elementwise, same shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
// Subgradient 0 at 0.
Var abs(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
// sum_i w_i * x_i over scalars; zero weights contribute neither value nor gradient.
Var weighted_sum(const std::vector<Var>& xs, const std::vector<double>& ws);

// Zero-padded cross-correlation; weight {Cout, Cin, k, k}, optional bias {Cout}.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
// 1x1 convolution; weight {Cout, Cin}.
Var conv1x1(const Var& x, const Var& weight, const Var& bias);

Var concat_channels(const Var& a, const Var& b);
// {4C, H, W} -> {C, 2H, 2W}; out(c, 2y+i, 2x+j) = in(4c + 2i + j, y, x).
Var pixel_shuffle2(const Var& x);
Var crop(const Var& x, int top, int left, int height, int width);

// Per-pixel normalisation over channels with affine gain/bias {C}.
Var layer_norm_channels(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
// (1 + gamma_c) * x + beta_c; gamma, beta are {C}.
Var film(const Var& x, const Var& gamma, const Var& beta);

// Vector ops for the text-conditioning path.
Var linear(const Var& x, const Var& weight, const Var& bias);
Var gelu(const Var& x);
Var slice(const Var& x, int offset, int length);

// Constant linear channel mixing: out_r = sum_c m[r][c] * x_c + offset_r.
Var channel_mix(const Var& x, const std::vector<std::vector<double>>& m, const std::vector<double>& offset);
// Depthwise reflect-padded 'same' correlation with a constant odd square kernel.
Var filter_reflect(const Var& x, const std::vector<double>& kernel, int ksize);

// Window multi-head self-attention. qkv is {3C, H, W} laid out as [Q; K; V];
// H and W must be divisible by `window`. Returns {C, H, W}.
Var window_attention(const Var& qkv, int heads, int window);
// Transposed (channel) attention with L2-normalised Q, K along the spatial
// axis and a learnable per-head temperature {heads}. Returns {C, H, W}.
Var channel_attention(const Var& qkv, const Var& temperature, int heads);

// Records softmax matrices produced by attention ops on this thread while alive.
struct AttentionProbe {
    struct Matrix {
        int rows = 0;
        int cols = 0;
        std::vector<double> values;
    };
    std::vector<Matrix> matrices;

    AttentionProbe();
    ~AttentionProbe();
    AttentionProbe(const AttentionProbe&) = delete;
    AttentionProbe& operator=(const AttentionProbe&) = delete;

    static AttentionProbe* active() noexcept;

private:
    AttentionProbe* prev_;
};

Var from_image(const Image& img);
// Rank-3 {1|3, H, W} -> Image; optional clamp to [0,1].
Image to_image(const Var& x, bool clamp);

}  // namespace dfuse::ops
