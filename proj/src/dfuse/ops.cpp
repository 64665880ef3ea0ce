#include "dfuse/ops.hpp"

#include "dfuse/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace dfuse::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

void require_same(const Var& a, const Var& b, const char* op)
{
    require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
            std::string(op) + ": shape mismatch " + ag::shape_str(a.shape()) + " vs " + ag::shape_str(b.shape()));
}

void require_rank3(const Var& x, const char* op)
{
    require(x.rank() == 3, ErrorCode::ShapeMismatch,
            std::string(op) + ": expected {C,H,W}, got " + ag::shape_str(x.shape()));
}

ag::Node& parent(ag::Node& self, std::size_t i) { return *self.parents[i]; }

template <class Fwd, class Bwd>
Var binary(const Var& a, const Var& b, const char* name, Fwd fwd, Bwd bwd)
{
    require_same(a, b, name);
    const auto av = a.value(), bv = b.value();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = fwd(av[i], bv[i]);
    return ag::make_result(a.shape(), std::move(out), {a, b}, [bwd](ag::Node& self) {
        ag::Node& pa = parent(self, 0);
        ag::Node& pb = parent(self, 1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const auto [da, db] = bwd(pa.value[i], pb.value[i], self.value[i]);
            if (pa.requires_grad)
                pa.grad_buffer()[i] += self.grad[i] * da;
            if (pb.requires_grad)
                pb.grad_buffer()[i] += self.grad[i] * db;
        }
    });
}

template <class Fwd, class Bwd>
Var unary(const Var& a, Fwd fwd, Bwd bwd)
{
    const auto av = a.value();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = fwd(av[i]);
    return ag::make_result(a.shape(), std::move(out), {a}, [bwd](ag::Node& self) {
        ag::Node& pa = parent(self, 0);
        auto& g = pa.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            g[i] += self.grad[i] * bwd(pa.value[i], self.value[i]);
    });
}

struct Pair {
    double a, b;
};

// Shared by conv1x1 and the k=1 path of conv2d. `weight` holds Cout*Cin values.
Var conv1x1_impl(const Var& x, const Var& weight, const Var& bias, int cout)
{
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int n = h * w;
    require(weight.numel() == static_cast<std::size_t>(cout) * cin, ErrorCode::ShapeMismatch,
            "conv1x1: weight does not match input channels");
    require(!bias || bias.numel() == static_cast<std::size_t>(cout), ErrorCode::ShapeMismatch,
            "conv1x1: bias size mismatch");

    std::vector<double> out(static_cast<std::size_t>(cout) * n);
    MatMap o(out.data(), cout, n);
    o.noalias() = ConstMatMap(weight.value().data(), cout, cin) * ConstMatMap(x.value().data(), cin, n);
    if (bias) {
        const auto bv = bias.value();
        for (int r = 0; r < cout; ++r)
            o.row(r).array() += bv[r];
    }
    std::vector<Var> parents{x, weight};
    if (bias)
        parents.push_back(bias);
    return ag::make_result({cout, h, w}, std::move(out), std::move(parents), [cin, cout, n](ag::Node& self) {
        ag::Node& px = parent(self, 0);
        ag::Node& pw = parent(self, 1);
        ConstMatMap dy(self.grad.data(), cout, n);
        if (pw.requires_grad)
            MatMap(pw.grad_buffer().data(), cout, cin).noalias() += dy * ConstMatMap(px.value.data(), cin, n).transpose();
        if (px.requires_grad)
            MatMap(px.grad_buffer().data(), cin, n).noalias() += ConstMatMap(pw.value.data(), cout, cin).transpose() * dy;
        if (self.parents.size() > 2 && parent(self, 2).requires_grad)
            VecMap(parent(self, 2).grad_buffer().data(), cout) += dy.rowwise().sum();
    });
}

}  // namespace

Var add(const Var& a, const Var& b)
{
    return binary(a, b, "add", [](double x, double y) { return x + y; },
                  [](double, double, double) { return Pair{1.0, 1.0}; });
}

Var sub(const Var& a, const Var& b)
{
    return binary(a, b, "sub", [](double x, double y) { return x - y; },
                  [](double, double, double) { return Pair{1.0, -1.0}; });
}

Var mul(const Var& a, const Var& b)
{
    return binary(a, b, "mul", [](double x, double y) { return x * y; },
                  [](double x, double y, double) { return Pair{y, x}; });
}

Var div(const Var& a, const Var& b)
{
    return binary(a, b, "div", [](double x, double y) { return x / y; },
                  [](double, double y, double z) { return Pair{1.0 / y, -z / y}; });
}

Var scale(const Var& a, double s)
{
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s)
{
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var square(const Var& a)
{
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(const Var& a)
{
    return unary(a, [](double x) { return std::abs(x); },
                 [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sum(const Var& a)
{
    double s = 0.0;
    for (double v : a.value())
        s += v;
    return ag::make_result({1}, {s}, {a}, [](ag::Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (auto& v : g)
            v += self.grad[0];
    });
}

Var mean(const Var& a)
{
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Var weighted_sum(const std::vector<Var>& xs, const std::vector<double>& ws)
{
    require(xs.size() == ws.size(), ErrorCode::InvalidArgument, "weighted_sum: size mismatch");
    double s = 0.0;
    std::vector<Var> parents;
    std::vector<double> used;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (ws[i] == 0.0)
            continue;
        s += ws[i] * xs[i].item();
        parents.push_back(xs[i]);
        used.push_back(ws[i]);
    }
    return ag::make_result({1}, {s}, std::move(parents), [used](ag::Node& self) {
        for (std::size_t i = 0; i < used.size(); ++i)
            if (parent(self, i).requires_grad)
                parent(self, i).grad_buffer()[0] += self.grad[0] * used[i];
    });
}

Var conv1x1(const Var& x, const Var& weight, const Var& bias)
{
    require_rank3(x, "conv1x1");
    require(weight.rank() == 2, ErrorCode::ShapeMismatch, "conv1x1: weight must be {Cout,Cin}");
    return conv1x1_impl(x, weight, bias, weight.dim(0));
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad)
{
    require_rank3(x, "conv2d");
    require(weight.rank() == 4 && weight.dim(2) == weight.dim(3), ErrorCode::ShapeMismatch,
            "conv2d: weight must be {Cout,Cin,k,k}");
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int cout = weight.dim(0), k = weight.dim(2);
    require(weight.dim(1) == cin, ErrorCode::ShapeMismatch, "conv2d: input channel mismatch");
    if (k == 1 && stride == 1 && pad == 0)
        return conv1x1_impl(x, weight, bias, cout);
    require(!bias || bias.numel() == static_cast<std::size_t>(cout), ErrorCode::ShapeMismatch,
            "conv2d: bias size mismatch");

    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (w + 2 * pad - k) / stride + 1;
    require(ho >= 1 && wo >= 1, ErrorCode::ShapeMismatch, "conv2d: input smaller than kernel");
    const int rows = cin * k * k, p = ho * wo;

    auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * p, 0.0);
    const auto xv = x.value();
    for (int ci = 0; ci < cin; ++ci)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                double* row = cols->data() + static_cast<std::size_t>((ci * k + ki) * k + kj) * p;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= h)
                        continue;
                    const double* src = xv.data() + (static_cast<std::size_t>(ci) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + kj - pad;
                        if (ix >= 0 && ix < w)
                            row[oy * wo + ox] = src[ix];
                    }
                }
            }

    std::vector<double> out(static_cast<std::size_t>(cout) * p);
    MatMap o(out.data(), cout, p);
    o.noalias() = ConstMatMap(weight.value().data(), cout, rows) * ConstMatMap(cols->data(), rows, p);
    if (bias) {
        const auto bv = bias.value();
        for (int r = 0; r < cout; ++r)
            o.row(r).array() += bv[r];
    }

    std::vector<Var> parents{x, weight};
    if (bias)
        parents.push_back(bias);
    return ag::make_result(
        {cout, ho, wo}, std::move(out), std::move(parents),
        [cols, cin, h, w, cout, k, stride, pad, ho, wo, rows, p](ag::Node& self) {
            ag::Node& px = parent(self, 0);
            ag::Node& pw = parent(self, 1);
            ConstMatMap dy(self.grad.data(), cout, p);
            if (pw.requires_grad)
                MatMap(pw.grad_buffer().data(), cout, rows).noalias() +=
                    dy * ConstMatMap(cols->data(), rows, p).transpose();
            if (self.parents.size() > 2 && parent(self, 2).requires_grad)
                VecMap(parent(self, 2).grad_buffer().data(), cout) += dy.rowwise().sum();
            if (!px.requires_grad)
                return;
            RowMat dcols = ConstMatMap(pw.value.data(), cout, rows).transpose() * dy;
            auto& dx = px.grad_buffer();
            for (int ci = 0; ci < cin; ++ci)
                for (int ki = 0; ki < k; ++ki)
                    for (int kj = 0; kj < k; ++kj) {
                        const double* row = dcols.data() + static_cast<std::size_t>((ci * k + ki) * k + kj) * p;
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * stride + ki - pad;
                            if (iy < 0 || iy >= h)
                                continue;
                            double* dst = dx.data() + (static_cast<std::size_t>(ci) * h + iy) * w;
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride + kj - pad;
                                if (ix >= 0 && ix < w)
                                    dst[ix] += row[oy * wo + ox];
                            }
                        }
                    }
        });
}

Var concat_channels(const Var& a, const Var& b)
{
    require_rank3(a, "concat_channels");
    require_rank3(b, "concat_channels");
    require(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2), ErrorCode::ShapeMismatch,
            "concat_channels: spatial mismatch");
    std::vector<double> out;
    out.reserve(a.numel() + b.numel());
    out.insert(out.end(), a.value().begin(), a.value().end());
    out.insert(out.end(), b.value().begin(), b.value().end());
    const std::size_t na = a.numel();
    return ag::make_result({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(out), {a, b},
                           [na](ag::Node& self) {
                               ag::Node& pa = parent(self, 0);
                               ag::Node& pb = parent(self, 1);
                               if (pa.requires_grad) {
                                   auto& g = pa.grad_buffer();
                                   for (std::size_t i = 0; i < na; ++i)
                                       g[i] += self.grad[i];
                               }
                               if (pb.requires_grad) {
                                   auto& g = pb.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       g[i] += self.grad[na + i];
                               }
                           });
}

Var pixel_shuffle2(const Var& x)
{
    require_rank3(x, "pixel_shuffle2");
    require(x.dim(0) % 4 == 0, ErrorCode::ShapeMismatch, "pixel_shuffle2: channels must be divisible by 4");
    const int c = x.dim(0) / 4, h = x.dim(1), w = x.dim(2);
    const int h2 = 2 * h, w2 = 2 * w;
    // out index -> in index
    auto src_index = [=](int oc, int oy, int ox) {
        const int sub = (oy & 1) * 2 + (ox & 1);
        return (static_cast<std::size_t>(oc * 4 + sub) * h + (oy >> 1)) * w + (ox >> 1);
    };
    const auto xv = x.value();
    std::vector<double> out(x.numel());
    for (int oc = 0; oc < c; ++oc)
        for (int oy = 0; oy < h2; ++oy)
            for (int ox = 0; ox < w2; ++ox)
                out[(static_cast<std::size_t>(oc) * h2 + oy) * w2 + ox] = xv[src_index(oc, oy, ox)];
    return ag::make_result({c, h2, w2}, std::move(out), {x}, [=](ag::Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (int oc = 0; oc < c; ++oc)
            for (int oy = 0; oy < h2; ++oy)
                for (int ox = 0; ox < w2; ++ox)
                    g[src_index(oc, oy, ox)] += self.grad[(static_cast<std::size_t>(oc) * h2 + oy) * w2 + ox];
    });
}

Var crop(const Var& x, int top, int left, int height, int width)
{
    require_rank3(x, "crop");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(top >= 0 && left >= 0 && top + height <= h && left + width <= w, ErrorCode::InvalidArgument,
            "crop: window outside tensor");
    const auto xv = x.value();
    std::vector<double> out(static_cast<std::size_t>(c) * height * width);
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < height; ++y)
            std::copy_n(xv.data() + (static_cast<std::size_t>(ci) * h + top + y) * w + left, width,
                        out.data() + (static_cast<std::size_t>(ci) * height + y) * width);
    return ag::make_result({c, height, width}, std::move(out), {x}, [=](ag::Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < height; ++y)
                for (int xx = 0; xx < width; ++xx)
                    g[(static_cast<std::size_t>(ci) * h + top + y) * w + left + xx] +=
                        self.grad[(static_cast<std::size_t>(ci) * height + y) * width + xx];
    });
}

Var layer_norm_channels(const Var& x, const Var& gain, const Var& bias, double eps)
{
    require_rank3(x, "layer_norm_channels");
    const int c = x.dim(0);
    const int n = x.dim(1) * x.dim(2);
    require(gain.numel() == static_cast<std::size_t>(c) && bias.numel() == static_cast<std::size_t>(c),
            ErrorCode::ShapeMismatch, "layer_norm_channels: affine size mismatch");

    const auto xv = x.value();
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto rstd = std::make_shared<std::vector<double>>(n, 0.0);
    std::vector<double> mu(n, 0.0);
    for (int ci = 0; ci < c; ++ci) {
        const double* src = xv.data() + static_cast<std::size_t>(ci) * n;
        for (int p = 0; p < n; ++p)
            mu[p] += src[p];
    }
    for (auto& m : mu)
        m /= c;
    auto& var = *rstd;
    for (int ci = 0; ci < c; ++ci) {
        const double* src = xv.data() + static_cast<std::size_t>(ci) * n;
        for (int p = 0; p < n; ++p) {
            const double d = src[p] - mu[p];
            var[p] += d * d;
        }
    }
    for (auto& v : var)
        v = 1.0 / std::sqrt(v / c + eps);

    const auto gv = gain.value(), bv = bias.value();
    std::vector<double> out(x.numel());
    for (int ci = 0; ci < c; ++ci) {
        const std::size_t off = static_cast<std::size_t>(ci) * n;
        for (int p = 0; p < n; ++p) {
            const double xh = (xv[off + p] - mu[p]) * var[p];
            (*xhat)[off + p] = xh;
            out[off + p] = gv[ci] * xh + bv[ci];
        }
    }
    return ag::make_result(x.shape(), std::move(out), {x, gain, bias}, [xhat, rstd, c, n](ag::Node& self) {
        ag::Node& px = parent(self, 0);
        ag::Node& pg = parent(self, 1);
        ag::Node& pb = parent(self, 2);
        const auto& dy = self.grad;
        if (pg.requires_grad || pb.requires_grad) {
            auto& dg = pg.grad_buffer();
            auto& db = pb.grad_buffer();
            for (int ci = 0; ci < c; ++ci) {
                const std::size_t off = static_cast<std::size_t>(ci) * n;
                double sg = 0.0, sb = 0.0;
                for (int p = 0; p < n; ++p) {
                    sg += dy[off + p] * (*xhat)[off + p];
                    sb += dy[off + p];
                }
                dg[ci] += sg;
                db[ci] += sb;
            }
        }
        if (!px.requires_grad)
            return;
        std::vector<double> m1(n, 0.0), m2(n, 0.0);
        for (int ci = 0; ci < c; ++ci) {
            const std::size_t off = static_cast<std::size_t>(ci) * n;
            const double g = pg.value[ci];
            for (int p = 0; p < n; ++p) {
                const double dxh = dy[off + p] * g;
                m1[p] += dxh;
                m2[p] += dxh * (*xhat)[off + p];
            }
        }
        auto& dx = px.grad_buffer();
        for (int ci = 0; ci < c; ++ci) {
            const std::size_t off = static_cast<std::size_t>(ci) * n;
            const double g = pg.value[ci];
            for (int p = 0; p < n; ++p) {
                const double dxh = dy[off + p] * g;
                dx[off + p] += (*rstd)[p] * (dxh - m1[p] / c - (*xhat)[off + p] * m2[p] / c);
            }
        }
    });
}

Var film(const Var& x, const Var& gamma, const Var& beta)
{
    require_rank3(x, "film");
    const int c = x.dim(0);
    const int n = x.dim(1) * x.dim(2);
    require(gamma.numel() == static_cast<std::size_t>(c) && beta.numel() == static_cast<std::size_t>(c),
            ErrorCode::ShapeMismatch, "film: modulation length must equal channel count");
    const auto xv = x.value(), gv = gamma.value(), bv = beta.value();
    std::vector<double> out(x.numel());
    for (int ci = 0; ci < c; ++ci) {
        const std::size_t off = static_cast<std::size_t>(ci) * n;
        for (int p = 0; p < n; ++p)
            out[off + p] = (1.0 + gv[ci]) * xv[off + p] + bv[ci];
    }
    return ag::make_result(x.shape(), std::move(out), {x, gamma, beta}, [c, n](ag::Node& self) {
        ag::Node& px = parent(self, 0);
        ag::Node& pg = parent(self, 1);
        ag::Node& pb = parent(self, 2);
        for (int ci = 0; ci < c; ++ci) {
            const std::size_t off = static_cast<std::size_t>(ci) * n;
            double sg = 0.0, sb = 0.0;
            for (int p = 0; p < n; ++p) {
                sg += self.grad[off + p] * px.value[off + p];
                sb += self.grad[off + p];
            }
            if (pg.requires_grad)
                pg.grad_buffer()[ci] += sg;
            if (pb.requires_grad)
                pb.grad_buffer()[ci] += sb;
            if (px.requires_grad) {
                auto& dx = px.grad_buffer();
                const double s = 1.0 + pg.value[ci];
                for (int p = 0; p < n; ++p)
                    dx[off + p] += s * self.grad[off + p];
            }
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias)
{
    require(weight.rank() == 2 && static_cast<std::size_t>(weight.dim(1)) == x.numel(), ErrorCode::ShapeMismatch,
            "linear: weight must be {out, in} matching the input length");
    const int out_dim = weight.dim(0), in_dim = weight.dim(1);
    require(!bias || bias.numel() == static_cast<std::size_t>(out_dim), ErrorCode::ShapeMismatch,
            "linear: bias size mismatch");
    std::vector<double> out(out_dim);
    VecMap o(out.data(), out_dim);
    o.noalias() = ConstMatMap(weight.value().data(), out_dim, in_dim) * ConstVecMap(x.value().data(), in_dim);
    if (bias)
        o += ConstVecMap(bias.value().data(), out_dim);
    std::vector<Var> parents{x, weight};
    if (bias)
        parents.push_back(bias);
    return ag::make_result({out_dim}, std::move(out), std::move(parents), [out_dim, in_dim](ag::Node& self) {
        ag::Node& px = parent(self, 0);
        ag::Node& pw = parent(self, 1);
        ConstVecMap dy(self.grad.data(), out_dim);
        if (pw.requires_grad)
            MatMap(pw.grad_buffer().data(), out_dim, in_dim).noalias() +=
                dy * ConstVecMap(px.value.data(), in_dim).transpose();
        if (px.requires_grad)
            VecMap(px.grad_buffer().data(), in_dim).noalias() +=
                ConstMatMap(pw.value.data(), out_dim, in_dim).transpose() * dy;
        if (self.parents.size() > 2 && parent(self, 2).requires_grad)
            VecMap(parent(self, 2).grad_buffer().data(), out_dim) += dy;
    });
}

Var gelu(const Var& x)
{
    constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        x, [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [=](double v, double) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v); });
}

Var slice(const Var& x, int offset, int length)
{
    require(offset >= 0 && length >= 0 && static_cast<std::size_t>(offset + length) <= x.numel(),
            ErrorCode::InvalidArgument, "slice: range outside tensor");
    std::vector<double> out(x.value().begin() + offset, x.value().begin() + offset + length);
    return ag::make_result({length}, std::move(out), {x}, [offset](ag::Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            g[offset + i] += self.grad[i];
    });
}

Var channel_mix(const Var& x, const std::vector<std::vector<double>>& m, const std::vector<double>& offset)
{
    require_rank3(x, "channel_mix");
    const int cin = x.dim(0), n = x.dim(1) * x.dim(2);
    const int rows = static_cast<int>(m.size());
    require(offset.size() == m.size(), ErrorCode::InvalidArgument, "channel_mix: offset size mismatch");
    for (const auto& r : m)
        require(r.size() == static_cast<std::size_t>(cin), ErrorCode::InvalidChannel,
                "channel_mix: coefficient row does not match input channels");
    const auto xv = x.value();
    std::vector<double> out(static_cast<std::size_t>(rows) * n);
    for (int r = 0; r < rows; ++r)
        for (int p = 0; p < n; ++p) {
            double s = offset[r];
            for (int ci = 0; ci < cin; ++ci)
                s += m[r][ci] * xv[static_cast<std::size_t>(ci) * n + p];
            out[static_cast<std::size_t>(r) * n + p] = s;
        }
    return ag::make_result({rows, x.dim(1), x.dim(2)}, std::move(out), {x}, [m, cin, rows, n](ag::Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (int r = 0; r < rows; ++r)
            for (int ci = 0; ci < cin; ++ci) {
                const double k = m[r][ci];
                if (k == 0.0)
                    continue;
                for (int p = 0; p < n; ++p)
                    g[static_cast<std::size_t>(ci) * n + p] += k * self.grad[static_cast<std::size_t>(r) * n + p];
            }
    });
}

Var filter_reflect(const Var& x, const std::vector<double>& kernel, int ksize)
{
    require_rank3(x, "filter_reflect");
    require(ksize % 2 == 1 && kernel.size() == static_cast<std::size_t>(ksize) * ksize, ErrorCode::InvalidArgument,
            "filter_reflect: kernel must be odd and square");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2), r = ksize / 2;
    // Precomputed reflected coordinates for each output row/col and tap.
    auto ry = std::make_shared<std::vector<int>>(static_cast<std::size_t>(h) * ksize);
    auto rx = std::make_shared<std::vector<int>>(static_cast<std::size_t>(w) * ksize);
    for (int y = 0; y < h; ++y)
        for (int i = 0; i < ksize; ++i)
            (*ry)[y * ksize + i] = reflect_index(y + i - r, h);
    for (int xx = 0; xx < w; ++xx)
        for (int j = 0; j < ksize; ++j)
            (*rx)[xx * ksize + j] = reflect_index(xx + j - r, w);

    const auto xv = x.value();
    std::vector<double> out(x.numel(), 0.0);
    for (int ci = 0; ci < c; ++ci) {
        const double* src = xv.data() + static_cast<std::size_t>(ci) * h * w;
        double* dst = out.data() + static_cast<std::size_t>(ci) * h * w;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double s = 0.0;
                for (int i = 0; i < ksize; ++i) {
                    const double* srow = src + static_cast<std::size_t>((*ry)[y * ksize + i]) * w;
                    const int* cx = rx->data() + xx * ksize;
                    for (int j = 0; j < ksize; ++j)
                        s += kernel[i * ksize + j] * srow[cx[j]];
                }
                dst[y * w + xx] = s;
            }
    }
    return ag::make_result(x.shape(), std::move(out), {x}, [kernel, ksize, c, h, w, ry, rx](ag::Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (int ci = 0; ci < c; ++ci) {
            double* dsrc = g.data() + static_cast<std::size_t>(ci) * h * w;
            const double* dy = self.grad.data() + static_cast<std::size_t>(ci) * h * w;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const double gy = dy[y * w + xx];
                    for (int i = 0; i < ksize; ++i) {
                        double* srow = dsrc + static_cast<std::size_t>((*ry)[y * ksize + i]) * w;
                        const int* cx = rx->data() + xx * ksize;
                        for (int j = 0; j < ksize; ++j)
                            srow[cx[j]] += kernel[i * ksize + j] * gy;
                    }
                }
        }
    });
}

Var from_image(const Image& img)
{
    std::vector<double> v(img.data().begin(), img.data().end());
    return Var::constant({img.channels(), img.height(), img.width()}, std::move(v));
}

Image to_image(const Var& x, bool clamp)
{
    require_rank3(x, "to_image");
    require(x.dim(0) == 1 || x.dim(0) == 3, ErrorCode::InvalidChannel, "to_image: expected 1 or 3 channels");
    std::vector<float> data(x.numel());
    const auto xv = x.value();
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<float>(clamp ? std::clamp(xv[i], 0.0, 1.0) : xv[i]);
    return Image(x.dim(1), x.dim(2), x.dim(0) == 3 ? Channels::Rgb3 : Channels::Gray1, std::move(data));
}

}  // namespace dfuse::ops
