// Fused attention kernels with hand-written backward passes.

#include "dfuse/ops.hpp"

#include "dfuse/error.hpp"

#include <Eigen/Core>

#include <cmath>
#include <memory>

namespace dfuse::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local AttentionProbe* g_probe = nullptr;

void softmax_rows(RowMat& s)
{
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
    }
}

// dS = P .* (dP - rowsum(dP .* P))
RowMat softmax_backward(const RowMat& p, const RowMat& dp)
{
    const Eigen::VectorXd dot = (dp.array() * p.array()).rowwise().sum();
    return p.array() * (dp.array().colwise() - dot.array());
}

void record(const RowMat& p)
{
    if (!g_probe)
        return;
    AttentionProbe::Matrix m;
    m.rows = static_cast<int>(p.rows());
    m.cols = static_cast<int>(p.cols());
    m.values.assign(p.data(), p.data() + p.size());
    g_probe->matrices.push_back(std::move(m));
}

}  // namespace

AttentionProbe::AttentionProbe() : prev_(g_probe) { g_probe = this; }
AttentionProbe::~AttentionProbe() { g_probe = prev_; }
AttentionProbe* AttentionProbe::active() noexcept { return g_probe; }

Var window_attention(const Var& qkv, int heads, int window)
{
    require(qkv.rank() == 3 && qkv.dim(0) % 3 == 0, ErrorCode::ShapeMismatch,
            "window_attention: qkv must be {3C,H,W}");
    const int c = qkv.dim(0) / 3, h = qkv.dim(1), w = qkv.dim(2);
    require(heads >= 1 && c % heads == 0, ErrorCode::InvalidArgument,
            "window_attention: channels not divisible by heads");
    require(window >= 1 && h % window == 0 && w % window == 0, ErrorCode::ShapeMismatch,
            "window_attention: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                " not divisible by window " + std::to_string(window));

    const int d = c / heads, t = window * window;
    const int nwy = h / window, nwx = w / window;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const std::size_t hw = static_cast<std::size_t>(h) * w;

    // Token t of window (wy, wx) maps to spatial offset token_off[t] + window base.
    auto token_off = std::make_shared<std::vector<std::size_t>>(t);
    for (int ty = 0; ty < window; ++ty)
        for (int tx = 0; tx < window; ++tx)
            (*token_off)[ty * window + tx] = static_cast<std::size_t>(ty) * w + tx;

    auto gather = [=](const double* base, int ch0, std::size_t origin, RowMat& m) {
        for (int j = 0; j < d; ++j) {
            const double* plane = base + static_cast<std::size_t>(ch0 + j) * hw + origin;
            for (int k = 0; k < t; ++k)
                m(k, j) = plane[(*token_off)[k]];
        }
    };
    auto scatter_add = [=](double* base, int ch0, std::size_t origin, const RowMat& m) {
        for (int j = 0; j < d; ++j) {
            double* plane = base + static_cast<std::size_t>(ch0 + j) * hw + origin;
            for (int k = 0; k < t; ++k)
                plane[(*token_off)[k]] += m(k, j);
        }
    };

    const double* qv = qkv.value().data();
    std::vector<double> out(static_cast<std::size_t>(c) * hw, 0.0);
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(nwy) * nwx * heads * t * t);
    RowMat q(t, d), k(t, d), v(t, d);
    for (int wy = 0; wy < nwy; ++wy)
        for (int wx = 0; wx < nwx; ++wx) {
            const std::size_t origin = static_cast<std::size_t>(wy) * window * w + static_cast<std::size_t>(wx) * window;
            for (int hd = 0; hd < heads; ++hd) {
                gather(qv, hd * d, origin, q);
                gather(qv, c + hd * d, origin, k);
                gather(qv, 2 * c + hd * d, origin, v);
                RowMat s = (q * k.transpose()) * scale;
                softmax_rows(s);
                record(s);
                const std::size_t slot = ((static_cast<std::size_t>(wy) * nwx + wx) * heads + hd) * t * t;
                std::copy(s.data(), s.data() + s.size(), probs->data() + slot);
                const RowMat o = s * v;
                scatter_add(out.data(), hd * d, origin, o);
            }
        }

    return ag::make_result({c, h, w}, std::move(out), {qkv}, [=](ag::Node& self) {
        ag::Node& px = *self.parents[0];
        auto& dx = px.grad_buffer();
        const double* xv = px.value.data();
        RowMat q(t, d), k(t, d), v(t, d), dout(t, d);
        for (int wy = 0; wy < nwy; ++wy)
            for (int wx = 0; wx < nwx; ++wx) {
                const std::size_t origin =
                    static_cast<std::size_t>(wy) * window * w + static_cast<std::size_t>(wx) * window;
                for (int hd = 0; hd < heads; ++hd) {
                    gather(xv, hd * d, origin, q);
                    gather(xv, c + hd * d, origin, k);
                    gather(xv, 2 * c + hd * d, origin, v);
                    gather(self.grad.data(), hd * d, origin, dout);
                    const std::size_t slot = ((static_cast<std::size_t>(wy) * nwx + wx) * heads + hd) * t * t;
                    const ConstMatMap p(probs->data() + slot, t, t);
                    const RowMat dv = p.transpose() * dout;
                    const RowMat dp = dout * v.transpose();
                    const RowMat ds = softmax_backward(p, dp);
                    const RowMat dq = (ds * k) * scale;
                    const RowMat dk = (ds.transpose() * q) * scale;
                    scatter_add(dx.data(), hd * d, origin, dq);
                    scatter_add(dx.data(), c + hd * d, origin, dk);
                    scatter_add(dx.data(), 2 * c + hd * d, origin, dv);
                }
            }
    });
}

Var channel_attention(const Var& qkv, const Var& temperature, int heads)
{
    require(qkv.rank() == 3 && qkv.dim(0) % 3 == 0, ErrorCode::ShapeMismatch,
            "channel_attention: qkv must be {3C,H,W}");
    const int c = qkv.dim(0) / 3;
    require(heads >= 1 && c % heads == 0, ErrorCode::InvalidArgument,
            "channel_attention: channels not divisible by heads");
    require(temperature.numel() == static_cast<std::size_t>(heads), ErrorCode::ShapeMismatch,
            "channel_attention: one temperature per head expected");
    constexpr double kNormEps = 1e-12;
    const int d = c / heads;
    const int n = qkv.dim(1) * qkv.dim(2);

    const double* base = qkv.value().data();
    const auto tau = temperature.value();

    struct Saved {
        std::vector<RowMat> qhat, khat, p;
        std::vector<Eigen::VectorXd> qn, kn;
    };
    auto saved = std::make_shared<Saved>();

    auto normalize = [&](const ConstMatMap& m, RowMat& hat, Eigen::VectorXd& norms) {
        norms = m.rowwise().norm();
        hat = m;
        for (Eigen::Index r = 0; r < hat.rows(); ++r)
            hat.row(r) /= std::max(norms[r], kNormEps);
    };

    std::vector<double> out(static_cast<std::size_t>(c) * n);
    for (int hd = 0; hd < heads; ++hd) {
        const ConstMatMap q(base + static_cast<std::size_t>(hd * d) * n, d, n);
        const ConstMatMap k(base + static_cast<std::size_t>(c + hd * d) * n, d, n);
        const ConstMatMap v(base + static_cast<std::size_t>(2 * c + hd * d) * n, d, n);
        RowMat qh, kh;
        Eigen::VectorXd qn, kn;
        normalize(q, qh, qn);
        normalize(k, kh, kn);
        RowMat s = (qh * kh.transpose()) * tau[hd];
        softmax_rows(s);
        record(s);
        MatMap(out.data() + static_cast<std::size_t>(hd * d) * n, d, n).noalias() = s * v;
        saved->qhat.push_back(std::move(qh));
        saved->khat.push_back(std::move(kh));
        saved->qn.push_back(std::move(qn));
        saved->kn.push_back(std::move(kn));
        saved->p.push_back(std::move(s));
    }

    return ag::make_result({c, qkv.dim(1), qkv.dim(2)}, std::move(out), {qkv, temperature}, [=](ag::Node& self) {
        ag::Node& px = *self.parents[0];
        ag::Node& pt = *self.parents[1];
        for (int hd = 0; hd < heads; ++hd) {
            const RowMat& qh = saved->qhat[hd];
            const RowMat& kh = saved->khat[hd];
            const RowMat& p = saved->p[hd];
            const double t = pt.value[hd];
            const ConstMatMap dout(self.grad.data() + static_cast<std::size_t>(hd * d) * n, d, n);
            const ConstMatMap v(px.value.data() + static_cast<std::size_t>(2 * c + hd * d) * n, d, n);
            const RowMat dp = dout * v.transpose();
            const RowMat ds = softmax_backward(p, dp);
            if (pt.requires_grad)
                pt.grad_buffer()[hd] += (ds.array() * (qh * kh.transpose()).array()).sum();
            if (!px.requires_grad)
                continue;
            auto& dx = px.grad_buffer();
            MatMap(dx.data() + static_cast<std::size_t>(2 * c + hd * d) * n, d, n).noalias() += p.transpose() * dout;
            const RowMat dqh = (ds * kh) * t;
            const RowMat dkh = (ds.transpose() * qh) * t;
            auto unnormalize = [&](const RowMat& hat, const RowMat& dhat, const Eigen::VectorXd& norms, int ch0) {
                MatMap dst(dx.data() + static_cast<std::size_t>(ch0) * n, d, n);
                for (int r = 0; r < d; ++r) {
                    if (norms[r] > kNormEps) {
                        const double proj = hat.row(r).dot(dhat.row(r));
                        dst.row(r) += (dhat.row(r) - proj * hat.row(r)) / norms[r];
                    } else {
                        dst.row(r) += dhat.row(r) / kNormEps;
                    }
                }
            };
            unnormalize(qh, dqh, saved->qn[hd], hd * d);
            unnormalize(kh, dkh, saved->kn[hd], c + hd * d);
        }
    });
}

}  // namespace dfuse::ops
