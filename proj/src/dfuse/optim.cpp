#include "dfuse/optim.hpp"

#include "dfuse/error.hpp"

#include <cmath>
#include <numbers>

namespace dfuse::optim {

void AdamWConfig::validate() const
{
    require(std::isfinite(lr) && lr > 0.0, ErrorCode::Config, "optim.lr must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0, ErrorCode::Config, "optim.beta1 must be in [0,1)");
    require(beta2 >= 0.0 && beta2 < 1.0, ErrorCode::Config, "optim.beta2 must be in [0,1)");
    require(eps > 0.0, ErrorCode::Config, "optim.eps must be positive");
    require(weight_decay >= 0.0, ErrorCode::Config, "optim.weight_decay must be non-negative");
    require(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0, ErrorCode::Config, "optim.min_lr_ratio must be in [0,1]");
}

double cosine_lr(const AdamWConfig& cfg, std::uint64_t step, std::uint64_t total)
{
    if (total == 0)
        return cfg.lr;
    const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return cfg.lr * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cosine);
}

AdamW::AdamW(NamedParams params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg)
{
    cfg_.validate();
    for (const auto& [name, p] : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

double AdamW::grad_norm() const
{
    double sq = 0.0;
    for (const auto& [name, p] : params_)
        for (double g : p.grad())
            sq += g * g;
    return std::sqrt(sq);
}

void AdamW::zero_grad()
{
    for (auto& [name, p] : params_)
        p.zero_grad();
}

double AdamW::step(double lr)
{
    const double norm = grad_norm();
    const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i].second;
        const auto grad = p.grad();
        auto value = p.mutable_value();
        auto& m = m_[i];
        auto& v = v_[i];
        const bool decay = p.rank() >= 2 && cfg_.weight_decay > 0.0;
        for (std::size_t k = 0; k < value.size(); ++k) {
            const double g = grad.empty() ? 0.0 : grad[k] * clip;
            m[k] = round_to_float(cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g);
            v[k] = round_to_float(cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g);
            double w = value[k];
            if (decay)
                w -= lr * cfg_.weight_decay * w;
            w -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
            value[k] = round_to_float(w);
        }
    }
    return norm;
}

void AdamW::set_moments(std::size_t i, std::vector<double> m, std::vector<double> v)
{
    require(m.size() == m_.at(i).size() && v.size() == v_.at(i).size(), ErrorCode::ShapeMismatch,
            "optimiser moment size mismatch for " + params_.at(i).first);
    m_[i] = std::move(m);
    v_[i] = std::move(v);
}

}  // namespace dfuse::optim
