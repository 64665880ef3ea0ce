#pragma once

#include "dfuse/autograd.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace dfuse::optim {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    double min_lr_ratio = 0.1;  // cosine floor as a fraction of lr
    double clip_norm = 1.0;     // <= 0 disables clipping
    void validate() const;
};

// Cosine decay from lr to lr * min_lr_ratio over `total` steps.
double cosine_lr(const AdamWConfig& cfg, std::uint64_t step, std::uint64_t total);

using NamedParams = std::vector<std::pair<std::string, ag::Var>>;

// AdamW with decoupled weight decay on rank >= 2 tensors. After every update the
// parameters and moments are rounded to float precision so that a float32
// checkpoint captures the optimiser state exactly.
class AdamW {
public:
    AdamW(NamedParams params, AdamWConfig cfg);

    // Returns the global gradient norm before clipping.
    double step(double lr);
    double grad_norm() const;
    void zero_grad();

    std::uint64_t steps_taken() const noexcept { return t_; }
    void set_steps_taken(std::uint64_t t) noexcept { t_ = t; }
    const AdamWConfig& config() const noexcept { return cfg_; }
    const NamedParams& params() const noexcept { return params_; }

    const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
    const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }
    void set_moments(std::size_t i, std::vector<double> m, std::vector<double> v);

private:
    NamedParams params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t t_ = 0;
};

inline double round_to_float(double v) noexcept { return static_cast<double>(static_cast<float>(v)); }

}  // namespace dfuse::optim
