#pragma once

#include <array>

namespace dfuse {

// Coefficients for the fusion objective and the distillation objective.
struct LossWeights {
    double lambda_int = 24.0;
    double lambda_ssim = 40.0;
    double lambda_grad = 48.0;
    double lambda_color = 12.0;
    double delta_ir = 1.0;
    std::array<double, 3> alpha{1.0, 1.0, 1.0};  // base, feature, output terms

    void validate() const;
    LossWeights scaled(double k) const;
};

}  // namespace dfuse
