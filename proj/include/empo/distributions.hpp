#pragma once

#include <span>
#include <vector>

#include "empo/tensor.hpp"

namespace empo {

// std elements are expected to be floored at sigma_min by whoever produced them.
inline constexpr double kSigmaMin = 1e-3;

// Diagonal Gaussian over a tape; mean and std are rank-1 tensors of equal shape.
struct DiagonalGaussian {
    Tensor mean;
    Tensor std;

    int dim() const { return mean.shape().empty() ? 1 : mean.shape()[0]; }

    // mean + std * noise, differentiable w.r.t. mean and std.
    Tensor rsample(std::span<const double> noise) const;

    // sum_i [ -0.5 ln(2 pi) - ln std_i - 0.5 ((x_i - mean_i)/std_i)^2 ]
    Tensor log_prob(Tensor x) const;

    // sum_i 0.5 (mean_i^2 + std_i^2 - 1 - 2 ln std_i)
    Tensor kl_to_standard_normal() const;

    // KL(this || other), both diagonal.
    Tensor kl_to(const DiagonalGaussian& other) const;
};

struct SquashedAction {
    Tensor pre_squash;
    Tensor action;  // u_max * tanh(pre_squash)
};

// action = u_max (elementwise) * tanh(pre); u_max must be positive.
SquashedAction squash(Tensor pre, std::span<const double> u_max);

}  // namespace empo
