#include "empo/distributions.hpp"

#include <cmath>

namespace empo {

namespace {
constexpr double kHalfLn2Pi = 0.91893853320467274178;  // 0.5 ln(2 pi)
}

Tensor DiagonalGaussian::rsample(std::span<const double> noise) const {
    Tape& t = *mean.tape;
    if (noise.size() != mean.size())
        throw TensorError("rsample: noise size " + std::to_string(noise.size()) +
                          " does not match dimension " + std::to_string(mean.size()));
    Tensor eps = t.leaf(mean.shape(), std::vector<double>(noise.begin(), noise.end()));
    return t.add(mean, t.mul(std, eps));
}

Tensor DiagonalGaussian::log_prob(Tensor x) const {
    Tape& t = *mean.tape;
    if (x.shape() != mean.shape())
        throw TensorError("log_prob: value shape " + shape_str(x.shape()) + " vs mean " +
                          shape_str(mean.shape()));
    Tensor z = t.div(t.sub(x, mean), std);
    Tensor quad = t.affine(t.sum(t.square(z)), -0.5, 0.0);
    Tensor logdet = t.neg(t.sum(t.ln(std)));
    Tensor norm = t.scalar(-kHalfLn2Pi * static_cast<double>(mean.size()));
    return t.add(t.add(quad, logdet), norm);
}

Tensor DiagonalGaussian::kl_to_standard_normal() const {
    Tape& t = *mean.tape;
    Tensor var = t.square(std);
    Tensor inner = t.sub(t.add(t.square(mean), var), t.affine(t.ln(var), 1.0, 1.0));
    return t.affine(t.sum(inner), 0.5, 0.0);
}

Tensor DiagonalGaussian::kl_to(const DiagonalGaussian& other) const {
    Tape& t = *mean.tape;
    Tensor ratio = t.div(std, other.std);
    Tensor var_term = t.square(ratio);
    Tensor mean_term = t.square(t.div(t.sub(mean, other.mean), other.std));
    Tensor inner = t.sub(t.add(var_term, mean_term), t.affine(t.ln(var_term), 1.0, 1.0));
    return t.affine(t.sum(inner), 0.5, 0.0);
}

SquashedAction squash(Tensor pre, std::span<const double> u_max) {
    Tape& t = *pre.tape;
    if (u_max.size() != pre.size())
        throw TensorError("squash: u_max size mismatch");
    for (double b : u_max)
        if (b <= 0.0) throw TensorError("squash: u_max must be positive");
    Tensor bounds = t.leaf(pre.shape(), std::vector<double>(u_max.begin(), u_max.end()));
    return SquashedAction{pre, t.mul(bounds, t.tanh(pre))};
}

}  // namespace empo
