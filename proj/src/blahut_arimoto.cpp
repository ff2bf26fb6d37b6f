#include "empo/blahut_arimoto.hpp"

#include <cmath>

#include "empo/errors.hpp"

namespace empo {

double blahut_arimoto_capacity(const std::vector<std::vector<double>>& channel, double tolerance,
                               int max_iterations) {
    const std::size_t n_in = channel.size();
    if (n_in == 0) throw ValidationError("blahut_arimoto: empty channel");
    const std::size_t n_out = channel[0].size();
    for (const auto& row : channel) {
        if (row.size() != n_out) throw ValidationError("blahut_arimoto: ragged channel matrix");
        double sum = 0.0;
        for (double p : row) {
            if (p < 0.0) throw ValidationError("blahut_arimoto: negative channel probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ValidationError("blahut_arimoto: channel row does not sum to 1 (sum=" +
                                  std::to_string(sum) + ")");
    }

    std::vector<double> input(n_in, 1.0 / static_cast<double>(n_in));
    std::vector<double> output(n_out, 0.0);
    std::vector<double> exponent(n_in, 0.0);
    double capacity = 0.0;

    for (int iter = 0; iter < max_iterations; ++iter) {
        std::fill(output.begin(), output.end(), 0.0);
        for (std::size_t x = 0; x < n_in; ++x)
            for (std::size_t y = 0; y < n_out; ++y) output[y] += input[x] * channel[x][y];

        // D(x) = sum_y p(y|x) ln( p(y|x) / q(y) )
        for (std::size_t x = 0; x < n_in; ++x) {
            double d = 0.0;
            for (std::size_t y = 0; y < n_out; ++y) {
                const double p = channel[x][y];
                if (p > 0.0) d += p * std::log(p / output[y]);
            }
            exponent[x] = d;
        }

        double z = 0.0;
        for (std::size_t x = 0; x < n_in; ++x) z += input[x] * std::exp(exponent[x]);
        const double new_capacity = std::log(z);

        for (std::size_t x = 0; x < n_in; ++x) input[x] = input[x] * std::exp(exponent[x]) / z;

        if (iter > 0 && std::abs(new_capacity - capacity) < tolerance) return new_capacity;
        capacity = new_capacity;
    }
    return capacity;
}

std::vector<std::vector<double>> discretize_additive_gaussian_channel(
    const std::vector<double>& action_grid, int bins, double y_lo, double y_hi, double sigma) {
    if (bins < 2) throw ValidationError("discretize: need at least 2 bins");
    if (sigma <= 0.0) throw ValidationError("discretize: sigma must be positive");
    const double width = (y_hi - y_lo) / bins;
    std::vector<std::vector<double>> channel(action_grid.size(), std::vector<double>(bins, 0.0));
    const double inv = 1.0 / (sigma * std::sqrt(2.0));
    for (std::size_t x = 0; x < action_grid.size(); ++x) {
        double prev_cdf = 0.0;  // mass below y_lo folded into the first bin
        for (int b = 0; b < bins; ++b) {
            const double edge = y_lo + width * (b + 1);
            double cdf = 0.5 * (1.0 + std::erf((edge - action_grid[x]) * inv));
            if (b == bins - 1) cdf = 1.0;  // fold the upper tail into the last bin
            channel[x][b] = cdf - prev_cdf;
            prev_cdf = cdf;
        }
    }
    return channel;
}

}  // namespace empo
