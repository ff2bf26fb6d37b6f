#pragma once

#include <vector>

namespace empo {

// Channel capacity in nats of a discrete memoryless channel given as a row-
// stochastic matrix p(y|x). Iterates until the capacity estimate changes by
// less than `tolerance`. Throws ValidationError on non-stochastic rows.
double blahut_arimoto_capacity(const std::vector<std::vector<double>>& channel,
                               double tolerance = 1e-9, int max_iterations = 100000);

// Row-stochastic discretization of the 1-D noisy-addition channel
// y = a + sigma * eps over an action grid and successor-state bins.
std::vector<std::vector<double>> discretize_additive_gaussian_channel(
    const std::vector<double>& action_grid, int bins, double y_lo, double y_hi, double sigma);

}  // namespace empo
