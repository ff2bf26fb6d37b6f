#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "empo/env.hpp"
#include "empo/network.hpp"

namespace empo {

struct EstimatorConfig {
    int n_steps = 1;
    std::vector<MlpSpec::Hidden> hidden = {{128, Activation::tanh},
                                           {128, Activation::tanh},
                                           {128, Activation::tanh},
                                           {128, Activation::tanh}};
    // When set, the source is a fixed zero-mean Gaussian with this std and no
    // squashing (the analytic verification channels need a closed-form source).
    bool fixed_source = false;
    double fixed_source_std = 1.0;

    void validate() const;
};

struct MiEstimate {
    double mean = 0.0;
    double stderr_value = 0.0;  // NaN when fewer than 2 samples
    int samples = 0;
};

// Variational lower bound on the action -> successor-state mutual information:
// a source net (or fixed Gaussian) proposes actions, the dynamics produce the
// successor, and a planner net scores the action given both states. For
// n_steps > 1 the planner is a factorized chain over the action sequence,
// conditioned on start state, final state, previous action and step index.
class EmpowermentEstimator {
public:
    EmpowermentEstimator(const Dynamics& dynamics, EstimatorConfig config, RngStream init_rng);

    EmpowermentEstimator(const EmpowermentEstimator&) = delete;
    EmpowermentEstimator& operator=(const EmpowermentEstimator&) = delete;
    EmpowermentEstimator(EmpowermentEstimator&& other) noexcept;
    EmpowermentEstimator& operator=(EmpowermentEstimator&& other) noexcept;

    const Dynamics& dynamics() const { return *dynamics_; }
    const EstimatorConfig& config() const { return config_; }
    int n_steps() const { return config_.n_steps; }
    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }

    // One differentiable bound sample ln q - ln omega at `state`.
    Tensor mi_sample(Tape& tape, Tensor state, RngStream& noise_rng) const;

    // Monte-Carlo empowerment estimate at a state.
    MiEstimate estimate(const std::vector<double>& state, int n_samples, RngStream rng) const;

    struct TrainConfig {
        int iterations = 500;
        int states_per_batch = 16;
        int samples_per_state = 2;
        double learning_rate = 1e-3;
        OptimizerConfig opt;
        bool train_source = true;
        int threads = 0;  // batch-parallel workers; 0 = hardware concurrency
    };
    using StateSampler = std::function<std::vector<double>(RngStream&)>;

    // Joint gradient ascent on the batch-mean bound in the source and planner
    // parameters. Returns the per-iteration mean bound; writes
    // "iteration,mean_mi,grad_norm" rows to `log` when given.
    std::vector<double> train(const StateSampler& sampler, const TrainConfig& config,
                              RngStream rng, std::ostream* log = nullptr);

    // Expected KL(true posterior || planner) on the linear-Gaussian channel.
    double gap_estimate_linear_gaussian(const std::vector<double>& state, int n_samples,
                                        RngStream rng) const;

    // Source distribution parameters at a state (diagnostics, values only).
    std::pair<std::vector<double>, std::vector<double>> source_params(
        const std::vector<double>& state) const;

    void save(const std::string& path) const;
    static EmpowermentEstimator load(const Dynamics& dynamics, const std::string& path);

private:
    EmpowermentEstimator(const Dynamics& dynamics, EstimatorConfig config);

    DiagonalGaussian source_dist(Tape& tape, Tensor obs) const;
    Tensor action_from_pre(Tape& tape, Tensor pre) const;
    Tensor mi_sample_single(Tape& tape, Tensor state, RngStream& noise_rng) const;
    Tensor mi_sample_nstep(Tape& tape, Tensor state, RngStream& noise_rng) const;

    const Dynamics* dynamics_;
    EstimatorConfig config_;
    ParameterStore store_;
    Mlp source_net_;  // unused when fixed_source
    Mlp planner_net_;
};

// Capacity (nats, per dimension) of the additive Gaussian channel with a fixed
// Gaussian source: 0.5 ln(1 + sigma_source^2 / sigma_noise^2).
double gaussian_channel_capacity(double sigma_source, double sigma_noise);

struct GridSpec {
    double lo1 = 0.0, hi1 = 1.0;
    int n1 = 1;
    double lo2 = 0.0, hi2 = 1.0;
    int n2 = 1;
};

struct LandscapeCell {
    double c1 = 0.0, c2 = 0.0;
    double value = 0.0;
    double stderr_value = 0.0;
};

using StateFromGrid = std::function<std::vector<double>(double, double)>;

// Per-cell Monte-Carlo empowerment over a 2-D grid; cells evaluate in parallel
// and share one deterministic noise stream (common random numbers), which keeps
// each estimate unbiased while making between-cell comparisons much tighter.
std::vector<LandscapeCell> empowerment_landscape(const EmpowermentEstimator& est,
                                                 const GridSpec& grid, int samples_per_cell,
                                                 RngStream rng, const StateFromGrid& state_fn,
                                                 int threads = 0);

void save_landscape_csv(const std::vector<LandscapeCell>& cells, const std::string& path,
                        const std::string& dim1, const std::string& dim2);

}  // namespace empo
