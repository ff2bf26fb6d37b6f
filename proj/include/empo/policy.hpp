#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "empo/dvbf.hpp"
#include "empo/empowerment.hpp"
#include "empo/env.hpp"
#include "empo/network.hpp"

namespace empo {

// Stochastic Gaussian controller on the pre-squash variable; emitted actions
// are u_max * tanh(pre) when the action space is bounded.
class GaussianPolicy {
public:
    GaussianPolicy(int obs_dim, int action_dim, std::vector<double> u_max,
                   std::vector<MlpSpec::Hidden> hidden, RngStream init_rng);

    GaussianPolicy(const GaussianPolicy&) = delete;
    GaussianPolicy& operator=(const GaussianPolicy&) = delete;
    GaussianPolicy(GaussianPolicy&& other) noexcept;
    GaussianPolicy& operator=(GaussianPolicy&& other) noexcept;

    int obs_dim() const { return obs_dim_; }
    int action_dim() const { return action_dim_; }
    const std::vector<double>& u_max() const { return u_max_; }
    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }

    DiagonalGaussian pre_squash_dist(Tape& tape, Tensor obs) const;
    Tensor action_from_pre(Tape& tape, Tensor pre) const;

    // Values-only action at an observation; mean action when rng is null.
    std::vector<double> act(const std::vector<double>& obs, RngStream* rng = nullptr) const;

    void save(const std::string& path) const;
    static GaussianPolicy load(const std::string& path);

private:
    GaussianPolicy() = default;

    int obs_dim_ = 0;
    int action_dim_ = 0;
    std::vector<double> u_max_;
    std::vector<MlpSpec::Hidden> hidden_;
    ParameterStore store_;
    Mlp net_;
};

struct PolicyTrainConfig {
    int epochs = 800;
    int horizon = 20;    // T
    int rollouts = 8;    // M
    double beta_start = 5.0;
    double beta_end = 2000.0;
    double lr_theta = 1e-3;  // source + planner
    double lr_chi = 3e-4;    // policy
    OptimizerConfig opt;
    bool alternating = false;  // update theta on even epochs, chi on odd ones
    // Extra off-rollout states per epoch feeding only the source/planner bound.
    int extra_states = 0;
    EmpowermentEstimator::StateSampler extra_state_sampler;
    // Rollout start states; defaults to the environment reset distribution.
    EmpowermentEstimator::StateSampler reset_sampler;

    void validate() const;
};

struct PolicyEpochMetrics {
    int epoch = 0;
    double beta = 0.0;
    double mean_mi = 0.0;     // per visited state
    double policy_kl = 0.0;   // per visited state
    double grad_norm_theta = 0.0;
    double grad_norm_chi = 0.0;
};

// Interpolates the regularization weight geometrically from beta_start to
// beta_end across the configured epochs.
double beta_at(const PolicyTrainConfig& config, int epoch);

struct PolicyObjective {
    Tensor objective;  // (beta * sum Î - sum KL) / rollouts
    double total_mi = 0.0;
    double total_kl = 0.0;
    int visited_states = 0;
};

// One epoch of the joint objective, built differentiably on `tape`: policy
// rollouts through the dynamics, a one-shot bound sample and a prior KL at
// every visited state, plus optional extra bound-only states.
PolicyObjective build_policy_objective(Tape& tape, const GaussianPolicy& policy,
                                       const EmpowermentEstimator& est, const Dynamics& dynamics,
                                       double beta, int rollouts, int horizon,
                                       RngStream& reset_rng, RngStream& noise_rng,
                                       int extra_states = 0,
                                       const EmpowermentEstimator::StateSampler& extra_sampler = {},
                                       const EmpowermentEstimator::StateSampler& reset_sampler = {});

// Joint training loop: roll the policy through the differentiable dynamics,
// score each visited state with a one-shot bound sample, subtract the KL to
// the standard-normal prior, and ascend the source/planner and the policy on
// the same objective. Writes
// "epoch,beta,mean_mi,policy_kl,grad_norm_theta,grad_norm_chi" rows to `log`.
std::vector<PolicyEpochMetrics> train_policy(GaussianPolicy& policy, EmpowermentEstimator& est,
                                             const Dynamics& dynamics,
                                             const PolicyTrainConfig& config, RngStream rng,
                                             std::ostream* log = nullptr);

// Mean total bound collected along policy rollouts started from each grid
// cell; the per-state values come from the estimator's MC average.
std::vector<LandscapeCell> accumulated_empowerment_landscape(
    const GaussianPolicy& policy, const EmpowermentEstimator& est, const Dynamics& dynamics,
    const GridSpec& grid, int horizon, int rollouts_per_cell, int samples_per_state,
    RngStream rng, const StateFromGrid& state_fn, int threads = 0);

struct EvalConfig {
    int episodes = 10;
    int horizon = 500;
    bool stochastic = false;  // sample actions instead of taking the mean
};

struct PolicyEvaluation {
    int episodes = 0;
    int horizon = 0;
    // Pendulum: fraction of episodes with >= 100 consecutive steps within
    // 0.3 rad of upright. NaN elsewhere.
    double swing_up_rate = 0.0;
    // Ball: distances measured on the first two state coordinates. NaN elsewhere.
    double mean_distance_to_wall = 0.0;
    double mean_distance_to_center = 0.0;
    double outer_shell_mass = 0.0;  // fraction of steps in the outer 10% shell
    double mean_step_latency_sec = 0.0;
    std::vector<std::vector<double>> states;  // all visited env states, episodes concatenated
};

// Closed-loop evaluation on the true environment. With a filter, observations
// are folded into a latent belief each step and the policy reads the belief;
// otherwise the policy reads the raw observation. Latency covers the per-step
// filter update plus the policy forward pass.
PolicyEvaluation evaluate_policy(const GaussianPolicy& policy, const Dynamics& env,
                                 const DvbfModel* filter, const EvalConfig& config,
                                 RngStream rng);

// Same protocol with uniform-random actions (baseline histograms).
PolicyEvaluation evaluate_random_policy(const Dynamics& env, const EvalConfig& config,
                                        RngStream rng);

void save_eval_states_csv(const PolicyEvaluation& eval, const std::string& path);

}  // namespace empo
