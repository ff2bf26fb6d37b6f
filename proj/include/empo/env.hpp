#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "empo/rng.hpp"
#include "empo/tensor.hpp"

namespace empo {

struct EnvSpec {
    std::string name;
    int state_dim = 0;
    int obs_dim = 0;
    int action_dim = 0;
    std::vector<double> u_max;  // empty means unbounded (no tanh squashing)
    double dt = 0.0;
    double process_noise_std = 0.0;
    double obs_noise_std = 0.0;
};

// A stochastic, differentiable one-step transition. All randomness enters
// through the explicit noise argument so that sampling can be reparametrized.
class Dynamics {
public:
    virtual ~Dynamics() = default;

    virtual const EnvSpec& spec() const = 0;
    virtual int noise_dim() const = 0;

    // Differentiable transition; `action` must already respect the bounds.
    virtual Tensor step(Tape& tape, Tensor state, Tensor action,
                        std::span<const double> noise) const = 0;

    // Differentiable state -> observation map (identity by default).
    virtual Tensor observe_tensor(Tape& tape, Tensor state) const;

    virtual std::vector<double> reset_state(RngStream& rng) const = 0;

    // Non-differentiable conveniences built on the tape path.
    std::vector<double> step_values(const std::vector<double>& state,
                                    const std::vector<double>& action,
                                    std::span<const double> noise) const;
    std::vector<double> observe(const std::vector<double>& state) const;
};

// Torque-controlled pendulum with friction. State (theta, theta_dot); theta is
// unwrapped inside the dynamics and wrapped to [-pi, pi] at observation time.
class PendulumEnv final : public Dynamics {
public:
    struct Params {
        double g = 10.0;
        double m = 1.0;
        double l = 1.0;
        double dt = 0.05;
        double friction = 0.05;
        double u_max = 2.0;
        double max_speed = 8.0;
        double process_noise_std = 0.01;
    };

    PendulumEnv() : PendulumEnv(Params{}) {}
    explicit PendulumEnv(Params params);

    const EnvSpec& spec() const override { return spec_; }
    int noise_dim() const override { return 2; }
    Tensor step(Tape& tape, Tensor state, Tensor action,
                std::span<const double> noise) const override;
    Tensor observe_tensor(Tape& tape, Tensor state) const override;
    // Hanging at rest with small perturbations.
    std::vector<double> reset_state(RngStream& rng) const override;

    const Params& params() const { return params_; }

private:
    Params params_;
    EnvSpec spec_;
};

// Ball in a square box; controls add directly to the position and any motion
// perpendicular to a wall is absorbed at the wall.
class BallEnv final : public Dynamics {
public:
    struct Params {
        double box_size = 10.0;  // side length L; positions live in [-L/2, L/2]^2
        double u_max = 0.5;
        double process_noise_std = 0.05;
    };

    BallEnv() : BallEnv(Params{}) {}
    explicit BallEnv(Params params);

    const EnvSpec& spec() const override { return spec_; }
    int noise_dim() const override { return 2; }
    Tensor step(Tape& tape, Tensor state, Tensor action,
                std::span<const double> noise) const override;
    // Uniform over the box.
    std::vector<double> reset_state(RngStream& rng) const override;

    const Params& params() const { return params_; }
    double half_box() const { return params_.box_size / 2.0; }

private:
    Params params_;
    EnvSpec spec_;
};

// s' = s + a + sigma_eps * noise. Verification channel with an analytic
// capacity and planning posterior; actions are unbounded.
class LinearGaussianChannel final : public Dynamics {
public:
    LinearGaussianChannel(int dim, double noise_std);

    const EnvSpec& spec() const override { return spec_; }
    int noise_dim() const override { return spec_.state_dim; }
    Tensor step(Tape& tape, Tensor state, Tensor action,
                std::span<const double> noise) const override;
    std::vector<double> reset_state(RngStream& rng) const override;

    double noise_std() const { return spec_.process_noise_std; }

private:
    EnvSpec spec_;
};

std::unique_ptr<Dynamics> make_env(const std::string& name);

double wrap_angle(double theta);

// Rollout-start distribution for pendulum policy training: uniform state
// coverage, states on the natural swing-up energy corridor, the upright
// balance region, and the rest distribution. The corridor component exposes
// the approach path so the policy learns the hand-off into balancing.
std::vector<double> pendulum_policy_reset(RngStream& rng);

}  // namespace empo
