#include "empo/env.hpp"

#include <cmath>

#include "empo/errors.hpp"

namespace empo {

double wrap_angle(double theta) {
    return theta - 2.0 * M_PI * std::round(theta / (2.0 * M_PI));
}

std::vector<double> pendulum_policy_reset(RngStream& rng) {
    const double p = rng.uniform();
    if (p < 0.25) return {rng.uniform(-M_PI, M_PI), rng.uniform(-8.0, 8.0)};
    if (p < 0.5) {
        // Energy corridor: speed matching the potential gap to upright, with
        // 3g/(2l) = 15 for the default parameters.
        const double th = rng.uniform(-M_PI, M_PI);
        double speed = std::sqrt(std::max(0.0, 30.0 * (1.0 - std::cos(th))));
        speed = std::min(speed * rng.uniform(0.8, 1.05), 7.0);
        return {th, rng.uniform() < 0.5 ? speed : -speed};
    }
    if (p < 0.8) return {0.3 * rng.normal(), 0.3 * rng.normal()};
    return {M_PI + 0.05 * rng.normal(), 0.05 * rng.normal()};
}

Tensor Dynamics::observe_tensor(Tape&, Tensor state) const { return state; }

std::vector<double> Dynamics::step_values(const std::vector<double>& state,
                                          const std::vector<double>& action,
                                          std::span<const double> noise) const {
    Tape tape;
    Tensor s = tape.vector(state);
    Tensor a = tape.vector(action);
    return step(tape, s, a, noise).values();
}

std::vector<double> Dynamics::observe(const std::vector<double>& state) const {
    Tape tape;
    Tensor s = tape.vector(state);
    return observe_tensor(tape, s).values();
}

PendulumEnv::PendulumEnv(Params params) : params_(params) {
    spec_.name = "pendulum";
    spec_.state_dim = 2;
    spec_.obs_dim = 2;
    spec_.action_dim = 1;
    spec_.u_max = {params_.u_max};
    spec_.dt = params_.dt;
    spec_.process_noise_std = params_.process_noise_std;
}

Tensor PendulumEnv::step(Tape& t, Tensor state, Tensor action, std::span<const double> noise) const {
    const Params& p = params_;
    Tensor th = t.slice(state, 0, 1);
    Tensor thd = t.slice(state, 1, 1);
    Tensor u = t.clamp(action, -p.u_max, p.u_max);

    // thd' = thd + (-(3g)/(2l) sin(th + pi) + 3/(m l^2) (u - friction*thd)) dt
    Tensor gravity = t.affine(t.sin(t.affine(th, 1.0, M_PI)), -3.0 * p.g / (2.0 * p.l), 0.0);
    Tensor torque = t.affine(t.sub(u, t.affine(thd, p.friction, 0.0)), 3.0 / (p.m * p.l * p.l), 0.0);
    Tensor thd_new = t.add(thd, t.affine(t.add(gravity, torque), p.dt, 0.0));
    Tensor th_new = t.add(th, t.affine(thd_new, p.dt, 0.0));

    if (p.process_noise_std > 0.0) {
        th_new = t.add(th_new, t.scalar(p.process_noise_std * noise[0]));
        thd_new = t.add(thd_new, t.scalar(p.process_noise_std * noise[1]));
    }
    thd_new = t.clamp(thd_new, -p.max_speed, p.max_speed);
    return t.concat(th_new, thd_new);
}

Tensor PendulumEnv::observe_tensor(Tape& t, Tensor state) const {
    Tensor th = t.slice(state, 0, 1);
    Tensor thd = t.slice(state, 1, 1);
    // Shift by the wrap offset of the current value; unit gradient away from the seam.
    const double offset = wrap_angle(th.value(0)) - th.value(0);
    return t.concat(t.affine(th, 1.0, offset), thd);
}

std::vector<double> PendulumEnv::reset_state(RngStream& rng) const {
    return {M_PI + 0.05 * rng.normal(), 0.05 * rng.normal()};
}

BallEnv::BallEnv(Params params) : params_(params) {
    spec_.name = "ball";
    spec_.state_dim = 2;
    spec_.obs_dim = 2;
    spec_.action_dim = 2;
    spec_.u_max = {params_.u_max, params_.u_max};
    spec_.process_noise_std = params_.process_noise_std;
}

Tensor BallEnv::step(Tape& t, Tensor state, Tensor action, std::span<const double> noise) const {
    Tensor moved = t.add(state, action);
    if (params_.process_noise_std > 0.0) {
        moved = t.add(moved, t.vector({params_.process_noise_std * noise[0],
                                       params_.process_noise_std * noise[1]}));
    }
    return t.clamp(moved, -half_box(), half_box());
}

std::vector<double> BallEnv::reset_state(RngStream& rng) const {
    return {rng.uniform(-half_box(), half_box()), rng.uniform(-half_box(), half_box())};
}

LinearGaussianChannel::LinearGaussianChannel(int dim, double noise_std) {
    if (dim < 1) throw ConfigError("LinearGaussianChannel: dim must be >= 1");
    if (noise_std <= 0.0) throw ConfigError("LinearGaussianChannel: noise std must be positive");
    spec_.name = "linear_gaussian";
    spec_.state_dim = dim;
    spec_.obs_dim = dim;
    spec_.action_dim = dim;
    spec_.process_noise_std = noise_std;
}

Tensor LinearGaussianChannel::step(Tape& t, Tensor state, Tensor action,
                                   std::span<const double> noise) const {
    std::vector<double> scaled(noise.begin(), noise.end());
    for (auto& v : scaled) v *= spec_.process_noise_std;
    return t.add(t.add(state, action), t.leaf(state.shape(), std::move(scaled)));
}

std::vector<double> LinearGaussianChannel::reset_state(RngStream&) const {
    return std::vector<double>(spec_.state_dim, 0.0);
}

std::unique_ptr<Dynamics> make_env(const std::string& name) {
    if (name == "pendulum") return std::make_unique<PendulumEnv>();
    if (name == "ball") return std::make_unique<BallEnv>();
    if (name == "linear_gaussian") return std::make_unique<LinearGaussianChannel>(1, 1.0);
    throw ConfigError("unknown environment '" + name + "'");
}

}  // namespace empo
