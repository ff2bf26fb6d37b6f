#include "empo/policy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "empo/errors.hpp"

namespace empo {

GaussianPolicy::GaussianPolicy(int obs_dim, int action_dim, std::vector<double> u_max,
                               std::vector<MlpSpec::Hidden> hidden, RngStream init_rng)
    : obs_dim_(obs_dim), action_dim_(action_dim), u_max_(std::move(u_max)),
      hidden_(std::move(hidden)) {
    if (obs_dim_ < 1 || action_dim_ < 1)
        throw ConfigError("GaussianPolicy: obs_dim and action_dim must be >= 1");
    if (!u_max_.empty() && static_cast<int>(u_max_.size()) != action_dim_)
        throw ConfigError("GaussianPolicy: u_max size must match action_dim");
    MlpSpec spec{obs_dim_, hidden_,
                 {{action_dim_, HeadTransform::identity}, {action_dim_, HeadTransform::exp}}};
    net_ = Mlp(store_, "pi", spec, init_rng);
}

GaussianPolicy::GaussianPolicy(GaussianPolicy&& other) noexcept
    : obs_dim_(other.obs_dim_), action_dim_(other.action_dim_),
      u_max_(std::move(other.u_max_)), hidden_(std::move(other.hidden_)),
      store_(std::move(other.store_)), net_(std::move(other.net_)) {
    net_.rebind(store_);
}

GaussianPolicy& GaussianPolicy::operator=(GaussianPolicy&& other) noexcept {
    obs_dim_ = other.obs_dim_;
    action_dim_ = other.action_dim_;
    u_max_ = std::move(other.u_max_);
    hidden_ = std::move(other.hidden_);
    store_ = std::move(other.store_);
    net_ = std::move(other.net_);
    net_.rebind(store_);
    return *this;
}

DiagonalGaussian GaussianPolicy::pre_squash_dist(Tape& tape, Tensor obs) const {
    return net_.forward_gaussian(tape, obs);
}

Tensor GaussianPolicy::action_from_pre(Tape& tape, Tensor pre) const {
    if (u_max_.empty()) return pre;
    return squash(pre, u_max_).action;
}

std::vector<double> GaussianPolicy::act(const std::vector<double>& obs, RngStream* rng) const {
    Tape tape;
    DiagonalGaussian dist = pre_squash_dist(tape, tape.vector(obs));
    Tensor pre = rng == nullptr
                     ? dist.mean
                     : dist.rsample(rng->normal_vector(static_cast<std::size_t>(action_dim_)));
    return action_from_pre(tape, pre).values();
}

void GaussianPolicy::save(const std::string& path) const {
    nlohmann::json meta;
    meta["kind"] = "policy";
    meta["obs_dim"] = obs_dim_;
    meta["action_dim"] = action_dim_;
    meta["u_max"] = u_max_;
    auto hidden = nlohmann::json::array();
    for (const auto& h : hidden_)
        hidden.push_back({{"width", h.width}, {"activation", to_string(h.act)}});
    meta["hidden"] = hidden;
    store_.save(path, meta.dump());
}

GaussianPolicy GaussianPolicy::load(const std::string& path) {
    GaussianPolicy p;
    const auto meta = nlohmann::json::parse(p.store_.load(path));
    if (meta.value("kind", "") != "policy")
        throw ValidationError("checkpoint at " + path + " is not a policy");
    p.obs_dim_ = meta.at("obs_dim");
    p.action_dim_ = meta.at("action_dim");
    p.u_max_ = meta.at("u_max").get<std::vector<double>>();
    for (const auto& h : meta.at("hidden"))
        p.hidden_.push_back({h.at("width"), activation_from_string(h.at("activation"))});
    p.net_ = Mlp::attach(
        p.store_, "pi",
        MlpSpec{p.obs_dim_, p.hidden_,
                {{p.action_dim_, HeadTransform::identity}, {p.action_dim_, HeadTransform::exp}}});
    return p;
}

void PolicyTrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("PolicyTrainConfig: epochs must be >= 1");
    if (horizon < 1) throw ConfigError("PolicyTrainConfig: horizon must be >= 1");
    if (rollouts < 1) throw ConfigError("PolicyTrainConfig: rollouts must be >= 1");
    if (beta_start <= 0.0 || beta_end <= 0.0)
        throw ConfigError("PolicyTrainConfig: beta values must be positive");
}

double beta_at(const PolicyTrainConfig& config, int epoch) {
    if (config.epochs <= 1) return config.beta_end;
    const double frac = std::clamp(static_cast<double>(epoch) / (config.epochs - 1), 0.0, 1.0);
    return config.beta_start * std::pow(config.beta_end / config.beta_start, frac);
}

PolicyObjective build_policy_objective(Tape& tape, const GaussianPolicy& policy,
                                       const EmpowermentEstimator& est, const Dynamics& dynamics,
                                       double beta, int rollouts, int horizon,
                                       RngStream& reset_rng, RngStream& noise_rng,
                                       int extra_states,
                                       const EmpowermentEstimator::StateSampler& extra_sampler,
                                       const EmpowermentEstimator::StateSampler& reset_sampler) {
    Tensor total_mi = tape.scalar(0.0);
    Tensor total_kl = tape.scalar(0.0);
    for (int m = 0; m < rollouts; ++m) {
        Tensor s = tape.vector(reset_sampler ? reset_sampler(reset_rng)
                                             : dynamics.reset_state(reset_rng));
        for (int t = 0; t < horizon; ++t) {
            Tensor obs = dynamics.observe_tensor(tape, s);
            DiagonalGaussian dist = policy.pre_squash_dist(tape, obs);
            total_kl = tape.add(total_kl, dist.kl_to_standard_normal());
            total_mi = tape.add(total_mi, est.mi_sample(tape, s, noise_rng));
            Tensor pre = dist.rsample(
                noise_rng.normal_vector(static_cast<std::size_t>(policy.action_dim())));
            Tensor action = policy.action_from_pre(tape, pre);
            s = dynamics.step(tape, s, action, noise_rng.normal_vector(dynamics.noise_dim()));
        }
    }
    if (extra_states > 0 && !extra_sampler)
        throw ConfigError("policy training: extra_states needs an extra-state sampler");
    for (int i = 0; i < extra_states; ++i) {
        Tensor s = tape.vector(extra_sampler(reset_rng));
        total_mi = tape.add(total_mi, est.mi_sample(tape, s, noise_rng));
    }
    PolicyObjective out;
    out.objective = tape.sub(tape.affine(total_mi, beta / rollouts, 0.0),
                             tape.affine(total_kl, 1.0 / rollouts, 0.0));
    out.total_mi = total_mi.scalar();
    out.total_kl = total_kl.scalar();
    out.visited_states = rollouts * horizon + extra_states;
    return out;
}

std::vector<PolicyEpochMetrics> train_policy(GaussianPolicy& policy, EmpowermentEstimator& est,
                                             const Dynamics& dynamics,
                                             const PolicyTrainConfig& config, RngStream rng,
                                             std::ostream* log) {
    config.validate();
    RngStream reset_rng = rng.split("reset");
    RngStream noise_rng = rng.split("noise");
    std::vector<PolicyEpochMetrics> metrics;
    if (log) *log << "epoch,beta,mean_mi,policy_kl,grad_norm_theta,grad_norm_chi\n";

    const int T = config.horizon;
    const int M = config.rollouts;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double beta = beta_at(config, epoch);
        Tape tape;
        const PolicyObjective obj =
            build_policy_objective(tape, policy, est, dynamics, beta, M, T, reset_rng,
                                   noise_rng, config.extra_states, config.extra_state_sampler,
                                   config.reset_sampler);
        const double obj_value = obj.objective.scalar();
        if (!std::isfinite(obj_value))
            throw NumericError("policy training diverged (non-finite objective)");
        tape.backward(obj.objective);
        // With a frozen estimator the store is left untouched, which also makes
        // concurrent policy trainings against per-thread estimator copies safe.
        const bool train_est = config.lr_theta > 0.0;
        if (train_est) est.store().collect_grads(tape);
        policy.store().collect_grads(tape);

        PolicyEpochMetrics m;
        m.epoch = epoch;
        m.beta = beta;
        m.mean_mi = obj.total_mi / obj.visited_states;
        m.policy_kl = obj.total_kl / (M * T);
        m.grad_norm_theta = train_est ? est.store().grad_norm() : 0.0;
        m.grad_norm_chi = policy.store().grad_norm();

        const bool update_theta = (!config.alternating || epoch % 2 == 0) && train_est;
        const bool update_chi = !config.alternating || epoch % 2 == 1;
        if (update_theta)
            est.store().ascend(config.lr_theta, config.opt);
        else if (train_est)
            est.store().zero_grads();
        if (update_chi)
            policy.store().ascend(config.lr_chi, config.opt);
        else
            policy.store().zero_grads();

        metrics.push_back(m);
        if (log)
            *log << m.epoch << "," << m.beta << "," << m.mean_mi << "," << m.policy_kl << ","
                 << m.grad_norm_theta << "," << m.grad_norm_chi << "\n";
    }
    return metrics;
}

std::vector<LandscapeCell> accumulated_empowerment_landscape(
    const GaussianPolicy& policy, const EmpowermentEstimator& est, const Dynamics& dynamics,
    const GridSpec& grid, int horizon, int rollouts_per_cell, int samples_per_state,
    RngStream rng, const StateFromGrid& state_fn, int threads) {
    const int total = grid.n1 * grid.n2;
    std::vector<LandscapeCell> cells(static_cast<std::size_t>(total));
    if (threads <= 0)
        threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, total);

    auto worker = [&](int begin, int end) {
        for (int idx = begin; idx < end; ++idx) {
            const int i1 = idx / grid.n2;
            const int i2 = idx % grid.n2;
            const double c1 =
                grid.n1 == 1 ? grid.lo1 : grid.lo1 + (grid.hi1 - grid.lo1) * i1 / (grid.n1 - 1);
            const double c2 =
                grid.n2 == 1 ? grid.lo2 : grid.lo2 + (grid.hi2 - grid.lo2) * i2 / (grid.n2 - 1);
            RngStream cell_rng = rng.split(static_cast<std::uint64_t>(idx));
            double mean = 0.0, m2 = 0.0;
            for (int r = 0; r < rollouts_per_cell; ++r) {
                RngStream roll_rng = cell_rng.split(static_cast<std::uint64_t>(r));
                RngStream act_rng = roll_rng.split("act");
                RngStream step_rng = roll_rng.split("step");
                RngStream mc_rng = roll_rng.split("mc");
                std::vector<double> s = state_fn(c1, c2);
                double acc = 0.0;
                for (int t = 0; t < horizon; ++t) {
                    acc += est.estimate(s, samples_per_state,
                                        mc_rng.split(static_cast<std::uint64_t>(t)))
                               .mean;
                    const auto action = policy.act(dynamics.observe(s), &act_rng);
                    s = dynamics.step_values(s, action,
                                             step_rng.normal_vector(dynamics.noise_dim()));
                }
                const double delta = acc - mean;
                mean += delta / (r + 1);
                m2 += delta * (acc - mean);
            }
            const double se = rollouts_per_cell >= 2
                                  ? std::sqrt(m2 / (rollouts_per_cell - 1) / rollouts_per_cell)
                                  : std::numeric_limits<double>::quiet_NaN();
            cells[static_cast<std::size_t>(idx)] = {c1, c2, mean, se};
        }
    };

    std::vector<std::thread> pool;
    const int chunk = (total + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const int begin = t * chunk;
        const int end = std::min(total, begin + chunk);
        if (begin < end) pool.emplace_back(worker, begin, end);
    }
    for (auto& th : pool) th.join();
    return cells;
}

namespace {

// act(observation, step_rng) -> action; timed when `timed` is true.
using ActFn = std::function<std::vector<double>(const std::vector<double>&, int step)>;

PolicyEvaluation run_eval(const Dynamics& env, const EvalConfig& config, RngStream rng,
                          const ActFn& act, bool timed) {
    PolicyEvaluation out;
    out.episodes = config.episodes;
    out.horizon = config.horizon;
    out.swing_up_rate = std::numeric_limits<double>::quiet_NaN();
    out.mean_distance_to_wall = std::numeric_limits<double>::quiet_NaN();
    out.mean_distance_to_center = std::numeric_limits<double>::quiet_NaN();
    out.outer_shell_mass = std::numeric_limits<double>::quiet_NaN();

    const auto* ball = dynamic_cast<const BallEnv*>(&env);
    const bool pendulum = dynamic_cast<const PendulumEnv*>(&env) != nullptr;

    int swing_ups = 0;
    double wall_sum = 0.0, center_sum = 0.0;
    long shell_count = 0, step_count = 0;
    double latency_sum = 0.0;
    long latency_count = 0;

    for (int ep = 0; ep < config.episodes; ++ep) {
        RngStream ep_rng = rng.split(static_cast<std::uint64_t>(ep));
        RngStream reset_rng = ep_rng.split("reset");
        RngStream step_rng = ep_rng.split("step");
        std::vector<double> s = env.reset_state(reset_rng);
        int best_run = 0, run = 0;
        for (int t = 0; t < config.horizon; ++t) {
            const auto obs = env.observe(s);
            const auto t0 = std::chrono::steady_clock::now();
            const auto action = act(obs, t);
            if (timed && t > 0) {
                latency_sum += std::chrono::duration<double>(
                                   std::chrono::steady_clock::now() - t0)
                                   .count();
                ++latency_count;
            }
            out.states.push_back(s);
            ++step_count;
            if (pendulum) {
                run = std::abs(wrap_angle(s[0])) < 0.3 ? run + 1 : 0;
                best_run = std::max(best_run, run);
            }
            if (ball != nullptr) {
                const double ax = std::abs(s[0]), ay = std::abs(s[1]);
                const double half = ball->half_box();
                wall_sum += half - std::max(ax, ay);
                center_sum += std::sqrt(s[0] * s[0] + s[1] * s[1]);
                if (std::max(ax, ay) > 0.9 * half) ++shell_count;
            }
            s = env.step_values(s, action, step_rng.normal_vector(env.noise_dim()));
        }
        if (pendulum && best_run >= 100) ++swing_ups;
    }

    if (pendulum) out.swing_up_rate = static_cast<double>(swing_ups) / config.episodes;
    if (ball != nullptr && step_count > 0) {
        out.mean_distance_to_wall = wall_sum / step_count;
        out.mean_distance_to_center = center_sum / step_count;
        out.outer_shell_mass = static_cast<double>(shell_count) / step_count;
    }
    out.mean_step_latency_sec = latency_count > 0 ? latency_sum / latency_count : 0.0;
    return out;
}

}  // namespace

PolicyEvaluation evaluate_policy(const GaussianPolicy& policy, const Dynamics& env,
                                 const DvbfModel* filter, const EvalConfig& config,
                                 RngStream rng) {
    RngStream act_rng = rng.split("act");
    LatentBelief belief;
    std::vector<double> prev_action;
    const std::vector<double> zero_w =
        filter != nullptr ? std::vector<double>(static_cast<std::size_t>(filter->config().latent_dim), 0.0)
                          : std::vector<double>{};
    RngStream init_rng = rng.split("filter-init");

    auto act = [&](const std::vector<double>& obs, int step) {
        std::vector<double> input = obs;
        if (filter != nullptr) {
            if (step == 0) {
                const std::vector<std::vector<double>> window(
                    static_cast<std::size_t>(filter->config().initial_window), obs);
                belief = filter->init_belief(window, init_rng);
            } else {
                belief = filter->filter_step(belief, prev_action, obs, zero_w);
            }
            input = belief.z;
        }
        auto action =
            policy.act(input, config.stochastic ? &act_rng : nullptr);
        prev_action = action;
        return action;
    };
    return run_eval(env, config, rng, act, /*timed=*/true);
}

PolicyEvaluation evaluate_random_policy(const Dynamics& env, const EvalConfig& config,
                                        RngStream rng) {
    RngStream act_rng = rng.split("act");
    const auto& u_max = env.spec().u_max;
    const int n_u = env.spec().action_dim;
    auto act = [&](const std::vector<double>&, int) {
        std::vector<double> a(static_cast<std::size_t>(n_u));
        for (int i = 0; i < n_u; ++i)
            a[static_cast<std::size_t>(i)] =
                u_max.empty() ? act_rng.normal()
                              : act_rng.uniform(-u_max[static_cast<std::size_t>(i)],
                                                u_max[static_cast<std::size_t>(i)]);
        return a;
    };
    return run_eval(env, config, rng, act, /*timed=*/false);
}

void save_eval_states_csv(const PolicyEvaluation& eval, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ValidationError("cannot open eval states file for writing: " + path);
    const std::size_t dim = eval.states.empty() ? 0 : eval.states.front().size();
    os << "step";
    for (std::size_t d = 0; d < dim; ++d) os << ",s" << d;
    os << "\n";
    os.precision(12);
    for (std::size_t i = 0; i < eval.states.size(); ++i) {
        os << i;
        for (double v : eval.states[i]) os << "," << v;
        os << "\n";
    }
    if (!os) throw ValidationError("write failure on eval states file: " + path);
}

}  // namespace empo
