#include "empo/empowerment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <ostream>
#include <thread>
#include <utility>

#include <json.hpp>

#include "empo/errors.hpp"

namespace empo {

void EstimatorConfig::validate() const {
    if (n_steps < 1) throw ConfigError("EstimatorConfig: n_steps must be >= 1");
    if (fixed_source && fixed_source_std <= 0.0)
        throw ConfigError("EstimatorConfig: fixed_source_std must be positive");
    for (const auto& h : hidden)
        if (h.width < 1) throw ConfigError("EstimatorConfig: hidden width must be >= 1");
}

EmpowermentEstimator::EmpowermentEstimator(const Dynamics& dynamics, EstimatorConfig config)
    : dynamics_(&dynamics), config_(std::move(config)) {
    config_.validate();
}

EmpowermentEstimator::EmpowermentEstimator(const Dynamics& dynamics, EstimatorConfig config,
                                           RngStream init_rng)
    : EmpowermentEstimator(dynamics, std::move(config)) {
    const EnvSpec& spec = dynamics_->spec();
    const int n_u = spec.action_dim;
    if (!config_.fixed_source) {
        MlpSpec source_spec{spec.obs_dim, config_.hidden,
                            {{n_u, HeadTransform::identity}, {n_u, HeadTransform::exp}}};
        source_net_ = Mlp(store_, "omega", source_spec, init_rng.split("omega"));
    }
    const int planner_in = config_.n_steps == 1
                               ? 2 * spec.obs_dim
                               : 2 * spec.obs_dim + n_u + config_.n_steps;
    MlpSpec planner_spec{planner_in, config_.hidden,
                         {{n_u, HeadTransform::identity}, {n_u, HeadTransform::exp}}};
    planner_net_ = Mlp(store_, "q", planner_spec, init_rng.split("q"));
}

EmpowermentEstimator::EmpowermentEstimator(EmpowermentEstimator&& other) noexcept
    : dynamics_(other.dynamics_), config_(std::move(other.config_)),
      store_(std::move(other.store_)), source_net_(std::move(other.source_net_)),
      planner_net_(std::move(other.planner_net_)) {
    source_net_.rebind(store_);
    planner_net_.rebind(store_);
}

EmpowermentEstimator& EmpowermentEstimator::operator=(EmpowermentEstimator&& other) noexcept {
    dynamics_ = other.dynamics_;
    config_ = std::move(other.config_);
    store_ = std::move(other.store_);
    source_net_ = std::move(other.source_net_);
    planner_net_ = std::move(other.planner_net_);
    source_net_.rebind(store_);
    planner_net_.rebind(store_);
    return *this;
}

DiagonalGaussian EmpowermentEstimator::source_dist(Tape& t, Tensor obs) const {
    const int n_u = dynamics_->spec().action_dim;
    if (config_.fixed_source) {
        return DiagonalGaussian{t.leaf({n_u}, std::vector<double>(n_u, 0.0)),
                                t.leaf({n_u}, std::vector<double>(n_u, config_.fixed_source_std))};
    }
    return source_net_.forward_gaussian(t, obs);
}

Tensor EmpowermentEstimator::action_from_pre(Tape& t, Tensor pre) const {
    const auto& u_max = dynamics_->spec().u_max;
    if (u_max.empty()) return pre;
    return squash(pre, u_max).action;
}

Tensor EmpowermentEstimator::mi_sample_single(Tape& t, Tensor state, RngStream& noise_rng) const {
    Tensor obs = dynamics_->observe_tensor(t, state);
    DiagonalGaussian omega = source_dist(t, obs);
    Tensor pre = omega.rsample(noise_rng.normal_vector(static_cast<std::size_t>(omega.dim())));
    Tensor action = action_from_pre(t, pre);
    Tensor next =
        dynamics_->step(t, state, action, noise_rng.normal_vector(dynamics_->noise_dim()));
    Tensor next_obs = dynamics_->observe_tensor(t, next);
    DiagonalGaussian q = planner_net_.forward_gaussian(t, t.concat(obs, next_obs));
    return t.sub(q.log_prob(pre), omega.log_prob(pre));
}

Tensor EmpowermentEstimator::mi_sample_nstep(Tape& t, Tensor state, RngStream& noise_rng) const {
    const int n = config_.n_steps;
    const int n_u = dynamics_->spec().action_dim;
    Tensor start_obs = dynamics_->observe_tensor(t, state);

    std::vector<Tensor> pres, actions;
    Tensor current = state;
    Tensor ln_omega = t.scalar(0.0);
    for (int k = 0; k < n; ++k) {
        Tensor obs = k == 0 ? start_obs : dynamics_->observe_tensor(t, current);
        DiagonalGaussian omega = source_dist(t, obs);
        Tensor pre = omega.rsample(noise_rng.normal_vector(static_cast<std::size_t>(n_u)));
        Tensor action = action_from_pre(t, pre);
        ln_omega = t.add(ln_omega, omega.log_prob(pre));
        current = dynamics_->step(t, current, action, noise_rng.normal_vector(dynamics_->noise_dim()));
        pres.push_back(pre);
        actions.push_back(action);
    }
    Tensor final_obs = dynamics_->observe_tensor(t, current);

    Tensor ln_q = t.scalar(0.0);
    for (int k = 0; k < n; ++k) {
        std::vector<double> onehot(n, 0.0);
        onehot[k] = 1.0;
        Tensor prev = k == 0 ? t.leaf({n_u}, std::vector<double>(n_u, 0.0)) : actions[k - 1];
        const Tensor parts[] = {start_obs, final_obs, prev, t.vector(onehot)};
        DiagonalGaussian qk =
            planner_net_.forward_gaussian(t, t.concat(std::span<const Tensor>(parts, 4)));
        ln_q = t.add(ln_q, qk.log_prob(pres[k]));
    }
    return t.sub(ln_q, ln_omega);
}

Tensor EmpowermentEstimator::mi_sample(Tape& t, Tensor state, RngStream& noise_rng) const {
    return config_.n_steps == 1 ? mi_sample_single(t, state, noise_rng)
                                : mi_sample_nstep(t, state, noise_rng);
}

MiEstimate EmpowermentEstimator::estimate(const std::vector<double>& state, int n_samples,
                                          RngStream rng) const {
    MiEstimate est;
    double mean = 0.0, m2 = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        Tape tape;
        Tensor s = tape.vector(state);
        RngStream sample_rng = rng.split(static_cast<std::uint64_t>(i));
        const double x = mi_sample(tape, s, sample_rng).scalar();
        const double delta = x - mean;
        mean += delta / (i + 1);
        m2 += delta * (x - mean);
    }
    est.samples = n_samples;
    est.mean = mean;
    est.stderr_value = n_samples >= 2
                           ? std::sqrt(m2 / (n_samples - 1) / n_samples)
                           : std::numeric_limits<double>::quiet_NaN();
    return est;
}

std::vector<double> EmpowermentEstimator::train(const StateSampler& sampler,
                                                const TrainConfig& config, RngStream rng,
                                                std::ostream* log) {
    RngStream state_rng = rng.split("states");
    RngStream noise_rng = rng.split("noise");
    std::vector<double> curve;
    if (log) *log << "iteration,mean_mi,grad_norm\n";
    const auto theta_filter = [this, &config](const std::string& name) {
        if (config.train_source) return true;
        return name.rfind("omega/", 0) != 0;
    };
    int threads = config.threads > 0
                      ? config.threads
                      : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, config.states_per_batch);
    const double scale = 1.0 / (config.states_per_batch * config.samples_per_state);
    for (int iter = 0; iter < config.iterations; ++iter) {
        // States and per-state noise streams are drawn up front so the result
        // is identical for every thread count.
        std::vector<std::vector<double>> states(config.states_per_batch);
        std::vector<RngStream> noise(config.states_per_batch, RngStream(0));
        const RngStream iter_rng = noise_rng.split(static_cast<std::uint64_t>(iter));
        for (int b = 0; b < config.states_per_batch; ++b) {
            states[b] = sampler(state_rng);
            noise[b] = iter_rng.split(static_cast<std::uint64_t>(b));
        }

        std::vector<double> partial(static_cast<std::size_t>(threads), 0.0);
        std::vector<Tape> tapes(static_cast<std::size_t>(threads));
        const int chunk = (config.states_per_batch + threads - 1) / threads;
        auto worker = [&](int t_idx) {
            Tape& tape = tapes[static_cast<std::size_t>(t_idx)];
            Tensor total = tape.scalar(0.0);
            const int lo = t_idx * chunk;
            const int hi = std::min(config.states_per_batch, lo + chunk);
            for (int b = lo; b < hi; ++b) {
                Tensor s = tape.vector(states[b]);
                for (int k = 0; k < config.samples_per_state; ++k)
                    total = tape.add(total, mi_sample(tape, s, noise[b]));
            }
            Tensor objective = tape.affine(total, scale, 0.0);
            partial[static_cast<std::size_t>(t_idx)] = objective.scalar();
            tape.backward(objective);
        };
        if (threads == 1) {
            worker(0);
        } else {
            std::vector<std::thread> pool;
            for (int t_idx = 0; t_idx < threads; ++t_idx) pool.emplace_back(worker, t_idx);
            for (auto& th : pool) th.join();
        }
        double value = 0.0;
        for (double p : partial) value += p;
        if (!std::isfinite(value))
            throw NumericError("empowerment training diverged (non-finite bound)");
        for (const Tape& tape : tapes) store_.collect_grads(tape);
        const double gnorm = store_.grad_norm();
        store_.ascend(config.learning_rate, config.opt, theta_filter);
        curve.push_back(value);
        if (log) *log << iter << "," << value << "," << gnorm << "\n";
    }
    return curve;
}

double EmpowermentEstimator::gap_estimate_linear_gaussian(const std::vector<double>& state,
                                                          int n_samples, RngStream rng) const {
    const auto* channel = dynamic_cast<const LinearGaussianChannel*>(dynamics_);
    if (channel == nullptr)
        throw UnsupportedError("gap estimate requires the linear-Gaussian channel dynamics");
    if (config_.n_steps != 1)
        throw UnsupportedError("gap estimate is defined for single-step estimators");
    if (!dynamics_->spec().u_max.empty())
        throw UnsupportedError("gap estimate requires unbounded (unsquashed) actions");
    const double var_eps = channel->noise_std() * channel->noise_std();
    const int dim = dynamics_->spec().action_dim;

    double acc = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        Tape t;
        RngStream sample_rng = rng.split(static_cast<std::uint64_t>(i));
        Tensor s = t.vector(state);
        Tensor obs = dynamics_->observe_tensor(t, s);
        DiagonalGaussian omega = source_dist(t, obs);
        Tensor pre = omega.rsample(sample_rng.normal_vector(static_cast<std::size_t>(dim)));
        Tensor next = dynamics_->step(t, s, pre, sample_rng.normal_vector(dynamics_->noise_dim()));
        DiagonalGaussian q = planner_net_.forward_gaussian(t, t.concat(obs, next));

        const auto& mu_w = omega.mean.values();
        const auto& sd_w = omega.std.values();
        const auto& mu_q = q.mean.values();
        const auto& sd_q = q.std.values();
        double kl = 0.0;
        for (int d = 0; d < dim; ++d) {
            const double var_w = sd_w[d] * sd_w[d];
            const double var_p = 1.0 / (1.0 / var_w + 1.0 / var_eps);
            const double diff = next.values()[d] - state[static_cast<std::size_t>(d)];
            const double mu_p = var_p * (mu_w[d] / var_w + diff / var_eps);
            const double var_q = sd_q[d] * sd_q[d];
            kl += 0.5 * (std::log(var_q / var_p) + (var_p + (mu_p - mu_q[d]) * (mu_p - mu_q[d])) / var_q - 1.0);
        }
        acc += kl;
    }
    return acc / n_samples;
}

std::pair<std::vector<double>, std::vector<double>> EmpowermentEstimator::source_params(
    const std::vector<double>& state) const {
    Tape t;
    Tensor s = t.vector(state);
    DiagonalGaussian omega = source_dist(t, dynamics_->observe_tensor(t, s));
    return {omega.mean.values(), omega.std.values()};
}

void EmpowermentEstimator::save(const std::string& path) const {
    nlohmann::json meta;
    meta["kind"] = "empowerment";
    meta["n_steps"] = config_.n_steps;
    meta["fixed_source"] = config_.fixed_source;
    meta["fixed_source_std"] = config_.fixed_source_std;
    auto hidden = nlohmann::json::array();
    for (const auto& h : config_.hidden)
        hidden.push_back({{"width", h.width}, {"activation", to_string(h.act)}});
    meta["hidden"] = hidden;
    meta["env"] = dynamics_->spec().name;
    store_.save(path, meta.dump());
}

EmpowermentEstimator EmpowermentEstimator::load(const Dynamics& dynamics, const std::string& path) {
    ParameterStore probe;
    const auto meta = nlohmann::json::parse(probe.load(path));
    if (meta.value("kind", "") != "empowerment")
        throw ValidationError("checkpoint at " + path + " is not an empowerment estimator");
    EstimatorConfig config;
    config.n_steps = meta.at("n_steps");
    config.fixed_source = meta.at("fixed_source");
    config.fixed_source_std = meta.at("fixed_source_std");
    config.hidden.clear();
    for (const auto& h : meta.at("hidden"))
        config.hidden.push_back({h.at("width"), activation_from_string(h.at("activation"))});

    EmpowermentEstimator est(dynamics, std::move(config));
    est.store_ = std::move(probe);
    const EnvSpec& spec = dynamics.spec();
    const int n_u = spec.action_dim;
    if (!est.config_.fixed_source) {
        est.source_net_ = Mlp::attach(
            est.store_, "omega",
            MlpSpec{spec.obs_dim, est.config_.hidden,
                    {{n_u, HeadTransform::identity}, {n_u, HeadTransform::exp}}});
    }
    const int planner_in = est.config_.n_steps == 1
                               ? 2 * spec.obs_dim
                               : 2 * spec.obs_dim + n_u + est.config_.n_steps;
    est.planner_net_ = Mlp::attach(est.store_, "q",
                                   MlpSpec{planner_in, est.config_.hidden,
                                           {{n_u, HeadTransform::identity}, {n_u, HeadTransform::exp}}});
    return est;
}

double gaussian_channel_capacity(double sigma_source, double sigma_noise) {
    return 0.5 * std::log(1.0 + (sigma_source * sigma_source) / (sigma_noise * sigma_noise));
}

std::vector<LandscapeCell> empowerment_landscape(const EmpowermentEstimator& est,
                                                 const GridSpec& grid, int samples_per_cell,
                                                 RngStream rng, const StateFromGrid& state_fn,
                                                 int threads) {
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
            // Every cell reuses the same noise stream (common random numbers):
            // each estimate stays unbiased while between-cell comparisons, and
            // in particular the argmax, become far less noisy.
            const MiEstimate e =
                est.estimate(state_fn(c1, c2), samples_per_cell, rng.split("cells"));
            cells[static_cast<std::size_t>(idx)] = {c1, c2, e.mean, e.stderr_value};
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

void save_landscape_csv(const std::vector<LandscapeCell>& cells, const std::string& path,
                        const std::string& dim1, const std::string& dim2) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ValidationError("cannot open landscape file for writing: " + path);
    os << dim1 << "," << dim2 << ",empowerment_nats,stderr\n";
    os.precision(12);
    for (const auto& c : cells)
        os << c.c1 << "," << c.c2 << "," << c.value << "," << c.stderr_value << "\n";
    if (!os) throw ValidationError("write failure on landscape file: " + path);
}

}  // namespace empo
