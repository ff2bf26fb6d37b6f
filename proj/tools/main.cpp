#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "empo/blahut_arimoto.hpp"
#include "empo/config.hpp"
#include "empo/dataset.hpp"
#include "empo/dvbf.hpp"
#include "empo/empowerment.hpp"
#include "empo/env.hpp"
#include "empo/errors.hpp"
#include "empo/policy.hpp"
#include "empo/rng.hpp"

namespace fs = std::filesystem;
using namespace empo;

namespace {

struct CliOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    bool force = false;
    std::string profile = "full";
};

ExperimentConfig resolve_config(const CliOptions& opts) {
    ExperimentConfig config =
        opts.config_path.empty() ? default_config("pendulum") : load_config(opts.config_path);
    if (opts.seed) config.seed = *opts.seed;
    if (opts.out) config.out_dir = *opts.out;
    apply_profile(config, opts.profile);
    config.validate();
    return config;
}

std::unique_ptr<Dynamics> build_env(const ExperimentConfig& c) {
    if (c.env == "linear-gaussian")
        return std::make_unique<LinearGaussianChannel>(c.channel.dim, c.channel.noise_std);
    return make_env(c.env);
}

std::string default_path(const ExperimentConfig& c, const std::string& given,
                         const std::string& filename) {
    if (!given.empty()) return given;
    return (fs::path(c.out_dir) / filename).string();
}

void refuse_existing(const fs::path& p, bool force) {
    if (!force && fs::exists(p))
        throw ValidationError("output " + p.string() + " exists; pass --force to overwrite");
}

// Environment-native state from 2-D grid coordinates.
std::vector<double> env_state_from_grid(const ExperimentConfig& c, double c1, double c2) {
    if (c.env == "pendulum" || c.env == "ball") return {c1, c2};
    std::vector<double> s(static_cast<std::size_t>(c.channel.dim), 0.0);
    s[0] = c1;
    if (c.channel.dim > 1) s[1] = c2;
    return s;
}

// Learned-dynamics plumbing: the DVBF checkpoint plus its transition prior
// exposed as a Dynamics whose states live in latent space.
struct LearnedStack {
    std::unique_ptr<DvbfModel> model;
    std::unique_ptr<LatentDynamics> latent;
};

LearnedStack build_learned(const ExperimentConfig& c, const Dynamics& env, RngStream rng) {
    LearnedStack out;
    const std::string path = default_path(c, c.paths.dynamics, "dynamics.ckpt");
    if (!fs::exists(path))
        throw ValidationError("dynamics checkpoint not found: " + path);
    out.model = std::make_unique<DvbfModel>(DvbfModel::load(path));
    if (out.model->config().obs_dim != env.spec().obs_dim ||
        out.model->config().action_dim != env.spec().action_dim)
        throw ValidationError("dynamics checkpoint dims (" +
                              std::to_string(out.model->config().obs_dim) + "," +
                              std::to_string(out.model->config().action_dim) +
                              ") do not match env '" + c.env + "' dims (" +
                              std::to_string(env.spec().obs_dim) + "," +
                              std::to_string(env.spec().action_dim) + ")");
    std::vector<std::vector<double>> pool;
    RngStream pool_rng = rng.split("initial-pool");
    for (int i = 0; i < 256; ++i) {
        const auto s = env.reset_state(pool_rng);
        pool.push_back(out.model->encode_observation(env.observe(s)));
    }
    out.latent = std::make_unique<LatentDynamics>(*out.model, env.spec().u_max, std::move(pool));
    return out;
}

// Mixture sampler over env-native states: uniform over the landscape grid box
// with probability grid_state_fraction, else the env reset distribution.
// For learned dynamics the sampled state is encoded into latent space.
EmpowermentEstimator::StateSampler make_state_sampler(const ExperimentConfig& c,
                                                      const Dynamics& env,
                                                      const DvbfModel* model) {
    const GridSpec grid = c.landscape.grid;
    const double frac = c.grid_state_fraction;
    return [&c, &env, model, grid, frac](RngStream& rng) {
        std::vector<double> s;
        if (rng.uniform() < frac) {
            s = env_state_from_grid(c, rng.uniform(grid.lo1, grid.hi1),
                                    rng.uniform(grid.lo2, grid.hi2));
        } else {
            s = env.reset_state(rng);
        }
        if (model != nullptr) return model->encode_observation(env.observe(s));
        return s;
    };
}

int cmd_gen_data(const CliOptions& opts) {
    const ExperimentConfig c = resolve_config(opts);
    auto env = build_env(c);
    const fs::path out = default_path(c, c.paths.dataset, "dataset.csv");
    refuse_existing(out, opts.force);
    fs::create_directories(out.parent_path().empty() ? "." : out.parent_path());
    RngStream rng(c.seed);
    const TrajectoryDataset ds =
        generate_dataset(*env, c.data.episodes, c.data.horizon, rng.split("data"), c.seed);
    save_dataset_csv(ds, out.string());
    write_manifest(c.out_dir, c);
    std::cout << "wrote " << out.string() << " (" << ds.episodes.size() << " episodes x "
              << ds.horizon << " steps)\n";
    return 0;
}

int cmd_train_dynamics(const CliOptions& opts) {
    const ExperimentConfig c = resolve_config(opts);
    const std::string data_path = default_path(c, c.paths.dataset, "dataset.csv");
    if (!fs::exists(data_path)) throw ValidationError("dataset not found: " + data_path);
    const TrajectoryDataset ds = load_dataset_csv(data_path);

    DvbfConfig model_cfg = c.dvbf;
    model_cfg.obs_dim = ds.obs_dim;
    model_cfg.action_dim = ds.action_dim;
    RngStream rng(c.seed);
    DvbfModel model(model_cfg, rng.split("dvbf-init"));

    const fs::path ckpt = default_path(c, c.paths.dynamics, "dynamics.ckpt");
    refuse_existing(ckpt, opts.force);
    fs::create_directories(c.out_dir);
    std::ofstream log(fs::path(c.out_dir) / "dynamics_training.csv", std::ios::trunc);
    train_dynamics(model, ds, c.dvbf_train, rng.split("dvbf-train"), &log);
    model.save(ckpt.string());
    write_manifest(c.out_dir, c);
    std::cout << "wrote " << ckpt.string() << "\n";
    return 0;
}

int cmd_train(const CliOptions& opts) {
    const ExperimentConfig c = resolve_config(opts);
    auto env = build_env(c);
    RngStream rng(c.seed);

    LearnedStack learned;
    const Dynamics* dyn = env.get();
    if (c.dynamics_mode == "learned") {
        learned = build_learned(c, *env, rng.split("learned"));
        dyn = learned.latent.get();
    }

    const fs::path est_path = default_path(c, c.paths.estimator, "estimator.ckpt");
    refuse_existing(est_path, opts.force);
    fs::create_directories(c.out_dir);

    EmpowermentEstimator est(*dyn, c.estimator, rng.split("est-init"));
    const auto sampler = make_state_sampler(c, *env, learned.model.get());
    if (c.estimator_train.iterations > 0) {
        std::ofstream log(fs::path(c.out_dir) / "estimator_training.csv", std::ios::trunc);
        est.train(sampler, c.estimator_train, rng.split("est-train"), &log);
    }

    if (c.env != "linear-gaussian") {
        const fs::path pol_path = default_path(c, c.paths.policy, "policy.ckpt");
        refuse_existing(pol_path, opts.force);
        GaussianPolicy policy(dyn->spec().obs_dim, dyn->spec().action_dim, dyn->spec().u_max,
                              c.estimator.hidden, rng.split("policy-init"));
        PolicyTrainConfig pc = c.policy;
        if (pc.extra_states > 0) pc.extra_state_sampler = sampler;
        // Pendulum rollouts start from the swing-up mixture so the policy sees
        // the full approach path, not just the rest distribution.
        pc.reset_sampler = (c.env == "pendulum" && c.dynamics_mode != "learned")
                               ? EmpowermentEstimator::StateSampler(pendulum_policy_reset)
                               : sampler;
        std::ofstream log(fs::path(c.out_dir) / "policy_training.csv", std::ios::trunc);
        train_policy(policy, est, *dyn, pc, rng.split("policy-train"), &log);
        policy.save(pol_path.string());
        std::cout << "wrote " << pol_path.string() << "\n";
    }
    est.save(est_path.string());
    write_manifest(c.out_dir, c);
    std::cout << "wrote " << est_path.string() << "\n";
    return 0;
}

void check_grid_bounds(const ExperimentConfig& c) {
    const GridSpec& g = c.landscape.grid;
    if (c.env == "pendulum") {
        if (g.lo1 < -M_PI - 1e-9 || g.hi1 > M_PI + 1e-9 || g.lo2 < -8.0 - 1e-9 ||
            g.hi2 > 8.0 + 1e-9)
            throw ValidationError("pendulum landscape grid exceeds theta in [-pi,pi], "
                                  "theta_dot in [-8,8]");
    } else if (c.env == "ball") {
        const double half = BallEnv{}.half_box();
        if (g.lo1 < -half - 1e-9 || g.hi1 > half + 1e-9 || g.lo2 < -half - 1e-9 ||
            g.hi2 > half + 1e-9)
            throw ValidationError("ball landscape grid exceeds the box");
    }
}

int cmd_landscape(const CliOptions& opts) {
    const ExperimentConfig c = resolve_config(opts);
    check_grid_bounds(c);
    auto env = build_env(c);
    RngStream rng(c.seed);

    LearnedStack learned;
    const Dynamics* dyn = env.get();
    if (c.dynamics_mode == "learned") {
        learned = build_learned(c, *env, rng.split("learned"));
        dyn = learned.latent.get();
    }

    const std::string est_path = default_path(c, c.paths.estimator, "estimator.ckpt");
    if (!fs::exists(est_path))
        throw ValidationError("estimator checkpoint not found: " + est_path);
    EmpowermentEstimator est = EmpowermentEstimator::load(*dyn, est_path);

    const DvbfModel* model = learned.model.get();
    StateFromGrid state_fn = [&c, &env, model](double c1, double c2) {
        auto s = env_state_from_grid(c, c1, c2);
        if (model != nullptr) return model->encode_observation(env->observe(s));
        return s;
    };

    std::vector<LandscapeCell> cells;
    if (c.landscape.mode == "accumulated") {
        const std::string pol_path = default_path(c, c.paths.policy, "policy.ckpt");
        if (!fs::exists(pol_path))
            throw ValidationError("policy checkpoint not found: " + pol_path);
        GaussianPolicy policy = GaussianPolicy::load(pol_path);
        cells = accumulated_empowerment_landscape(
            policy, est, *dyn, c.landscape.grid, c.landscape.horizon,
            c.landscape.rollouts_per_cell, c.landscape.samples_per_state,
            rng.split("landscape"), state_fn, c.landscape.threads);
    } else {
        cells = empowerment_landscape(est, c.landscape.grid, c.landscape.samples_per_cell,
                                      rng.split("landscape"), state_fn, c.landscape.threads);
    }

    fs::create_directories(c.out_dir);
    const fs::path out = fs::path(c.out_dir) / "landscape.csv";
    refuse_existing(out, opts.force);
    const bool pend = c.env == "pendulum";
    save_landscape_csv(cells, out.string(), pend ? "theta" : "x", pend ? "theta_dot" : "y");
    write_manifest(c.out_dir, c);
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

void write_position_histogram(const PolicyEvaluation& eval, double half, int bins,
                              const std::string& path) {
    std::vector<long> counts(static_cast<std::size_t>(bins) * bins, 0);
    for (const auto& s : eval.states) {
        const int bx = std::min(bins - 1, std::max(0, static_cast<int>((s[0] + half) / (2 * half) * bins)));
        const int by = std::min(bins - 1, std::max(0, static_cast<int>((s[1] + half) / (2 * half) * bins)));
        ++counts[static_cast<std::size_t>(bx) * bins + by];
    }
    std::ofstream os(path, std::ios::trunc);
    os << "x,y,count\n";
    for (int i = 0; i < bins; ++i)
        for (int j = 0; j < bins; ++j)
            os << (-half + (i + 0.5) * 2 * half / bins) << ","
               << (-half + (j + 0.5) * 2 * half / bins) << ","
               << counts[static_cast<std::size_t>(i) * bins + j] << "\n";
}

int cmd_eval(const CliOptions& opts) {
    const ExperimentConfig c = resolve_config(opts);
    auto env = build_env(c);
    RngStream rng(c.seed);

    const std::string pol_path = default_path(c, c.paths.policy, "policy.ckpt");
    if (!fs::exists(pol_path)) throw ValidationError("policy checkpoint not found: " + pol_path);
    GaussianPolicy policy = GaussianPolicy::load(pol_path);

    std::unique_ptr<DvbfModel> filter;
    if (c.dynamics_mode == "learned") {
        const std::string dyn_path = default_path(c, c.paths.dynamics, "dynamics.ckpt");
        if (!fs::exists(dyn_path))
            throw ValidationError("dynamics checkpoint not found: " + dyn_path);
        filter = std::make_unique<DvbfModel>(DvbfModel::load(dyn_path));
    }

    const PolicyEvaluation trained =
        evaluate_policy(policy, *env, filter.get(), c.eval, rng.split("eval"));
    const PolicyEvaluation baseline = evaluate_random_policy(*env, c.eval, rng.split("baseline"));

    fs::create_directories(c.out_dir);
    save_eval_states_csv(trained, (fs::path(c.out_dir) / "eval_states.csv").string());
    save_eval_states_csv(baseline, (fs::path(c.out_dir) / "baseline_states.csv").string());
    if (c.env == "ball") {
        const double half = BallEnv{}.half_box();
        write_position_histogram(trained, half, 20,
                                 (fs::path(c.out_dir) / "hist_trained.csv").string());
        write_position_histogram(baseline, half, 20,
                                 (fs::path(c.out_dir) / "hist_uniform.csv").string());
    }

    std::ofstream summary(fs::path(c.out_dir) / "summary.txt", std::ios::trunc);
    auto report = [&](std::ostream& os) {
        os << "env: " << c.env << "\n";
        os << "episodes: " << trained.episodes << "  horizon: " << trained.horizon << "\n";
        if (c.env == "pendulum") {
            os << "swing_up_rate (trained): " << trained.swing_up_rate << "\n";
            os << "swing_up_rate (uniform): " << baseline.swing_up_rate << "\n";
        }
        if (c.env == "ball") {
            os << "mean_distance_to_wall trained=" << trained.mean_distance_to_wall
               << " uniform=" << baseline.mean_distance_to_wall << "\n";
            os << "mean_distance_to_center trained=" << trained.mean_distance_to_center
               << " uniform=" << baseline.mean_distance_to_center << "\n";
            os << "outer_shell_mass trained=" << trained.outer_shell_mass
               << " uniform=" << baseline.outer_shell_mass << "\n";
        }
        os << "mean_step_latency_sec (trained): " << trained.mean_step_latency_sec << "\n";
    };
    report(summary);
    report(std::cout);
    write_manifest(c.out_dir, c);
    return 0;
}

struct VerifyReport {
    int failures = 0;
    void check(const std::string& name, bool ok, double measured, double expected) {
        std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << ": measured=" << measured
                  << " expected=" << expected << "\n";
        if (!ok) ++failures;
    }
};

int cmd_verify(const CliOptions& opts) {
    const bool ci = opts.profile == "ci";
    const std::uint64_t seed = opts.seed.value_or(1);
    VerifyReport report;

    {  // Discrete oracle: binary symmetric channel capacities.
        const auto bsc = [](double p) {
            return std::vector<std::vector<double>>{{1 - p, p}, {p, 1 - p}};
        };
        const double c0 = blahut_arimoto_capacity(bsc(0.0));
        report.check("bsc p=0 capacity = ln 2", std::abs(c0 - std::log(2.0)) < 1e-6, c0,
                     std::log(2.0));
        const double chalf = blahut_arimoto_capacity(bsc(0.5));
        report.check("bsc p=0.5 capacity = 0", std::abs(chalf) < 1e-6, chalf, 0.0);
        const double c01 = blahut_arimoto_capacity(bsc(0.1));
        const double expected = std::log(2.0) + 0.1 * std::log(0.1) + 0.9 * std::log(0.9);
        report.check("bsc p=0.1 capacity", std::abs(c01 - expected) < 1e-6, c01, expected);
    }

    double se_at_ratio1 = 0.0;
    std::optional<EmpowermentEstimator> est_ratio1;
    LinearGaussianChannel channel1(1, 1.0);
    for (const double ratio : {0.5, 1.0, 2.0}) {
        LinearGaussianChannel channel(1, 1.0);
        EstimatorConfig ec;
        ec.fixed_source = true;
        ec.fixed_source_std = ratio;
        ec.hidden = {{64, Activation::tanh}, {64, Activation::tanh}};
        RngStream rng(seed);
        EmpowermentEstimator est(channel, ec, rng.split("init"));
        EmpowermentEstimator::TrainConfig tc;
        tc.iterations = ci ? 600 : 1500;
        tc.states_per_batch = 8;
        tc.samples_per_state = 4;
        tc.train_source = false;
        const auto sampler = [](RngStream& r) { return std::vector<double>{r.normal()}; };
        est.train(sampler, tc, rng.split("train"));
        const MiEstimate mi = est.estimate({0.0}, ci ? 4000 : 10000, rng.split("mc"));
        const double cap = gaussian_channel_capacity(ratio, 1.0);
        report.check("linear-gaussian capacity ratio=" + std::to_string(ratio),
                     std::abs(mi.mean - cap) < 0.05, mi.mean, cap);
        report.check("lower bound holds ratio=" + std::to_string(ratio),
                     mi.mean <= cap + 3 * mi.stderr_value, mi.mean, cap);
        if (ratio == 1.0) {
            se_at_ratio1 = mi.stderr_value;
            // Rebind the trained estimator to the long-lived channel for the gap check.
            est.save("/tmp/empo_verify_ratio1.ckpt");
            est_ratio1.emplace(EmpowermentEstimator::load(channel1, "/tmp/empo_verify_ratio1.ckpt"));
        }
    }

    {  // Gap identity: bound + posterior KL matches the analytic MI.
        RngStream rng(seed + 7);
        const int n = ci ? 4000 : 10000;
        const MiEstimate mi = est_ratio1->estimate({0.0}, n, rng.split("mi"));
        const double gap = est_ratio1->gap_estimate_linear_gaussian({0.0}, n, rng.split("gap"));
        const double truth = gaussian_channel_capacity(1.0, 1.0);
        const double residual = std::abs(mi.mean + gap - truth);
        report.check("gap identity |bound + gap - analytic|",
                     residual < 3 * std::max(mi.stderr_value, se_at_ratio1), residual, 0.0);
        report.check("gap nonnegative", gap > -3 * mi.stderr_value, gap, 0.0);
    }

    {  // Gradient check of the batch-mean bound on a tiny channel estimator.
        LinearGaussianChannel channel(1, 0.7);
        EstimatorConfig ec;
        ec.fixed_source = true;
        ec.fixed_source_std = 1.0;
        ec.hidden = {{8, Activation::tanh}};
        RngStream rng(seed + 13);
        EmpowermentEstimator est(channel, ec, rng.split("init"));
        auto& store = est.store();

        Tape t2;
        Tensor total = t2.scalar(0.0);
        RngStream base_noise = rng.split("noise");
        for (int i = 0; i < 4; ++i) {
            Tensor s = t2.vector({0.3 * i - 0.5});
            RngStream nr = base_noise.split(static_cast<std::uint64_t>(i));
            total = t2.add(total, est.mi_sample(t2, s, nr));
        }
        Tensor obj = t2.affine(total, 0.25, 0.0);
        t2.backward(obj);
        store.collect_grads(t2);

        double max_rel = 0.0;
        int checked = 0;
        for (auto& [name, p] : store.params()) {
            for (std::size_t k = 0; k < p.value.size() && checked < 24; k += 17, ++checked) {
                auto& param = store.param(name);
                const double saved = param.value[k];
                const double h = 1e-5;
                param.value[k] = saved + h;
                Tape tp;
                // fresh tape so the mutated value is re-read
                Tensor tot = tp.scalar(0.0);
                RngStream nse = rng.split("noise");
                for (int i = 0; i < 4; ++i) {
                    Tensor s = tp.vector({0.3 * i - 0.5});
                    RngStream nr = nse.split(static_cast<std::uint64_t>(i));
                    tot = tp.add(tot, est.mi_sample(tp, s, nr));
                }
                const double up = tp.affine(tot, 0.25, 0.0).scalar();
                param.value[k] = saved - h;
                Tape tm;
                Tensor totm = tm.scalar(0.0);
                RngStream nsem = rng.split("noise");
                for (int i = 0; i < 4; ++i) {
                    Tensor s = tm.vector({0.3 * i - 0.5});
                    RngStream nr = nsem.split(static_cast<std::uint64_t>(i));
                    totm = tm.add(totm, est.mi_sample(tm, s, nr));
                }
                const double down = tm.affine(totm, 0.25, 0.0).scalar();
                param.value[k] = saved;
                const double fd = (up - down) / (2 * h);
                const double analytic = p.grad[k];
                const double rel =
                    std::abs(analytic - fd) / std::max(1.0, std::abs(analytic));
                max_rel = std::max(max_rel, rel);
            }
        }
        store.zero_grads();
        report.check("bound gradient matches finite differences", max_rel < 1e-3, max_rel, 0.0);
    }

    std::cout << (report.failures == 0 ? "verification passed\n" : "verification FAILED\n");
    return report.failures == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unsupervised control toolkit: empowerment estimation, latent dynamics, "
                 "policy training and verification"};
    app.require_subcommand(1);

    CliOptions opts;
    std::string verb;
    for (const auto& name :
         {"gen-data", "train-dynamics", "train", "landscape", "eval", "verify"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", opts.config_path, "experiment config JSON");
        sub->add_option("--seed", [&opts](const std::vector<std::string>& v) {
            opts.seed = std::stoull(v.at(0));
            return true;
        }, "master seed override");
        sub->add_option("--out", [&opts](const std::vector<std::string>& v) {
            opts.out = v.at(0);
            return true;
        }, "output directory override");
        sub->add_flag("--force", opts.force, "overwrite existing outputs");
        sub->add_option("--profile", opts.profile, "full or ci")
            ->check(CLI::IsMember({"full", "ci"}));
        sub->callback([&verb, name] { verb = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (verb == "gen-data") return cmd_gen_data(opts);
        if (verb == "train-dynamics") return cmd_train_dynamics(opts);
        if (verb == "train") return cmd_train(opts);
        if (verb == "landscape") return cmd_landscape(opts);
        if (verb == "eval") return cmd_eval(opts);
        if (verb == "verify") return cmd_verify(opts);
        std::cerr << "unknown command\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const UnsupportedError& e) {
        std::cerr << "unsupported operation: " << e.what() << "\n";
        return 1;
    } catch (const TensorError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
