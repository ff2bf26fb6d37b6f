#include "empo/config.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "empo/errors.hpp"

namespace empo {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& ctx) {
    if (!j.is_object()) throw ConfigError("config section '" + ctx + "' must be an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("unknown config key '" + item.key() + "' in section '" + ctx + "'");
    }
}

template <class T>
void read_opt(const json& j, const char* key, T& out, const std::string& ctx) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config key '" + ctx + "." + key + "': " + e.what());
    }
}

std::vector<MlpSpec::Hidden> hidden_from_json(const json& arr, const std::string& ctx) {
    if (!arr.is_array()) throw ConfigError("config key '" + ctx + "' must be an array");
    std::vector<MlpSpec::Hidden> out;
    for (const auto& h : arr) {
        check_keys(h, {"width", "activation"}, ctx);
        int width = 0;
        std::string act = "tanh";
        read_opt(h, "width", width, ctx);
        read_opt(h, "activation", act, ctx);
        out.push_back({width, activation_from_string(act)});
    }
    return out;
}

json hidden_to_json(const std::vector<MlpSpec::Hidden>& hidden) {
    json arr = json::array();
    for (const auto& h : hidden)
        arr.push_back({{"width", h.width}, {"activation", to_string(h.act)}});
    return arr;
}

void parse_grid(const json& j, GridSpec& grid, const std::string& ctx) {
    check_keys(j, {"lo1", "hi1", "n1", "lo2", "hi2", "n2"}, ctx);
    read_opt(j, "lo1", grid.lo1, ctx);
    read_opt(j, "hi1", grid.hi1, ctx);
    read_opt(j, "n1", grid.n1, ctx);
    read_opt(j, "lo2", grid.lo2, ctx);
    read_opt(j, "hi2", grid.hi2, ctx);
    read_opt(j, "n2", grid.n2, ctx);
}

json grid_to_json(const GridSpec& grid) {
    return {{"lo1", grid.lo1}, {"hi1", grid.hi1}, {"n1", grid.n1},
            {"lo2", grid.lo2}, {"hi2", grid.hi2}, {"n2", grid.n2}};
}

}  // namespace

void ExperimentConfig::validate() const {
    if (env != "pendulum" && env != "ball" && env != "linear-gaussian")
        throw ConfigError("env must be pendulum, ball or linear-gaussian; got '" + env + "'");
    if (dynamics_mode != "analytic" && dynamics_mode != "learned")
        throw ConfigError("dynamics_mode must be analytic or learned; got '" + dynamics_mode +
                          "'");
    if (data.episodes < 1 || data.horizon < 1)
        throw ConfigError("data.episodes and data.horizon must be >= 1");
    if (channel.dim < 1 || channel.noise_std <= 0.0)
        throw ConfigError("channel.dim must be >= 1 and channel.noise_std positive");
    estimator.validate();
    policy.validate();
    if (estimator_train.iterations < 0 || estimator_train.states_per_batch < 1 ||
        estimator_train.samples_per_state < 1)
        throw ConfigError("estimator_train sizes must be positive");
    if (grid_state_fraction < 0.0 || grid_state_fraction > 1.0)
        throw ConfigError("grid_state_fraction must lie in [0, 1]");
    if (landscape.mode != "direct" && landscape.mode != "accumulated")
        throw ConfigError("landscape.mode must be direct or accumulated");
    if (landscape.grid.n1 < 1 || landscape.grid.n2 < 1)
        throw ConfigError("landscape grid must have n1, n2 >= 1");
    if (landscape.samples_per_cell < 1)
        throw ConfigError("landscape.samples_per_cell must be >= 1");
    if (eval.episodes < 1 || eval.horizon < 1)
        throw ConfigError("eval.episodes and eval.horizon must be >= 1");
}

ExperimentConfig default_config(const std::string& env) {
    ExperimentConfig c;
    c.env = env;
    c.policy.extra_states = 16;
    if (env == "pendulum") {
        c.name = "pendulum";
        c.estimator.n_steps = 5;
        c.estimator_train.iterations = 16000;
        c.estimator_train.samples_per_state = 4;
        c.policy.horizon = 20;
        c.policy.epochs = 1400;
        c.policy.rollouts = 6;
        c.policy.lr_theta = 0.0;  // estimator is pre-trained, then frozen
        c.policy.lr_chi = 1e-3;
        c.policy.extra_states = 0;  // extra states only matter when theta trains
        c.landscape.grid = {-M_PI, M_PI, 41, -8.0, 8.0, 41};
        c.eval = {10, 500, false};
    } else if (env == "ball") {
        c.name = "ball";
        c.dynamics_mode = "learned";
        c.estimator.hidden = {{128, Activation::tanh}, {128, Activation::tanh}};
        c.estimator_train.iterations = 10000;
        c.estimator_train.samples_per_state = 4;
        c.policy.horizon = 10;
        c.policy.lr_theta = 0.0;
        c.policy.lr_chi = 1e-3;
        c.policy.extra_states = 0;
        c.dvbf.latent_dim = 8;
        c.dvbf_train.epochs = 500;
        c.landscape.grid = {-5.0, 5.0, 41, -5.0, 5.0, 41};
        c.eval = {10, 1000, false};
    } else if (env == "linear-gaussian") {
        c.name = "linear-gaussian";
        c.estimator.fixed_source = true;
        c.estimator_train.iterations = 2000;
        c.landscape.grid = {-1.0, 1.0, 5, -1.0, 1.0, 5};
        c.eval = {2, 50, false};
    } else {
        throw ConfigError("unknown env '" + env + "'");
    }
    return c;
}

ExperimentConfig parse_config_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j,
               {"name", "env", "dynamics_mode", "seed", "out_dir", "data", "channel", "dvbf",
                "dvbf_train", "estimator", "estimator_train", "grid_state_fraction", "policy",
                "landscape", "eval", "paths"},
               "config");

    std::string env = "pendulum";
    read_opt(j, "env", env, "config");
    ExperimentConfig c = default_config(env);
    read_opt(j, "name", c.name, "config");
    read_opt(j, "dynamics_mode", c.dynamics_mode, "config");
    read_opt(j, "seed", c.seed, "config");
    read_opt(j, "out_dir", c.out_dir, "config");
    read_opt(j, "grid_state_fraction", c.grid_state_fraction, "config");

    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, {"episodes", "horizon"}, "data");
        read_opt(d, "episodes", c.data.episodes, "data");
        read_opt(d, "horizon", c.data.horizon, "data");
    }
    if (j.contains("channel")) {
        const auto& d = j.at("channel");
        check_keys(d, {"dim", "noise_std"}, "channel");
        read_opt(d, "dim", c.channel.dim, "channel");
        read_opt(d, "noise_std", c.channel.noise_std, "channel");
    }
    if (j.contains("dvbf")) {
        const auto& d = j.at("dvbf");
        check_keys(d, {"latent_dim", "initial_window", "hidden_width"}, "dvbf");
        read_opt(d, "latent_dim", c.dvbf.latent_dim, "dvbf");
        read_opt(d, "initial_window", c.dvbf.initial_window, "dvbf");
        read_opt(d, "hidden_width", c.dvbf.hidden_width, "dvbf");
    }
    if (j.contains("dvbf_train")) {
        const auto& d = j.at("dvbf_train");
        check_keys(d, {"epochs", "batch_size", "batches_per_epoch", "bptt_window",
                       "learning_rate", "grad_clip"},
                   "dvbf_train");
        read_opt(d, "epochs", c.dvbf_train.epochs, "dvbf_train");
        read_opt(d, "batch_size", c.dvbf_train.batch_size, "dvbf_train");
        read_opt(d, "batches_per_epoch", c.dvbf_train.batches_per_epoch, "dvbf_train");
        read_opt(d, "bptt_window", c.dvbf_train.bptt_window, "dvbf_train");
        read_opt(d, "learning_rate", c.dvbf_train.learning_rate, "dvbf_train");
        read_opt(d, "grad_clip", c.dvbf_train.grad_clip, "dvbf_train");
    }
    if (j.contains("estimator")) {
        const auto& d = j.at("estimator");
        check_keys(d, {"n_steps", "hidden", "fixed_source", "fixed_source_std"}, "estimator");
        read_opt(d, "n_steps", c.estimator.n_steps, "estimator");
        if (d.contains("hidden"))
            c.estimator.hidden = hidden_from_json(d.at("hidden"), "estimator.hidden");
        read_opt(d, "fixed_source", c.estimator.fixed_source, "estimator");
        read_opt(d, "fixed_source_std", c.estimator.fixed_source_std, "estimator");
    }
    if (j.contains("estimator_train")) {
        const auto& d = j.at("estimator_train");
        check_keys(d, {"iterations", "states_per_batch", "samples_per_state", "learning_rate",
                       "train_source"},
                   "estimator_train");
        read_opt(d, "iterations", c.estimator_train.iterations, "estimator_train");
        read_opt(d, "states_per_batch", c.estimator_train.states_per_batch, "estimator_train");
        read_opt(d, "samples_per_state", c.estimator_train.samples_per_state, "estimator_train");
        read_opt(d, "learning_rate", c.estimator_train.learning_rate, "estimator_train");
        read_opt(d, "train_source", c.estimator_train.train_source, "estimator_train");
    }
    if (j.contains("policy")) {
        const auto& d = j.at("policy");
        check_keys(d, {"epochs", "horizon", "rollouts", "beta_start", "beta_end", "lr_theta",
                       "lr_chi", "alternating", "extra_states"},
                   "policy");
        read_opt(d, "epochs", c.policy.epochs, "policy");
        read_opt(d, "horizon", c.policy.horizon, "policy");
        read_opt(d, "rollouts", c.policy.rollouts, "policy");
        read_opt(d, "beta_start", c.policy.beta_start, "policy");
        read_opt(d, "beta_end", c.policy.beta_end, "policy");
        read_opt(d, "lr_theta", c.policy.lr_theta, "policy");
        read_opt(d, "lr_chi", c.policy.lr_chi, "policy");
        read_opt(d, "alternating", c.policy.alternating, "policy");
        read_opt(d, "extra_states", c.policy.extra_states, "policy");
    }
    if (j.contains("landscape")) {
        const auto& d = j.at("landscape");
        check_keys(d, {"mode", "grid", "samples_per_cell", "threads", "horizon",
                       "rollouts_per_cell", "samples_per_state"},
                   "landscape");
        read_opt(d, "mode", c.landscape.mode, "landscape");
        if (d.contains("grid")) parse_grid(d.at("grid"), c.landscape.grid, "landscape.grid");
        read_opt(d, "samples_per_cell", c.landscape.samples_per_cell, "landscape");
        read_opt(d, "threads", c.landscape.threads, "landscape");
        read_opt(d, "horizon", c.landscape.horizon, "landscape");
        read_opt(d, "rollouts_per_cell", c.landscape.rollouts_per_cell, "landscape");
        read_opt(d, "samples_per_state", c.landscape.samples_per_state, "landscape");
    }
    if (j.contains("eval")) {
        const auto& d = j.at("eval");
        check_keys(d, {"episodes", "horizon", "stochastic"}, "eval");
        read_opt(d, "episodes", c.eval.episodes, "eval");
        read_opt(d, "horizon", c.eval.horizon, "eval");
        read_opt(d, "stochastic", c.eval.stochastic, "eval");
    }
    if (j.contains("paths")) {
        const auto& d = j.at("paths");
        check_keys(d, {"dataset", "dynamics", "estimator", "policy"}, "paths");
        read_opt(d, "dataset", c.paths.dataset, "paths");
        read_opt(d, "dynamics", c.paths.dynamics, "paths");
        read_opt(d, "estimator", c.paths.estimator, "paths");
        read_opt(d, "policy", c.paths.policy, "paths");
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_json(buf.str());
}

std::string config_to_json(const ExperimentConfig& c) {
    json j;
    j["name"] = c.name;
    j["env"] = c.env;
    j["dynamics_mode"] = c.dynamics_mode;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["grid_state_fraction"] = c.grid_state_fraction;
    j["data"] = {{"episodes", c.data.episodes}, {"horizon", c.data.horizon}};
    j["channel"] = {{"dim", c.channel.dim}, {"noise_std", c.channel.noise_std}};
    j["dvbf"] = {{"latent_dim", c.dvbf.latent_dim},
                 {"initial_window", c.dvbf.initial_window},
                 {"hidden_width", c.dvbf.hidden_width}};
    j["dvbf_train"] = {{"epochs", c.dvbf_train.epochs},
                       {"batch_size", c.dvbf_train.batch_size},
                       {"batches_per_epoch", c.dvbf_train.batches_per_epoch},
                       {"bptt_window", c.dvbf_train.bptt_window},
                       {"learning_rate", c.dvbf_train.learning_rate},
                       {"grad_clip", c.dvbf_train.grad_clip}};
    j["estimator"] = {{"n_steps", c.estimator.n_steps},
                      {"hidden", hidden_to_json(c.estimator.hidden)},
                      {"fixed_source", c.estimator.fixed_source},
                      {"fixed_source_std", c.estimator.fixed_source_std}};
    j["estimator_train"] = {{"iterations", c.estimator_train.iterations},
                            {"states_per_batch", c.estimator_train.states_per_batch},
                            {"samples_per_state", c.estimator_train.samples_per_state},
                            {"learning_rate", c.estimator_train.learning_rate},
                            {"train_source", c.estimator_train.train_source}};
    j["policy"] = {{"epochs", c.policy.epochs},
                   {"horizon", c.policy.horizon},
                   {"rollouts", c.policy.rollouts},
                   {"beta_start", c.policy.beta_start},
                   {"beta_end", c.policy.beta_end},
                   {"lr_theta", c.policy.lr_theta},
                   {"lr_chi", c.policy.lr_chi},
                   {"alternating", c.policy.alternating},
                   {"extra_states", c.policy.extra_states}};
    j["landscape"] = {{"mode", c.landscape.mode},
                      {"grid", grid_to_json(c.landscape.grid)},
                      {"samples_per_cell", c.landscape.samples_per_cell},
                      {"threads", c.landscape.threads},
                      {"horizon", c.landscape.horizon},
                      {"rollouts_per_cell", c.landscape.rollouts_per_cell},
                      {"samples_per_state", c.landscape.samples_per_state}};
    j["eval"] = {{"episodes", c.eval.episodes},
                 {"horizon", c.eval.horizon},
                 {"stochastic", c.eval.stochastic}};
    j["paths"] = {{"dataset", c.paths.dataset},
                  {"dynamics", c.paths.dynamics},
                  {"estimator", c.paths.estimator},
                  {"policy", c.paths.policy}};
    return j.dump(2);
}

void apply_profile(ExperimentConfig& c, const std::string& profile) {
    if (profile == "full") return;
    if (profile != "ci") throw ConfigError("profile must be 'full' or 'ci'; got '" + profile + "'");
    c.data.episodes = std::min(c.data.episodes, 20);
    c.data.horizon = std::min(c.data.horizon, 50);
    c.dvbf.latent_dim = std::min(c.dvbf.latent_dim, 8);
    c.dvbf_train.epochs = std::min(c.dvbf_train.epochs, 3);
    c.dvbf_train.batches_per_epoch = std::min(c.dvbf_train.batches_per_epoch, 8);
    c.estimator_train.iterations = std::min(c.estimator_train.iterations, 60);
    c.policy.epochs = std::min(c.policy.epochs, 30);
    c.policy.rollouts = std::min(c.policy.rollouts, 4);
    c.landscape.grid.n1 = std::min(c.landscape.grid.n1, 9);
    c.landscape.grid.n2 = std::min(c.landscape.grid.n2, 9);
    c.landscape.samples_per_cell = std::min(c.landscape.samples_per_cell, 32);
    c.landscape.rollouts_per_cell = std::min(c.landscape.rollouts_per_cell, 2);
    c.landscape.samples_per_state = std::min(c.landscape.samples_per_state, 8);
    c.eval.episodes = std::min(c.eval.episodes, 3);
    c.eval.horizon = std::min(c.eval.horizon, 200);
}

std::string config_hash(const ExperimentConfig& config) {
    const std::string text = config_to_json(config);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

void write_manifest(const std::string& dir, const ExperimentConfig& config) {
    std::filesystem::create_directories(dir);
    json j;
    j["config"] = json::parse(config_to_json(config));
    j["config_hash"] = config_hash(config);
    j["seed"] = config.seed;
    std::ofstream os(std::filesystem::path(dir) / "manifest.json", std::ios::trunc);
    if (!os) throw ValidationError("cannot write manifest in " + dir);
    os << j.dump(2) << "\n";
}

}  // namespace empo
