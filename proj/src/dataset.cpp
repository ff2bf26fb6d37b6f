#include "empo/dataset.hpp"

#include <fstream>
#include <sstream>

#include "empo/errors.hpp"

namespace empo {

TrajectoryDataset generate_dataset(const Dynamics& env, int episodes, int horizon, RngStream rng,
                                   std::uint64_t seed_label) {
    if (episodes < 1) throw ValidationError("generate_dataset: episodes must be >= 1");
    if (horizon < 1) throw ValidationError("generate_dataset: horizon must be >= 1");
    const EnvSpec& spec = env.spec();
    TrajectoryDataset ds;
    ds.env_name = spec.name;
    ds.obs_dim = spec.obs_dim;
    ds.action_dim = spec.action_dim;
    ds.horizon = horizon;
    ds.seed = seed_label;
    ds.episodes.reserve(static_cast<std::size_t>(episodes));
    for (int e = 0; e < episodes; ++e) {
        RngStream ep_rng = rng.split(static_cast<std::uint64_t>(e));
        Episode ep;
        std::vector<double> state = env.reset_state(ep_rng);
        ep.observations.push_back(env.observe(state));
        for (int t = 0; t < horizon; ++t) {
            std::vector<double> action(spec.action_dim);
            for (int i = 0; i < spec.action_dim; ++i) {
                const double bound = spec.u_max.empty() ? 1.0 : spec.u_max[i];
                action[i] = ep_rng.uniform(-bound, bound);
            }
            const std::vector<double> noise = ep_rng.normal_vector(env.noise_dim());
            state = env.step_values(state, action, noise);
            ep.actions.push_back(std::move(action));
            ep.observations.push_back(env.observe(state));
        }
        ds.episodes.push_back(std::move(ep));
    }
    return ds;
}

void save_dataset_csv(const TrajectoryDataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ValidationError("cannot open dataset file for writing: " + path);
    os << "# env=" << ds.env_name << " obs_dim=" << ds.obs_dim << " action_dim=" << ds.action_dim
       << " horizon=" << ds.horizon << " episodes=" << ds.episodes.size() << " seed=" << ds.seed
       << "\n";
    os << "episode,t";
    for (int i = 0; i < ds.obs_dim; ++i) os << ",obs" << i;
    for (int i = 0; i < ds.action_dim; ++i) os << ",act" << i;
    os << "\n";
    os.precision(17);
    for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
        const Episode& ep = ds.episodes[e];
        for (std::size_t t = 0; t < ep.observations.size(); ++t) {
            os << e << "," << t;
            for (double v : ep.observations[t]) os << "," << v;
            // The final observation row has no action; columns are zero-filled.
            for (int i = 0; i < ds.action_dim; ++i)
                os << "," << (t < ep.actions.size() ? ep.actions[t][i] : 0.0);
            os << "\n";
        }
    }
    if (!os) throw ValidationError("write failure on dataset file: " + path);
}

TrajectoryDataset load_dataset_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open dataset file: " + path);
    TrajectoryDataset ds;
    std::string line;
    if (!std::getline(is, line) || line.rfind("# env=", 0) != 0)
        throw ValidationError("dataset file missing header: " + path);
    {
        std::istringstream hs(line.substr(2));
        std::string kv;
        std::size_t episodes = 0;
        while (hs >> kv) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = kv.substr(0, eq);
            const std::string val = kv.substr(eq + 1);
            if (key == "env") ds.env_name = val;
            else if (key == "obs_dim") ds.obs_dim = std::stoi(val);
            else if (key == "action_dim") ds.action_dim = std::stoi(val);
            else if (key == "horizon") ds.horizon = std::stoi(val);
            else if (key == "episodes") episodes = std::stoul(val);
            else if (key == "seed") ds.seed = std::stoull(val);
        }
        ds.episodes.resize(episodes);
    }
    std::getline(is, line);  // column header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');
        const std::size_t e = std::stoul(cell);
        std::getline(ls, cell, ',');
        const std::size_t t = std::stoul(cell);
        if (e >= ds.episodes.size()) throw ValidationError("dataset row references unknown episode");
        Episode& ep = ds.episodes[e];
        std::vector<double> obs(ds.obs_dim);
        for (auto& v : obs) {
            std::getline(ls, cell, ',');
            v = std::stod(cell);
        }
        std::vector<double> act(ds.action_dim);
        for (auto& v : act) {
            std::getline(ls, cell, ',');
            v = std::stod(cell);
        }
        ep.observations.push_back(std::move(obs));
        if (t < static_cast<std::size_t>(ds.horizon)) ep.actions.push_back(std::move(act));
    }
    return ds;
}

}  // namespace empo
