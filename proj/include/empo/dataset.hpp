#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "empo/env.hpp"
#include "empo/rng.hpp"

namespace empo {

struct Episode {
    std::vector<std::vector<double>> observations;  // horizon + 1 entries
    std::vector<std::vector<double>> actions;       // horizon entries
};

struct TrajectoryDataset {
    std::string env_name;
    int obs_dim = 0;
    int action_dim = 0;
    int horizon = 0;
    std::uint64_t seed = 0;
    std::vector<Episode> episodes;
};

// Rolls out a uniform-random policy (actions uniform within the action bounds).
TrajectoryDataset generate_dataset(const Dynamics& env, int episodes, int horizon, RngStream rng,
                                   std::uint64_t seed_label);

void save_dataset_csv(const TrajectoryDataset& ds, const std::string& path);
TrajectoryDataset load_dataset_csv(const std::string& path);

}  // namespace empo
