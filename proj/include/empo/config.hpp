#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "empo/dvbf.hpp"
#include "empo/empowerment.hpp"
#include "empo/network.hpp"
#include "empo/policy.hpp"

namespace empo {

// One experiment end to end: environment, data generation, latent-dynamics
// training, estimator/policy training, landscape and evaluation settings.
// JSON round-trip stable; unknown keys are rejected at parse time.
struct ExperimentConfig {
    std::string name = "experiment";
    std::string env = "pendulum";            // pendulum | ball | linear-gaussian
    std::string dynamics_mode = "analytic";  // analytic | learned
    std::uint64_t seed = 1;
    std::string out_dir = "out";

    struct Data {
        int episodes = 200;
        int horizon = 100;
    } data;

    struct Channel {  // linear-gaussian only
        int dim = 1;
        double noise_std = 1.0;
    } channel;

    DvbfConfig dvbf;  // obs/action dims filled from the env at build time
    DvbfTrainConfig dvbf_train;

    EstimatorConfig estimator;
    EmpowermentEstimator::TrainConfig estimator_train;
    // Estimator training states: fraction drawn uniformly from the state grid
    // below; the rest from the env reset distribution.
    double grid_state_fraction = 0.5;

    PolicyTrainConfig policy;

    struct Landscape {
        std::string mode = "direct";  // direct | accumulated
        GridSpec grid;
        int samples_per_cell = 256;
        int threads = 0;
        // accumulated mode
        int horizon = 20;
        int rollouts_per_cell = 4;
        int samples_per_state = 16;
    } landscape;

    EvalConfig eval;

    struct Paths {
        std::string dataset;    // dataset CSV for train-dynamics
        std::string dynamics;   // DVBF checkpoint for learned mode
        std::string estimator;  // estimator checkpoint
        std::string policy;     // policy checkpoint
    } paths;

    void validate() const;
};

// Env-specific defaults (grids, horizons, reset distributions).
ExperimentConfig default_config(const std::string& env);

// Strict JSON parse: unknown keys raise ConfigError naming the key and section.
ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);

std::string config_to_json(const ExperimentConfig& config);

// Shrinks training sizes for fast smoke runs; "full" is the identity.
void apply_profile(ExperimentConfig& config, const std::string& profile);

// FNV-1a over the canonical JSON serialization.
std::string config_hash(const ExperimentConfig& config);

// Writes <dir>/manifest.json with the config, its hash, and the seed.
void write_manifest(const std::string& dir, const ExperimentConfig& config);

}  // namespace empo
