#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "empo/dataset.hpp"
#include "empo/env.hpp"
#include "empo/network.hpp"

namespace empo {

struct DvbfConfig {
    int obs_dim = 0;
    int action_dim = 0;
    int latent_dim = 32;
    int initial_window = 3;  // K observations feeding the initial-state encoder
    int hidden_width = 128;

    void validate() const;
};

struct FusionResult {
    Tensor mean;
    Tensor variance;
};

// Precision-weighted product of two Gaussians, elementwise.
FusionResult fuse(Tape& tape, Tensor mu_trans, Tensor var_trans_hat, Tensor mu_meas,
                  Tensor var_meas);

// Standardized innovation statistics: mu_w = (mu_q - mu_trans)/std_trans,
// var_w = var_q / var_trans.
FusionResult innovation_noise(Tape& tape, Tensor mu_q, Tensor var_q, Tensor mu_trans,
                              Tensor var_trans);

struct LatentBelief {
    std::vector<double> z;
    std::vector<double> mu_q;
    std::vector<double> var_q;
    std::vector<double> mu_w;
    std::vector<double> var_w;
};

struct ElboParts {
    Tensor total;
    double reconstruction = 0.0;
    double kl = 0.0;
};

// Latent state-space model: shared-mean transition prior/recognition, Gaussian
// measurement recognition, decoder with a single learned output variance, and
// a VAE-style initial-state encoder over the first K observations.
class DvbfModel {
public:
    DvbfModel(DvbfConfig config, RngStream init_rng);
    static DvbfModel attach(DvbfConfig config);

    DvbfModel(const DvbfModel&) = delete;
    DvbfModel& operator=(const DvbfModel&) = delete;
    DvbfModel(DvbfModel&& other) noexcept;
    DvbfModel& operator=(DvbfModel&& other) noexcept;

    const DvbfConfig& config() const { return config_; }
    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }

    struct TransitionOut {
        Tensor mu;        // shared between prior and recognition
        Tensor var;       // prior variance
        Tensor var_hat;   // recognition-side transition variance
    };
    TransitionOut transition(Tape& tape, Tensor z, Tensor u) const;

    FusionResult measurement(Tape& tape, Tensor x) const;

    Tensor decode_mean(Tape& tape, Tensor z) const;
    Tensor decoder_std(Tape& tape) const;  // scalar learned std (floored)
    Tensor log_likelihood(Tape& tape, Tensor x, Tensor z) const;

    // Initial-state encoder over the first K observations: returns the w1
    // distribution; w1 samples map to z1 through a learned nonlinearity.
    DiagonalGaussian initial_encoder(Tape& tape, std::span<const std::vector<double>> first_obs) const;
    Tensor w_to_z(Tape& tape, Tensor w) const;

    // Single-sample reparametrized ELBO of one (x_{1:T}, u_{1:T-1}) window.
    ElboParts elbo(Tape& tape, const Episode& window, RngStream& noise_rng) const;

    // Online filtering (values only).
    LatentBelief init_belief(std::span<const std::vector<double>> first_obs, RngStream& rng) const;
    LatentBelief filter_step(const LatentBelief& belief, const std::vector<double>& u,
                             const std::vector<double>& x_next, std::span<const double> noise) const;

    // Measurement-mean encoding of a single observation (used to place grid
    // states in latent space).
    std::vector<double> encode_observation(const std::vector<double>& x) const;

    void save(const std::string& path) const;
    static DvbfModel load(const std::string& path);

private:
    DvbfModel() = default;
    void attach_nets();

    DvbfConfig config_;
    ParameterStore store_;
    Mlp transition_net_;
    Mlp measurement_net_;
    Mlp decoder_net_;
    Mlp initial_net_;
    Mlp w_to_z_net_;
};

struct DvbfTrainConfig {
    int epochs = 50;
    int batch_size = 16;
    int batches_per_epoch = 32;
    int bptt_window = 20;
    double learning_rate = 1e-3;
    double grad_clip = 10.0;  // global-norm gradient clip; <= 0 disables
    OptimizerConfig opt;
};

struct DvbfTrainStats {
    std::vector<double> elbo_curve;  // per epoch
};

// Maximizes the mean ELBO over minibatches of truncated windows. Writes
// "epoch,elbo,reconstruction,kl" rows to `log` when provided. Throws
// NumericError on NaN loss.
DvbfTrainStats train_dynamics(DvbfModel& model, const TrajectoryDataset& data,
                              const DvbfTrainConfig& config, RngStream rng,
                              std::ostream* log = nullptr);

// Adapts a trained model's transition prior as a Dynamics for empowerment and
// policy training. Initial states are drawn from a pool of encoded beliefs.
class LatentDynamics final : public Dynamics {
public:
    LatentDynamics(const DvbfModel& model, std::vector<double> u_max,
                   std::vector<std::vector<double>> initial_pool);

    const EnvSpec& spec() const override { return spec_; }
    int noise_dim() const override { return spec_.state_dim; }
    Tensor step(Tape& tape, Tensor state, Tensor action,
                std::span<const double> noise) const override;
    std::vector<double> reset_state(RngStream& rng) const override;

    const DvbfModel& model() const { return *model_; }

private:
    const DvbfModel* model_;
    EnvSpec spec_;
    std::vector<std::vector<double>> initial_pool_;
};

}  // namespace empo
