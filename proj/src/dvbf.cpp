#include "empo/dvbf.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "empo/errors.hpp"

namespace empo {

namespace {

Tensor floor_var(Tape& t, Tensor var) {
    return t.clamp(var, kSigmaMin * kSigmaMin, std::numeric_limits<double>::infinity());
}

Tensor broadcast_scalar(Tape& t, Tensor scalar, int n) {
    return t.mul(t.leaf({n}, std::vector<double>(n, 1.0)), scalar);
}

}  // namespace

void DvbfConfig::validate() const {
    if (obs_dim < 1 || action_dim < 1 || latent_dim < 1)
        throw ConfigError("DvbfConfig: dims must be >= 1");
    if (initial_window < 1) throw ConfigError("DvbfConfig: initial_window must be >= 1");
    if (hidden_width < 1) throw ConfigError("DvbfConfig: hidden_width must be >= 1");
}

FusionResult fuse(Tape& t, Tensor mu_trans, Tensor var_trans_hat, Tensor mu_meas, Tensor var_meas) {
    Tensor denom = t.add(var_meas, var_trans_hat);
    Tensor mu = t.div(t.add(t.mul(mu_trans, var_meas), t.mul(mu_meas, var_trans_hat)), denom);
    Tensor var = t.div(t.mul(var_meas, var_trans_hat), denom);
    return {mu, var};
}

FusionResult innovation_noise(Tape& t, Tensor mu_q, Tensor var_q, Tensor mu_trans, Tensor var_trans) {
    Tensor mu_w = t.div(t.sub(mu_q, mu_trans), t.sqrt(var_trans));
    Tensor var_w = t.div(var_q, var_trans);
    return {mu_w, var_w};
}

DvbfModel::DvbfModel(DvbfConfig config, RngStream init_rng) : config_(config) {
    config_.validate();
    const int nz = config_.latent_dim;
    const int w = config_.hidden_width;
    transition_net_ = Mlp(store_, "trans",
                          MlpSpec{nz + config_.action_dim,
                                  {{w, Activation::sigmoid}},
                                  {{nz, HeadTransform::identity},
                                   {nz, HeadTransform::square},
                                   {nz, HeadTransform::square}}},
                          init_rng.split("trans"));
    measurement_net_ = Mlp(store_, "meas",
                           MlpSpec{config_.obs_dim,
                                   {{w, Activation::relu}},
                                   {{nz, HeadTransform::identity}, {nz, HeadTransform::square}}},
                           init_rng.split("meas"));
    decoder_net_ = Mlp(store_, "dec",
                       MlpSpec{nz, {{w, Activation::relu}}, {{config_.obs_dim, HeadTransform::identity}}},
                       init_rng.split("dec"));
    store_.add("dec/out_std_raw", {1}, {1.0});
    store_.add("trans/action_gain", {nz, config_.action_dim},
               std::vector<double>(static_cast<std::size_t>(nz) * config_.action_dim, 0.0));
    initial_net_ = Mlp(store_, "init",
                       MlpSpec{config_.obs_dim * config_.initial_window,
                               {{w, Activation::relu}},
                               {{nz, HeadTransform::identity}, {nz, HeadTransform::square}}},
                       init_rng.split("init"));
    w_to_z_net_ = Mlp(store_, "w2z",
                      MlpSpec{nz, {{w, Activation::tanh}}, {{nz, HeadTransform::identity}}},
                      init_rng.split("w2z"));
}

DvbfModel DvbfModel::attach(DvbfConfig config) {
    config.validate();
    DvbfModel m;
    m.config_ = config;
    return m;
}

DvbfModel::DvbfModel(DvbfModel&& other) noexcept
    : config_(other.config_), store_(std::move(other.store_)) {
    attach_nets();
}

DvbfModel& DvbfModel::operator=(DvbfModel&& other) noexcept {
    config_ = other.config_;
    store_ = std::move(other.store_);
    attach_nets();
    return *this;
}

void DvbfModel::attach_nets() {
    const int nz = config_.latent_dim;
    const int w = config_.hidden_width;
    transition_net_ = Mlp::attach(store_, "trans",
                                  MlpSpec{nz + config_.action_dim,
                                          {{w, Activation::sigmoid}},
                                          {{nz, HeadTransform::identity},
                                           {nz, HeadTransform::square},
                                           {nz, HeadTransform::square}}});
    measurement_net_ = Mlp::attach(store_, "meas",
                                   MlpSpec{config_.obs_dim,
                                           {{w, Activation::relu}},
                                           {{nz, HeadTransform::identity}, {nz, HeadTransform::square}}});
    decoder_net_ = Mlp::attach(
        store_, "dec",
        MlpSpec{nz, {{w, Activation::relu}}, {{config_.obs_dim, HeadTransform::identity}}});
    initial_net_ = Mlp::attach(store_, "init",
                               MlpSpec{config_.obs_dim * config_.initial_window,
                                       {{w, Activation::relu}},
                                       {{nz, HeadTransform::identity}, {nz, HeadTransform::square}}});
    w_to_z_net_ = Mlp::attach(store_, "w2z",
                              MlpSpec{nz, {{w, Activation::tanh}}, {{nz, HeadTransform::identity}}});
}

DvbfModel::TransitionOut DvbfModel::transition(Tape& t, Tensor z, Tensor u) const {
    auto outs = transition_net_.forward(t, t.concat(z, u));
    // Residual parameterization with a direct linear action path: the network
    // predicts the state change, which keeps near-identity dynamics easy to
    // represent, and the linear term gives the action an undiluted gradient
    // path into the transition mean.
    Tensor drive = t.matmul(store_.use(t, "trans/action_gain"), u);
    Tensor mu = t.add(t.add(z, drive), outs[0]);
    return {mu, floor_var(t, outs[1]), floor_var(t, outs[2])};
}

FusionResult DvbfModel::measurement(Tape& t, Tensor x) const {
    auto outs = measurement_net_.forward(t, x);
    return {outs[0], floor_var(t, outs[1])};
}

Tensor DvbfModel::decode_mean(Tape& t, Tensor z) const { return decoder_net_.forward(t, z)[0]; }

Tensor DvbfModel::decoder_std(Tape& t) const {
    Tensor raw = store_.use(t, "dec/out_std_raw");
    return variance_to_std(t, t.square(raw));
}

Tensor DvbfModel::log_likelihood(Tape& t, Tensor x, Tensor z) const {
    Tensor mean = decode_mean(t, z);
    Tensor std = broadcast_scalar(t, decoder_std(t), config_.obs_dim);
    return DiagonalGaussian{mean, std}.log_prob(x);
}

DiagonalGaussian DvbfModel::initial_encoder(Tape& t,
                                            std::span<const std::vector<double>> first_obs) const {
    if (static_cast<int>(first_obs.size()) != config_.initial_window)
        throw ConfigError("initial_encoder: expected " + std::to_string(config_.initial_window) +
                          " observations, got " + std::to_string(first_obs.size()));
    std::vector<double> flat;
    for (const auto& x : first_obs) flat.insert(flat.end(), x.begin(), x.end());
    Tensor input = t.vector(std::move(flat));
    auto outs = initial_net_.forward(t, input);
    return DiagonalGaussian{outs[0], t.sqrt(floor_var(t, outs[1]))};
}

Tensor DvbfModel::w_to_z(Tape& t, Tensor w) const { return w_to_z_net_.forward(t, w)[0]; }

ElboParts DvbfModel::elbo(Tape& t, const Episode& window, RngStream& noise_rng) const {
    const int horizon = static_cast<int>(window.observations.size());
    const int k = config_.initial_window;
    if (horizon < k)
        throw ConfigError("elbo: window length " + std::to_string(horizon) +
                          " is shorter than the initial-encoder window " + std::to_string(k));
    if (static_cast<int>(window.actions.size()) < horizon - 1)
        throw ConfigError("elbo: not enough actions for the window");

    const int nz = config_.latent_dim;
    DiagonalGaussian w1_dist =
        initial_encoder(t, std::span<const std::vector<double>>(window.observations.data(), k));
    Tensor w1 = w1_dist.rsample(noise_rng.normal_vector(nz));
    Tensor z = w_to_z(t, w1);
    Tensor kl_total = w1_dist.kl_to_standard_normal();

    Tensor x0 = t.vector(window.observations[0]);
    Tensor recon_total = log_likelihood(t, x0, z);

    for (int step = 1; step < horizon; ++step) {
        Tensor u = t.vector(window.actions[step - 1]);
        TransitionOut trans = transition(t, z, u);
        Tensor x = t.vector(window.observations[step]);
        FusionResult meas = measurement(t, x);
        FusionResult fused = fuse(t, trans.mu, trans.var_hat, meas.mean, meas.variance);
        FusionResult innov = innovation_noise(t, fused.mean, fused.variance, trans.mu, trans.var);
        Tensor std_w = t.sqrt(innov.variance);
        DiagonalGaussian w_dist{innov.mean, std_w};
        Tensor w = w_dist.rsample(noise_rng.normal_vector(nz));
        z = t.add(trans.mu, t.mul(t.sqrt(trans.var), w));
        recon_total = t.add(recon_total, log_likelihood(t, x, z));
        kl_total = t.add(kl_total, w_dist.kl_to_standard_normal());
    }

    ElboParts parts;
    parts.total = t.sub(recon_total, kl_total);
    parts.reconstruction = recon_total.scalar();
    parts.kl = kl_total.scalar();
    return parts;
}

LatentBelief DvbfModel::init_belief(std::span<const std::vector<double>> first_obs,
                                    RngStream& rng) const {
    Tape t;
    DiagonalGaussian w1 = initial_encoder(t, first_obs);
    Tensor w = w1.rsample(rng.normal_vector(config_.latent_dim));
    Tensor z = w_to_z(t, w);
    LatentBelief b;
    b.z = z.values();
    b.mu_q = z.values();
    b.var_q.assign(config_.latent_dim, 0.0);
    b.mu_w = w1.mean.values();
    b.var_w.resize(config_.latent_dim);
    for (int i = 0; i < config_.latent_dim; ++i) b.var_w[i] = w1.std.values()[i] * w1.std.values()[i];
    return b;
}

LatentBelief DvbfModel::filter_step(const LatentBelief& belief, const std::vector<double>& u,
                                    const std::vector<double>& x_next,
                                    std::span<const double> noise) const {
    Tape t;
    Tensor z = t.vector(belief.z);
    Tensor action = t.vector(u);
    TransitionOut trans = transition(t, z, action);
    FusionResult meas = measurement(t, t.vector(x_next));
    FusionResult fused = fuse(t, trans.mu, trans.var_hat, meas.mean, meas.variance);
    FusionResult innov = innovation_noise(t, fused.mean, fused.variance, trans.mu, trans.var);
    LatentBelief next;
    next.mu_q = fused.mean.values();
    next.var_q = fused.variance.values();
    next.mu_w = innov.mean.values();
    next.var_w = innov.variance.values();
    next.z.resize(config_.latent_dim);
    for (int i = 0; i < config_.latent_dim; ++i) {
        const double w = next.mu_w[i] + std::sqrt(next.var_w[i]) * noise[i];
        next.z[i] = trans.mu.values()[i] + std::sqrt(trans.var.values()[i]) * w;
    }
    return next;
}

std::vector<double> DvbfModel::encode_observation(const std::vector<double>& x) const {
    Tape t;
    return measurement(t, t.vector(x)).mean.values();
}

void DvbfModel::save(const std::string& path) const {
    nlohmann::json meta;
    meta["kind"] = "dvbf";
    meta["obs_dim"] = config_.obs_dim;
    meta["action_dim"] = config_.action_dim;
    meta["latent_dim"] = config_.latent_dim;
    meta["initial_window"] = config_.initial_window;
    meta["hidden_width"] = config_.hidden_width;
    store_.save(path, meta.dump());
}

DvbfModel DvbfModel::load(const std::string& path) {
    DvbfModel m;
    const std::string meta_str = m.store_.load(path);
    const auto meta = nlohmann::json::parse(meta_str);
    if (meta.value("kind", "") != "dvbf")
        throw ValidationError("checkpoint at " + path + " is not a dynamics model");
    m.config_.obs_dim = meta.at("obs_dim");
    m.config_.action_dim = meta.at("action_dim");
    m.config_.latent_dim = meta.at("latent_dim");
    m.config_.initial_window = meta.at("initial_window");
    m.config_.hidden_width = meta.at("hidden_width");
    m.config_.validate();
    m.attach_nets();
    return m;
}

DvbfTrainStats train_dynamics(DvbfModel& model, const TrajectoryDataset& data,
                              const DvbfTrainConfig& config, RngStream rng, std::ostream* log) {
    if (data.episodes.empty()) throw ValidationError("train_dynamics: dataset is empty");
    const int window = std::min(config.bptt_window, data.horizon + 1);
    if (window < model.config().initial_window)
        throw ConfigError("train_dynamics: bptt window shorter than initial-encoder window");

    DvbfTrainStats stats;
    RngStream sample_rng = rng.split("sample");
    RngStream noise_rng = rng.split("noise");
    if (log) *log << "epoch,elbo,reconstruction,kl\n";

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_elbo = 0.0, epoch_recon = 0.0, epoch_kl = 0.0;
        for (int batch = 0; batch < config.batches_per_epoch; ++batch) {
            Tape tape;
            Tensor batch_total = tape.scalar(0.0);
            double recon = 0.0, kl = 0.0;
            for (int b = 0; b < config.batch_size; ++b) {
                const auto& ep = data.episodes[static_cast<std::size_t>(
                    sample_rng.uniform_int(0, static_cast<int>(data.episodes.size()) - 1))];
                const int max_start = static_cast<int>(ep.observations.size()) - window;
                const int start = max_start > 0 ? sample_rng.uniform_int(0, max_start) : 0;
                Episode slice;
                slice.observations.assign(ep.observations.begin() + start,
                                          ep.observations.begin() + start + window);
                slice.actions.assign(ep.actions.begin() + start,
                                     ep.actions.begin() + start + (window - 1));
                ElboParts parts = model.elbo(tape, slice, noise_rng);
                batch_total = tape.add(batch_total, parts.total);
                recon += parts.reconstruction;
                kl += parts.kl;
            }
            Tensor objective = tape.affine(batch_total, 1.0 / config.batch_size, 0.0);
            const double value = objective.scalar();
            if (!std::isfinite(value)) throw NumericError("train_dynamics: ELBO became non-finite");
            tape.backward(objective);
            model.store().collect_grads(tape);
            if (config.grad_clip > 0) model.store().clip_grads(config.grad_clip);
            model.store().ascend(config.learning_rate, config.opt);
            epoch_elbo += value;
            epoch_recon += recon / config.batch_size;
            epoch_kl += kl / config.batch_size;
        }
        epoch_elbo /= config.batches_per_epoch;
        epoch_recon /= config.batches_per_epoch;
        epoch_kl /= config.batches_per_epoch;
        stats.elbo_curve.push_back(epoch_elbo);
        if (log)
            *log << epoch << "," << epoch_elbo << "," << epoch_recon << "," << epoch_kl << "\n";
    }
    return stats;
}

LatentDynamics::LatentDynamics(const DvbfModel& model, std::vector<double> u_max,
                               std::vector<std::vector<double>> initial_pool)
    : model_(&model), initial_pool_(std::move(initial_pool)) {
    if (initial_pool_.empty()) throw ConfigError("LatentDynamics: initial-state pool is empty");
    spec_.name = "latent";
    spec_.state_dim = model.config().latent_dim;
    spec_.obs_dim = model.config().latent_dim;
    spec_.action_dim = model.config().action_dim;
    spec_.u_max = std::move(u_max);
}

Tensor LatentDynamics::step(Tape& t, Tensor state, Tensor action,
                            std::span<const double> noise) const {
    DvbfModel::TransitionOut trans = model_->transition(t, state, action);
    Tensor eps = t.leaf(trans.mu.shape(), std::vector<double>(noise.begin(), noise.end()));
    return t.add(trans.mu, t.mul(t.sqrt(trans.var), eps));
}

std::vector<double> LatentDynamics::reset_state(RngStream& rng) const {
    return initial_pool_[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(initial_pool_.size()) - 1))];
}

}  // namespace empo
