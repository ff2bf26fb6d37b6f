#pragma once

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "empo/distributions.hpp"
#include "empo/errors.hpp"
#include "empo/rng.hpp"
#include "empo/tensor.hpp"

namespace empo {

enum class Activation { tanh, relu, sigmoid };
enum class HeadTransform { identity, exp, square };

Activation activation_from_string(const std::string& s);
HeadTransform head_transform_from_string(const std::string& s);
std::string to_string(Activation a);
std::string to_string(HeadTransform t);

struct MlpSpec {
    struct Hidden {
        int width;
        Activation act;
    };
    struct Head {
        int dim;
        HeadTransform transform;
    };

    int input_dim = 0;
    std::vector<Hidden> hidden;
    std::vector<Head> heads;

    void validate() const;
};

enum class OptMode { adam, sgd };

struct OptimizerConfig {
    OptMode mode = OptMode::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named parameter tensors plus optimizer state. Parameters are exposed to a
// tape as leaf tensors, memoized per tape so every forward within one training
// step shares the same leaf (gradients accumulate across uses).
class ParameterStore {
public:
    struct Param {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        std::vector<double> adam_m;
        std::vector<double> adam_v;
    };

    void add(const std::string& name, Shape shape, std::vector<double> init);
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    Param& param(const std::string& name);
    const Param& param(const std::string& name) const;
    const std::map<std::string, Param>& params() const { return params_; }

    // Exposes a parameter as a leaf on the tape, memoized per tape so repeated
    // uses share one leaf. Read-only on the store; safe for concurrent
    // evaluation with per-thread tapes.
    Tensor use(Tape& tape, const std::string& name) const;

    // Pulls leaf gradients from `tape` into Param::grad (additive).
    void collect_grads(const Tape& tape);
    void zero_grads();

    // Gradient-ascent update; clears grads. Throws NumericError on NaN grads.
    // The optional filter restricts the update to matching parameter names
    // (non-matching grads are cleared without an update).
    void ascend(double learning_rate, const OptimizerConfig& opt = {},
                const std::function<bool(const std::string&)>& filter = {});

    double grad_norm() const;

    // Rescales all gradients so their global norm does not exceed `max_norm`.
    void clip_grads(double max_norm);

    long step_count() const { return step_count_; }
    void set_step_count(long t) { step_count_ = t; }

    void save(const std::string& path, const std::string& metadata_json) const;
    // Returns the metadata string stored alongside the arrays.
    std::string load(const std::string& path);

private:
    std::map<std::string, Param> params_;
    long step_count_ = 0;
};

// Feed-forward net with one or more output heads, all parameters living in a
// shared ParameterStore under a unique name prefix.
class Mlp {
public:
    Mlp() = default;
    // Registers freshly initialized parameters (fan-scaled uniform weights,
    // zero biases). Throws ConfigError if the prefix is already taken.
    Mlp(ParameterStore& store, std::string prefix, MlpSpec spec, RngStream rng);
    // Attaches to already-loaded parameters.
    static Mlp attach(ParameterStore& store, std::string prefix, MlpSpec spec);

    const MlpSpec& spec() const { return spec_; }
    const std::string& prefix() const { return prefix_; }

    // Re-points the net at a store that was moved; owners must call this from
    // their move operations.
    void rebind(ParameterStore& store) { store_ = &store; }

    // Raw head outputs with transforms applied (no sigma floor).
    std::vector<Tensor> forward(Tape& tape, Tensor input) const;

    // Requires heads {identity d, exp d} or {identity d, square d}; applies
    // the sigma_min floor to the scale head.
    DiagonalGaussian forward_gaussian(Tape& tape, Tensor input) const;

private:
    ParameterStore* store_ = nullptr;
    std::string prefix_;
    MlpSpec spec_;
};

// Floors a std tensor at kSigmaMin.
Tensor floor_std(Tape& tape, Tensor std);
// Converts a variance tensor to a floored std tensor.
Tensor variance_to_std(Tape& tape, Tensor var);

}  // namespace empo
