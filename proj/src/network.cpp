#include "empo/network.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

namespace empo {

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    throw ConfigError("unknown activation '" + s + "'");
}

HeadTransform head_transform_from_string(const std::string& s) {
    if (s == "identity") return HeadTransform::identity;
    if (s == "exp") return HeadTransform::exp;
    if (s == "square") return HeadTransform::square;
    throw ConfigError("unknown head transform '" + s + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
    }
    return "?";
}

std::string to_string(HeadTransform t) {
    switch (t) {
        case HeadTransform::identity: return "identity";
        case HeadTransform::exp: return "exp";
        case HeadTransform::square: return "square";
    }
    return "?";
}

void MlpSpec::validate() const {
    if (input_dim < 1) throw ConfigError("MlpSpec: input_dim must be >= 1");
    for (const auto& h : hidden)
        if (h.width < 1) throw ConfigError("MlpSpec: hidden width must be >= 1");
    if (heads.empty()) throw ConfigError("MlpSpec: at least one head required");
    for (const auto& h : heads)
        if (h.dim < 1) throw ConfigError("MlpSpec: head dim must be >= 1");
}

void ParameterStore::add(const std::string& name, Shape shape, std::vector<double> init) {
    if (params_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    if (numel(shape) != init.size())
        throw ConfigError("parameter '" + name + "': init size does not match shape");
    Param p;
    p.shape = std::move(shape);
    p.value = std::move(init);
    p.grad.assign(p.value.size(), 0.0);
    p.adam_m.assign(p.value.size(), 0.0);
    p.adam_v.assign(p.value.size(), 0.0);
    params_.emplace(name, std::move(p));
}

ParameterStore::Param& ParameterStore::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
}

const ParameterStore::Param& ParameterStore::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
}

Tensor ParameterStore::use(Tape& tape, const std::string& name) const {
    const int cached = tape.cached_leaf(this, name);
    if (cached >= 0) return Tensor{&tape, cached};
    const Param& p = param(name);
    Tensor t = tape.leaf(p.shape, p.value);
    tape.cache_leaf(this, name, t.id);
    return t;
}

void ParameterStore::collect_grads(const Tape& tape) {
    const auto* cache = tape.leaf_cache(this);
    if (cache == nullptr) return;
    for (const auto& [name, id] : *cache) {
        Param& p = params_.at(name);
        const auto& g = tape.grad_of(id);
        for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
    }
}

void ParameterStore::zero_grads() {
    for (auto& [name, p] : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

double ParameterStore::grad_norm() const {
    double acc = 0.0;
    for (const auto& [name, p] : params_)
        for (double g : p.grad) acc += g * g;
    return std::sqrt(acc);
}

void ParameterStore::clip_grads(double max_norm) {
    const double norm = grad_norm();
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    for (auto& [name, p] : params_)
        for (double& g : p.grad) g *= scale;
}

void ParameterStore::ascend(double learning_rate, const OptimizerConfig& opt,
                            const std::function<bool(const std::string&)>& filter) {
    for (auto& [name, p] : params_)
        for (double g : p.grad)
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
    ++step_count_;
    for (auto& [name, p] : params_) {
        if (filter && !filter(name)) {
            std::fill(p.grad.begin(), p.grad.end(), 0.0);
            continue;
        }
        if (opt.mode == OptMode::sgd) {
            for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] += learning_rate * p.grad[i];
        } else {
            const double b1t = 1.0 - std::pow(opt.beta1, static_cast<double>(step_count_));
            const double b2t = 1.0 - std::pow(opt.beta2, static_cast<double>(step_count_));
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                p.adam_m[i] = opt.beta1 * p.adam_m[i] + (1.0 - opt.beta1) * p.grad[i];
                p.adam_v[i] = opt.beta2 * p.adam_v[i] + (1.0 - opt.beta2) * p.grad[i] * p.grad[i];
                const double mhat = p.adam_m[i] / b1t;
                const double vhat = p.adam_v[i] / b2t;
                p.value[i] += learning_rate * mhat / (std::sqrt(vhat) + opt.eps);
            }
        }
        std::fill(p.grad.begin(), p.grad.end(), 0.0);
    }
}

namespace {

constexpr char kMagic[8] = {'E', 'M', 'P', 'O', 'C', 'K', 'P', '1'};

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void write_doubles(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

void read_doubles(std::istream& is, std::vector<double>& v) {
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

}  // namespace

void ParameterStore::save(const std::string& path, const std::string& metadata_json) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ValidationError("cannot open checkpoint file for writing: " + path);
    os.write(kMagic, 8);
    write_u64(os, static_cast<std::uint64_t>(step_count_));
    write_u64(os, metadata_json.size());
    os.write(metadata_json.data(), static_cast<std::streamsize>(metadata_json.size()));
    write_u64(os, params_.size());
    for (const auto& [name, p] : params_) {
        write_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(os, p.shape.size());
        for (int d : p.shape) write_u64(os, static_cast<std::uint64_t>(d));
        write_doubles(os, p.value);
        write_doubles(os, p.adam_m);
        write_doubles(os, p.adam_v);
    }
    if (!os) throw ValidationError("write failure on checkpoint file: " + path);
}

std::string ParameterStore::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open checkpoint file: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw ValidationError("not a checkpoint file (bad header): " + path);
    params_.clear();
    step_count_ = static_cast<long>(read_u64(is));
    std::string metadata(read_u64(is), '\0');
    is.read(metadata.data(), static_cast<std::streamsize>(metadata.size()));
    const std::uint64_t n = read_u64(is);
    for (std::uint64_t k = 0; k < n; ++k) {
        std::string name(read_u64(is), '\0');
        is.read(name.data(), static_cast<std::streamsize>(name.size()));
        Shape shape(read_u64(is));
        for (auto& d : shape) d = static_cast<int>(read_u64(is));
        Param p;
        p.shape = shape;
        p.value.assign(numel(shape), 0.0);
        p.adam_m.assign(numel(shape), 0.0);
        p.adam_v.assign(numel(shape), 0.0);
        p.grad.assign(numel(shape), 0.0);
        read_doubles(is, p.value);
        read_doubles(is, p.adam_m);
        read_doubles(is, p.adam_v);
        params_.emplace(std::move(name), std::move(p));
    }
    if (!is) throw ValidationError("truncated checkpoint file: " + path);
    return metadata;
}

Mlp::Mlp(ParameterStore& store, std::string prefix, MlpSpec spec, RngStream rng)
    : store_(&store), prefix_(std::move(prefix)), spec_(std::move(spec)) {
    spec_.validate();
    int fan_in = spec_.input_dim;
    auto init_layer = [&](const std::string& name, int out_dim) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + out_dim));
        std::vector<double> w(static_cast<std::size_t>(out_dim) * fan_in);
        for (auto& x : w) x = rng.uniform(-bound, bound);
        store.add(prefix_ + "/" + name + "/w", {out_dim, fan_in}, std::move(w));
        store.add(prefix_ + "/" + name + "/b", {out_dim}, std::vector<double>(out_dim, 0.0));
    };
    for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
        init_layer("h" + std::to_string(l), spec_.hidden[l].width);
        fan_in = spec_.hidden[l].width;
    }
    for (std::size_t h = 0; h < spec_.heads.size(); ++h) init_layer("head" + std::to_string(h), spec_.heads[h].dim);
}

Mlp Mlp::attach(ParameterStore& store, std::string prefix, MlpSpec spec) {
    spec.validate();
    Mlp net;
    net.store_ = &store;
    net.prefix_ = std::move(prefix);
    net.spec_ = std::move(spec);
    if (!store.has(net.prefix_ + "/head0/w"))
        throw ConfigError("no parameters found under prefix '" + net.prefix_ + "'");
    return net;
}

std::vector<Tensor> Mlp::forward(Tape& tape, Tensor input) const {
    if (input.shape().size() != 1 || input.shape()[0] != spec_.input_dim)
        throw TensorError("Mlp '" + prefix_ + "': input shape " + shape_str(input.shape()) +
                          ", expected [" + std::to_string(spec_.input_dim) + "]");
    Tensor x = input;
    for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
        const std::string base = prefix_ + "/h" + std::to_string(l);
        Tensor z = tape.add(tape.matmul(store_->use(tape, base + "/w"), x), store_->use(tape, base + "/b"));
        switch (spec_.hidden[l].act) {
            case Activation::tanh: x = tape.tanh(z); break;
            case Activation::relu: x = tape.relu(z); break;
            case Activation::sigmoid: x = tape.sigmoid(z); break;
        }
    }
    std::vector<Tensor> outs;
    outs.reserve(spec_.heads.size());
    for (std::size_t h = 0; h < spec_.heads.size(); ++h) {
        const std::string base = prefix_ + "/head" + std::to_string(h);
        Tensor z = tape.add(tape.matmul(store_->use(tape, base + "/w"), x), store_->use(tape, base + "/b"));
        switch (spec_.heads[h].transform) {
            case HeadTransform::identity: break;
            case HeadTransform::exp: z = tape.exp(z); break;
            case HeadTransform::square: z = tape.square(z); break;
        }
        outs.push_back(z);
    }
    return outs;
}

DiagonalGaussian Mlp::forward_gaussian(Tape& tape, Tensor input) const {
    if (spec_.heads.size() != 2 || spec_.heads[0].transform != HeadTransform::identity ||
        spec_.heads[0].dim != spec_.heads[1].dim)
        throw ConfigError("Mlp '" + prefix_ + "': forward_gaussian needs heads {identity d, exp|square d}");
    auto outs = forward(tape, input);
    Tensor mean = outs[0];
    Tensor std;
    switch (spec_.heads[1].transform) {
        case HeadTransform::exp: std = floor_std(tape, outs[1]); break;
        case HeadTransform::square: std = variance_to_std(tape, outs[1]); break;
        default: throw ConfigError("Mlp '" + prefix_ + "': scale head must be exp or square");
    }
    return DiagonalGaussian{mean, std};
}

Tensor floor_std(Tape& tape, Tensor std) {
    return tape.clamp(std, kSigmaMin, std::numeric_limits<double>::infinity());
}

Tensor variance_to_std(Tape& tape, Tensor var) {
    return tape.sqrt(tape.clamp(var, kSigmaMin * kSigmaMin, std::numeric_limits<double>::infinity()));
}

}  // namespace empo
