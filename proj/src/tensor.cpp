#include "empo/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace empo {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

const Shape& Tensor::shape() const { return tape->shape_of(id); }
const std::vector<double>& Tensor::values() const { return tape->values_of(id); }
const std::vector<double>& Tensor::grad() const { return tape->grad_of(id); }

double Tensor::scalar() const {
    if (size() != 1) throw TensorError("scalar() on tensor of shape " + shape_str(shape()));
    return values()[0];
}

void Tape::check_same_tape(Tensor t) const {
    if (t.tape != this) throw TensorError("tensor belongs to a different tape");
}

Tensor Tape::push(Node node) {
    node.grad.assign(node.values.size(), 0.0);
    nodes_.push_back(std::move(node));
    return Tensor{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) {
    if (numel(shape) != values.size())
        throw TensorError("leaf: shape " + shape_str(shape) + " does not match " +
                          std::to_string(values.size()) + " values");
    Node n;
    n.op = OpKind::leaf;
    n.shape = std::move(shape);
    n.values = std::move(values);
    return push(std::move(n));
}

Tensor Tape::binary_elementwise(OpKind op, Tensor a, Tensor b) {
    check_same_tape(a);
    check_same_tape(b);
    const auto& va = a.values();
    const auto& vb = b.values();
    const bool a_scalar = va.size() == 1;
    const bool b_scalar = vb.size() == 1;
    if (!(a.shape() == b.shape() || a_scalar || b_scalar)) {
        throw TensorError("elementwise op: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
    }
    Node n;
    n.op = op;
    n.shape = a_scalar && !b_scalar ? b.shape() : a.shape();
    n.inputs = {a.id, b.id};
    const std::size_t m = numel(n.shape);
    n.values.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double x = va[a_scalar ? 0 : i];
        const double y = vb[b_scalar ? 0 : i];
        switch (op) {
            case OpKind::add: n.values[i] = x + y; break;
            case OpKind::sub: n.values[i] = x - y; break;
            case OpKind::mul: n.values[i] = x * y; break;
            case OpKind::div:
                if (y == 0.0) throw TensorError("div: division by zero");
                n.values[i] = x / y;
                break;
            default: throw TensorError("not an elementwise op");
        }
    }
    return push(std::move(n));
}

Tensor Tape::add(Tensor a, Tensor b) { return binary_elementwise(OpKind::add, a, b); }
Tensor Tape::sub(Tensor a, Tensor b) { return binary_elementwise(OpKind::sub, a, b); }
Tensor Tape::mul(Tensor a, Tensor b) { return binary_elementwise(OpKind::mul, a, b); }
Tensor Tape::div(Tensor a, Tensor b) { return binary_elementwise(OpKind::div, a, b); }

Tensor Tape::matmul(Tensor a, Tensor b) {
    check_same_tape(a);
    check_same_tape(b);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || (sb.size() != 1 && sb.size() != 2))
        throw TensorError("matmul: unsupported shapes " + shape_str(sa) + " x " + shape_str(sb));
    const int m = sa[0], k = sa[1];
    if (sb[0] != k)
        throw TensorError("matmul: inner dims mismatch " + shape_str(sa) + " x " + shape_str(sb));
    const auto& va = a.values();
    const auto& vb = b.values();
    Node n;
    n.op = OpKind::matmul;
    n.inputs = {a.id, b.id};
    if (sb.size() == 1) {
        n.shape = {m};
        n.values.assign(static_cast<std::size_t>(m), 0.0);
        for (int i = 0; i < m; ++i) {
            double acc = 0.0;
            const double* row = va.data() + static_cast<std::size_t>(i) * k;
            for (int j = 0; j < k; ++j) acc += row[j] * vb[j];
            n.values[i] = acc;
        }
    } else {
        const int p = sb[1];
        n.shape = {m, p};
        n.values.assign(static_cast<std::size_t>(m) * p, 0.0);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j) {
                const double aij = va[static_cast<std::size_t>(i) * k + j];
                for (int c = 0; c < p; ++c)
                    n.values[static_cast<std::size_t>(i) * p + c] += aij * vb[static_cast<std::size_t>(j) * p + c];
            }
    }
    return push(std::move(n));
}

Tensor Tape::unary(OpKind op, Tensor x, const std::function<double(double)>& f) {
    check_same_tape(x);
    Node n;
    n.op = op;
    n.shape = x.shape();
    n.inputs = {x.id};
    const auto& v = x.values();
    n.values.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) n.values[i] = f(v[i]);
    return push(std::move(n));
}

Tensor Tape::tanh(Tensor x) { return unary(OpKind::tanh_, x, [](double v) { return std::tanh(v); }); }
Tensor Tape::sigmoid(Tensor x) {
    return unary(OpKind::sigmoid_, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}
Tensor Tape::relu(Tensor x) { return unary(OpKind::relu_, x, [](double v) { return v > 0.0 ? v : 0.0; }); }
Tensor Tape::exp(Tensor x) { return unary(OpKind::exp_, x, [](double v) { return std::exp(v); }); }
Tensor Tape::ln(Tensor x) {
    return unary(OpKind::ln, x, [](double v) {
        if (v <= 0.0) throw TensorError("ln: argument " + std::to_string(v) + " is not positive");
        return std::log(v);
    });
}
Tensor Tape::sqrt(Tensor x) {
    return unary(OpKind::sqrt_, x, [](double v) {
        if (v < 0.0) throw TensorError("sqrt: negative argument");
        return std::sqrt(v);
    });
}
Tensor Tape::square(Tensor x) { return unary(OpKind::square, x, [](double v) { return v * v; }); }
Tensor Tape::sin(Tensor x) { return unary(OpKind::sin_, x, [](double v) { return std::sin(v); }); }
Tensor Tape::neg(Tensor x) { return unary(OpKind::neg, x, [](double v) { return -v; }); }

Tensor Tape::clamp(Tensor x, double lo, double hi) {
    check_same_tape(x);
    Node n;
    n.op = OpKind::clamp;
    n.shape = x.shape();
    n.inputs = {x.id};
    n.p0 = lo;
    n.p1 = hi;
    const auto& v = x.values();
    n.values.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) n.values[i] = std::min(std::max(v[i], lo), hi);
    return push(std::move(n));
}

Tensor Tape::affine(Tensor x, double scale, double shift) {
    check_same_tape(x);
    Node n;
    n.op = OpKind::affine;
    n.shape = x.shape();
    n.inputs = {x.id};
    n.p0 = scale;
    n.p1 = shift;
    const auto& v = x.values();
    n.values.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) n.values[i] = scale * v[i] + shift;
    return push(std::move(n));
}

Tensor Tape::sum(Tensor x) {
    check_same_tape(x);
    Node n;
    n.op = OpKind::sum;
    n.shape = {};
    n.inputs = {x.id};
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    n.values = {acc};
    return push(std::move(n));
}

Tensor Tape::mean(Tensor x) {
    check_same_tape(x);
    Node n;
    n.op = OpKind::mean;
    n.shape = {};
    n.inputs = {x.id};
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    n.values = {acc / static_cast<double>(x.size())};
    return push(std::move(n));
}

Tensor Tape::concat(std::span<const Tensor> parts) {
    if (parts.empty()) throw TensorError("concat: no inputs");
    Node n;
    n.op = OpKind::concat;
    for (const Tensor& t : parts) {
        check_same_tape(t);
        if (t.shape().size() > 1) throw TensorError("concat: rank > 1 input " + shape_str(t.shape()));
        n.inputs.push_back(t.id);
        const auto& v = t.values();
        n.values.insert(n.values.end(), v.begin(), v.end());
    }
    n.shape = {static_cast<int>(n.values.size())};
    return push(std::move(n));
}

Tensor Tape::concat(Tensor a, Tensor b) {
    const Tensor parts[] = {a, b};
    return concat(std::span<const Tensor>(parts, 2));
}

Tensor Tape::concat(Tensor a, Tensor b, Tensor c) {
    const Tensor parts[] = {a, b, c};
    return concat(std::span<const Tensor>(parts, 3));
}

Tensor Tape::slice(Tensor x, int begin, int len) {
    check_same_tape(x);
    if (x.shape().size() != 1) throw TensorError("slice: expects rank-1 input");
    if (begin < 0 || len < 0 || begin + len > x.shape()[0])
        throw TensorError("slice: range [" + std::to_string(begin) + "," + std::to_string(begin + len) +
                          ") out of bounds for " + shape_str(x.shape()));
    Node n;
    n.op = OpKind::slice;
    n.shape = {len};
    n.inputs = {x.id};
    n.p0 = begin;
    const auto& v = x.values();
    n.values.assign(v.begin() + begin, v.begin() + begin + len);
    return push(std::move(n));
}

void Tape::zero_grads() {
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

std::uint64_t Tape::next_serial() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

void Tape::reset() {
    nodes_.clear();
    leaf_cache_.clear();
    serial_ = next_serial();
}

int Tape::cached_leaf(const void* owner, const std::string& name) const {
    auto it = leaf_cache_.find(owner);
    if (it == leaf_cache_.end()) return -1;
    auto jt = it->second.find(name);
    return jt == it->second.end() ? -1 : jt->second;
}

void Tape::cache_leaf(const void* owner, const std::string& name, int id) {
    leaf_cache_[owner][name] = id;
}

const std::unordered_map<std::string, int>* Tape::leaf_cache(const void* owner) const {
    auto it = leaf_cache_.find(owner);
    return it == leaf_cache_.end() ? nullptr : &it->second;
}

void Tape::backprop_node(Node& node) {
    const auto& g = node.grad;
    switch (node.op) {
        case OpKind::leaf:
            return;
        case OpKind::add:
        case OpKind::sub:
        case OpKind::mul:
        case OpKind::div: {
            Node& a = nodes_[node.inputs[0]];
            Node& b = nodes_[node.inputs[1]];
            const bool a_scalar = a.values.size() == 1;
            const bool b_scalar = b.values.size() == 1;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t ia = a_scalar ? 0 : i;
                const std::size_t ib = b_scalar ? 0 : i;
                switch (node.op) {
                    case OpKind::add:
                        a.grad[ia] += g[i];
                        b.grad[ib] += g[i];
                        break;
                    case OpKind::sub:
                        a.grad[ia] += g[i];
                        b.grad[ib] -= g[i];
                        break;
                    case OpKind::mul:
                        a.grad[ia] += g[i] * b.values[ib];
                        b.grad[ib] += g[i] * a.values[ia];
                        break;
                    case OpKind::div:
                        a.grad[ia] += g[i] / b.values[ib];
                        b.grad[ib] -= g[i] * a.values[ia] / (b.values[ib] * b.values[ib]);
                        break;
                    default: break;
                }
            }
            return;
        }
        case OpKind::matmul: {
            Node& a = nodes_[node.inputs[0]];
            Node& b = nodes_[node.inputs[1]];
            const int m = a.shape[0], k = a.shape[1];
            if (b.shape.size() == 1) {
                for (int i = 0; i < m; ++i) {
                    const double gi = g[i];
                    for (int j = 0; j < k; ++j) {
                        a.grad[static_cast<std::size_t>(i) * k + j] += gi * b.values[j];
                        b.grad[j] += gi * a.values[static_cast<std::size_t>(i) * k + j];
                    }
                }
            } else {
                const int p = b.shape[1];
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < k; ++j) {
                        double acc = 0.0;
                        for (int c = 0; c < p; ++c) {
                            const double gic = g[static_cast<std::size_t>(i) * p + c];
                            acc += gic * b.values[static_cast<std::size_t>(j) * p + c];
                            b.grad[static_cast<std::size_t>(j) * p + c] +=
                                gic * a.values[static_cast<std::size_t>(i) * k + j];
                        }
                        a.grad[static_cast<std::size_t>(i) * k + j] += acc;
                    }
            }
            return;
        }
        case OpKind::tanh_: {
            Node& x = nodes_[node.inputs[0]];
            for (std::size_t i = 0; i < g.size(); ++i)
                x.grad[i] += g[i] * (1.0 - node.values[i] * node.values[i]);
            return;
        }
        case OpKind::sigmoid_: {
            Node& x = nodes_[node.inputs[0]];
            for (std::size_t i = 0; i < g.size(); ++i)
                x.grad[i] += g[i] * node.values[i] * (1.0 - node.values[i]);
            return;
        }
        case OpKind::relu_: {
            Node& x = nodes_[node.inputs[0]];
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x.values[i] > 0.0) x.grad[i] += g[i];
            return;
        }
        case OpKind::exp_: {
            Node& x = nodes_[node.inputs[0]];
            for (std::size_t i = 0; i < g.size(); ++i) x.grad[i] += g[i] * node.values[i];
            return;
        }
        case OpKind::ln: {
            Node& x = nodes_[node.inputs[0]];
            for (std::size_t i = 0; i < g.size(); ++i) x.grad[i] += g[i] / x.values[i];
            return;
        }
        case OpKind::sqrt_: {
            Node& x = nodes_[node.inputs[0]];
            for (std::size_t i = 0; i < g.size(); ++i) x.grad[i] += g[i] * 0.5 / node.values[i];
            return;
        }
        case OpKind::square: {
            Node& x = nodes_[node.inputs[0]];
            for (std::size_t i = 0; i < g.size(); ++i) x.grad[i] += g[i] * 2.0 * x.values[i];
            return;
        }
        case OpKind::sin_: {
            Node& x = nodes_[node.inputs[0]];
            for (std::size_t i = 0; i < g.size(); ++i) x.grad[i] += g[i] * std::cos(x.values[i]);
            return;
        }
        case OpKind::neg: {
            Node& x = nodes_[node.inputs[0]];
            for (std::size_t i = 0; i < g.size(); ++i) x.grad[i] -= g[i];
            return;
        }
        case OpKind::clamp: {
            // Identity inside [lo, hi], zero outside; boundary counts as inside.
            Node& x = nodes_[node.inputs[0]];
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x.values[i] >= node.p0 && x.values[i] <= node.p1) x.grad[i] += g[i];
            return;
        }
        case OpKind::affine: {
            Node& x = nodes_[node.inputs[0]];
            for (std::size_t i = 0; i < g.size(); ++i) x.grad[i] += g[i] * node.p0;
            return;
        }
        case OpKind::sum: {
            Node& x = nodes_[node.inputs[0]];
            for (double& xg : x.grad) xg += g[0];
            return;
        }
        case OpKind::mean: {
            Node& x = nodes_[node.inputs[0]];
            const double scale = 1.0 / static_cast<double>(x.values.size());
            for (double& xg : x.grad) xg += g[0] * scale;
            return;
        }
        case OpKind::concat: {
            std::size_t off = 0;
            for (int in : node.inputs) {
                Node& x = nodes_[in];
                for (std::size_t i = 0; i < x.values.size(); ++i) x.grad[i] += g[off + i];
                off += x.values.size();
            }
            return;
        }
        case OpKind::slice: {
            Node& x = nodes_[node.inputs[0]];
            const auto begin = static_cast<std::size_t>(node.p0);
            for (std::size_t i = 0; i < g.size(); ++i) x.grad[begin + i] += g[i];
            return;
        }
    }
}

void Tape::backward(Tensor root) {
    check_same_tape(root);
    if (root.size() != 1)
        throw TensorError("backward: root must be scalar, got shape " + shape_str(root.shape()));
    nodes_[root.id].grad[0] = 1.0;
    for (int i = root.id; i >= 0; --i) backprop_node(nodes_[i]);
}

double finite_difference_check(const std::function<double(const std::vector<double>&)>& f,
                               const std::function<std::vector<double>(const std::vector<double>&)>& analytic_grad,
                               const std::vector<double>& x, double step) {
    const std::vector<double> g = analytic_grad(x);
    double worst = 0.0;
    std::vector<double> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + step;
        const double fp = f(probe);
        probe[i] = x[i] - step;
        const double fm = f(probe);
        probe[i] = x[i];
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = std::abs(g[i] - numeric) / std::max(1.0, std::abs(g[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

double finite_difference_check(const std::function<Tensor(Tape&, Tensor)>& build,
                               const std::vector<double>& x, double step) {
    auto eval = [&](const std::vector<double>& v) {
        Tape tape;
        Tensor in = tape.vector(v);
        return build(tape, in).scalar();
    };
    auto grad = [&](const std::vector<double>& v) {
        Tape tape;
        Tensor in = tape.vector(v);
        Tensor root = build(tape, in);
        tape.backward(root);
        return in.grad();
    };
    return finite_difference_check(eval, grad, x, step);
}

}  // namespace empo
