#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace empo {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& s);

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Tape;

// Lightweight handle into a Tape node. Copyable; the tape owns all storage.
struct Tensor {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Shape& shape() const;
    std::size_t size() const { return numel(shape()); }
    const std::vector<double>& values() const;
    const std::vector<double>& grad() const;
    double value(std::size_t i = 0) const { return values()[i]; }
    double scalar() const;
};

enum class OpKind {
    leaf,
    add,
    sub,
    mul,
    div,
    matmul,
    tanh_,
    sigmoid_,
    relu_,
    exp_,
    ln,
    sqrt_,
    square,
    sin_,
    neg,
    clamp,
    affine,  // a*x + b with scalar constants
    sum,
    mean,
    concat,
    slice,
};

// Reverse-mode tape. Single-threaded; one tape per training step.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor leaf(Shape shape, std::vector<double> values);
    Tensor scalar(double v) { return leaf({}, {v}); }
    Tensor vector(std::vector<double> v) {
        Shape s{static_cast<int>(v.size())};
        return leaf(std::move(s), std::move(v));
    }

    Tensor add(Tensor a, Tensor b);
    Tensor sub(Tensor a, Tensor b);
    Tensor mul(Tensor a, Tensor b);
    Tensor div(Tensor a, Tensor b);
    Tensor matmul(Tensor a, Tensor b);
    Tensor tanh(Tensor x);
    Tensor sigmoid(Tensor x);
    Tensor relu(Tensor x);
    Tensor exp(Tensor x);
    Tensor ln(Tensor x);
    Tensor sqrt(Tensor x);
    Tensor square(Tensor x);
    Tensor sin(Tensor x);
    Tensor neg(Tensor x);
    Tensor clamp(Tensor x, double lo, double hi);
    Tensor affine(Tensor x, double scale, double shift);
    Tensor sum(Tensor x);
    Tensor mean(Tensor x);
    Tensor concat(std::span<const Tensor> parts);
    Tensor concat(Tensor a, Tensor b);
    Tensor concat(Tensor a, Tensor b, Tensor c);
    Tensor slice(Tensor x, int begin, int len);

    // Populates grads with d(root)/d(node) for every node; root must be scalar.
    void backward(Tensor root);
    void zero_grads();

    std::size_t num_nodes() const { return nodes_.size(); }
    void reset();

    // Unique identity for leaf memoization; changes on reset().
    std::uint64_t serial() const { return serial_; }

    // Per-tape leaf cache keyed by an owning object (e.g. a parameter store)
    // and a name; lets parameter leaves be shared across uses within one tape
    // while keeping the owning store read-only.
    int cached_leaf(const void* owner, const std::string& name) const;
    void cache_leaf(const void* owner, const std::string& name, int id);
    const std::unordered_map<std::string, int>* leaf_cache(const void* owner) const;

    const Shape& shape_of(int id) const { return nodes_[id].shape; }
    const std::vector<double>& values_of(int id) const { return nodes_[id].values; }
    const std::vector<double>& grad_of(int id) const { return nodes_[id].grad; }

private:
    struct Node {
        OpKind op;
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;
        std::vector<int> inputs;
        double p0 = 0.0;
        double p1 = 0.0;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const void*, std::unordered_map<std::string, int>> leaf_cache_;
    std::uint64_t serial_ = next_serial();

    static std::uint64_t next_serial();

    Tensor push(Node node);
    Tensor binary_elementwise(OpKind op, Tensor a, Tensor b);
    Tensor unary(OpKind op, Tensor x, const std::function<double(double)>& f);
    void check_same_tape(Tensor t) const;
    void backprop_node(Node& node);
};

// Convenience operators; both operands must live on the same tape.
inline Tensor operator+(Tensor a, Tensor b) { return a.tape->add(a, b); }
inline Tensor operator-(Tensor a, Tensor b) { return a.tape->sub(a, b); }
inline Tensor operator*(Tensor a, Tensor b) { return a.tape->mul(a, b); }
inline Tensor operator/(Tensor a, Tensor b) { return a.tape->div(a, b); }
inline Tensor operator-(Tensor a) { return a.tape->neg(a); }

// Max over coordinates of |analytic - central difference| / max(1, |analytic|),
// with the analytic gradient supplied by a full forward+backward at x.
double finite_difference_check(const std::function<double(const std::vector<double>&)>& f,
                               const std::function<std::vector<double>(const std::vector<double>&)>& analytic_grad,
                               const std::vector<double>& x, double step);

// Variant that builds the graph itself: `build` maps a leaf tensor to a scalar root.
double finite_difference_check(const std::function<Tensor(Tape&, Tensor)>& build,
                               const std::vector<double>& x, double step);

}  // namespace empo
