#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "empo/rng.hpp"
#include "empo/tensor.hpp"

using namespace empo;

TEST_CASE("elementary forward values") {
    Tape t;
    CHECK(t.tanh(t.scalar(0.0)).scalar() == 0.0);
    CHECK(t.clamp(t.scalar(3.0), -2.0, 2.0).scalar() == 2.0);
    CHECK(t.exp(t.ln(t.scalar(5.0))).scalar() == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(t.affine(t.scalar(2.0), 3.0, 1.0).scalar() == 7.0);
}

TEST_CASE("backward on simple roots") {
    Tape t;
    Tensor x = t.scalar(3.0);
    t.backward(t.square(x));
    CHECK(x.grad()[0] == doctest::Approx(6.0));

    Tape t2;
    Tensor y = t2.scalar(0.0);
    t2.backward(t2.tanh(y));
    CHECK(y.grad()[0] == doctest::Approx(1.0));
}

TEST_CASE("matmul gradient equals hand chain rule on 2x2") {
    Tape t;
    Tensor w = t.leaf({2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor v = t.vector({5.0, 7.0});
    t.backward(t.sum(t.matmul(w, v)));
    // d sum(Wv)/dW_ij = v_j for every row i.
    CHECK(w.grad() == std::vector<double>{5.0, 7.0, 5.0, 7.0});
    // d sum(Wv)/dv_j = sum_i W_ij.
    CHECK(v.grad() == std::vector<double>{4.0, 6.0});
}

TEST_CASE("fan-out accumulates additively and backward is linear") {
    Tape t;
    Tensor x = t.scalar(2.0);
    Tensor root = t.add(t.square(x), t.mul(x, t.scalar(3.0)));  // x^2 + 3x
    t.backward(root);
    CHECK(x.grad()[0] == doctest::Approx(2.0 * 2.0 + 3.0));
}

TEST_CASE("clamp gradient is identity inside the range, boundary inclusive") {
    const auto grad_at = [](double v) {
        Tape t;
        Tensor x = t.scalar(v);
        t.backward(t.clamp(x, -2.0, 2.0));
        return x.grad()[0];
    };
    CHECK(grad_at(0.5) == 1.0);
    CHECK(grad_at(2.0) == 1.0);
    CHECK(grad_at(-2.0) == 1.0);
    CHECK(grad_at(2.1) == 0.0);
    CHECK(grad_at(-3.0) == 0.0);
}

TEST_CASE("concat and slice round trip with correct gradients") {
    Tape t;
    Tensor a = t.vector({1.0, 2.0});
    Tensor b = t.vector({3.0});
    Tensor c = t.concat(a, b);
    CHECK(c.values() == std::vector<double>{1.0, 2.0, 3.0});
    Tensor mid = t.slice(c, 1, 2);
    CHECK(mid.values() == std::vector<double>{2.0, 3.0});
    t.backward(t.sum(mid));
    CHECK(a.grad() == std::vector<double>{0.0, 1.0});
    CHECK(b.grad() == std::vector<double>{1.0});
}

TEST_CASE("scalar broadcast in elementwise ops") {
    Tape t;
    Tensor v = t.vector({1.0, 2.0, 3.0});
    Tensor s = t.scalar(2.0);
    CHECK(t.mul(v, s).values() == std::vector<double>{2.0, 4.0, 6.0});
    t.backward(t.sum(t.mul(v, s)));
    CHECK(s.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("shape mismatch raises a structured error") {
    Tape t;
    Tensor a = t.vector({1.0, 2.0});
    Tensor b = t.vector({1.0, 2.0, 3.0});
    CHECK_THROWS_AS(t.add(a, b), TensorError);
    CHECK_THROWS_AS(t.backward(a), TensorError);  // non-scalar root
}

TEST_CASE("finite differences on basic functions") {
    const auto sq = [](Tape& t, Tensor x) { return t.sum(t.square(x)); };
    CHECK(finite_difference_check(sq, {3.0}, 1e-6) < 1e-6);
    const auto constant = [](Tape& t, Tensor) { return t.scalar(4.0); };
    CHECK(finite_difference_check(constant, {1.0, 2.0}, 1e-6) == 0.0);
}

TEST_CASE("every op passes gradcheck on 100 random inputs") {
    using Builder = std::function<Tensor(Tape&, Tensor)>;
    const std::vector<std::pair<const char*, Builder>> ops = {
        {"add", [](Tape& t, Tensor x) { return t.sum(t.add(x, t.vector({0.3, -0.7, 1.1}))); }},
        {"sub", [](Tape& t, Tensor x) { return t.sum(t.sub(t.vector({0.3, -0.7, 1.1}), x)); }},
        {"mul", [](Tape& t, Tensor x) { return t.sum(t.mul(x, t.vector({0.5, 2.0, -1.5}))); }},
        {"div", [](Tape& t, Tensor x) { return t.sum(t.div(t.vector({1.0, 2.0, 3.0}),
                                                           t.add(t.square(x), t.scalar(1.0)))); }},
        {"tanh", [](Tape& t, Tensor x) { return t.sum(t.tanh(x)); }},
        {"sigmoid", [](Tape& t, Tensor x) { return t.sum(t.sigmoid(x)); }},
        {"relu", [](Tape& t, Tensor x) { return t.sum(t.relu(x)); }},
        {"exp", [](Tape& t, Tensor x) { return t.sum(t.exp(x)); }},
        {"ln", [](Tape& t, Tensor x) { return t.sum(t.ln(t.add(t.square(x), t.scalar(0.5)))); }},
        {"sqrt", [](Tape& t, Tensor x) { return t.sum(t.sqrt(t.add(t.square(x), t.scalar(0.5)))); }},
        {"square", [](Tape& t, Tensor x) { return t.sum(t.square(x)); }},
        {"sin", [](Tape& t, Tensor x) { return t.sum(t.sin(x)); }},
        {"neg", [](Tape& t, Tensor x) { return t.sum(t.neg(x)); }},
        {"affine", [](Tape& t, Tensor x) { return t.sum(t.affine(x, 2.5, -0.5)); }},
        {"mean", [](Tape& t, Tensor x) { return t.mean(t.square(x)); }},
        {"matmul", [](Tape& t, Tensor x) {
             Tensor w = t.leaf({2, 3}, {0.1, -0.2, 0.3, 0.4, 0.5, -0.6});
             return t.sum(t.tanh(t.matmul(w, x)));
         }},
        {"clamp", [](Tape& t, Tensor x) { return t.sum(t.clamp(x, -10.0, 10.0)); }},
        {"concat-slice", [](Tape& t, Tensor x) {
             return t.sum(t.slice(t.concat(x, t.square(x)), 1, 4));
         }},
    };
    RngStream rng(123);
    for (const auto& [name, build] : ops) {
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            const std::vector<double> x = {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
                                           rng.uniform(-1.5, 1.5)};
            // keep relu inputs away from its kink
            bool near_kink = false;
            for (double v : x) near_kink = near_kink || std::abs(v) < 1e-3;
            if (near_kink) continue;
            worst = std::max(worst, finite_difference_check(build, x, 1e-6));
        }
        INFO("op: " << name);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("composite expression gradcheck") {
    const auto f = [](Tape& t, Tensor x) {
        Tensor a = t.tanh(t.mul(x, t.vector({1.2, -0.8, 0.5})));
        Tensor b = t.exp(t.affine(t.sum(t.square(a)), -0.5, 0.0));
        return t.add(t.mean(a), b);
    };
    RngStream rng(77);
    for (int i = 0; i < 20; ++i) {
        const std::vector<double> x = {rng.normal(), rng.normal(), rng.normal()};
        CHECK(finite_difference_check(f, x, 1e-6) < 1e-4);
    }
}

TEST_CASE("rebuilding the same graph is bit-identical") {
    const auto run = [] {
        Tape t;
        Tensor x = t.vector({0.1, 0.2, 0.3});
        Tensor root = t.sum(t.tanh(t.mul(x, x)));
        t.backward(root);
        return std::make_pair(root.scalar(), x.grad());
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}
