#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "empo/distributions.hpp"
#include "empo/errors.hpp"
#include "empo/network.hpp"
#include "empo/rng.hpp"

using namespace empo;

namespace {

MlpSpec gaussian_spec(int in, int hidden, int out, HeadTransform scale = HeadTransform::exp) {
    return MlpSpec{in, {{hidden, Activation::tanh}}, {{out, HeadTransform::identity}, {out, scale}}};
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("same seed produces identical parameters") {
    ParameterStore s1, s2;
    Mlp a(s1, "net", gaussian_spec(2, 8, 1), RngStream(5));
    Mlp b(s2, "net", gaussian_spec(2, 8, 1), RngStream(5));
    for (const auto& [name, p] : s1.params()) CHECK(p.value == s2.param(name).value);
}

TEST_CASE("duplicate prefix is a configuration error") {
    ParameterStore store;
    Mlp a(store, "net", gaussian_spec(2, 4, 1), RngStream(1));
    CHECK_THROWS_AS(Mlp(store, "net", gaussian_spec(2, 4, 1), RngStream(2)), ConfigError);
}

TEST_CASE("initialization respects fan-scaled bounds and zero biases") {
    ParameterStore store;
    Mlp net(store, "net", gaussian_spec(3, 16, 2), RngStream(9));
    const double bound = std::sqrt(6.0 / (3 + 16));
    for (double w : store.param("net/h0/w").value) CHECK(std::abs(w) <= bound);
    for (double b : store.param("net/h0/b").value) CHECK(b == 0.0);
}

TEST_CASE("forward produces a Gaussian and zero weights give unit std") {
    ParameterStore store;
    Mlp net(store, "net", gaussian_spec(2, 4, 3), RngStream(1));
    for (auto& [name, p] : store.params())
        for (double& v : store.param(name).value) v = 0.0;
    Tape t;
    DiagonalGaussian g = net.forward_gaussian(t, t.vector({0.5, -0.5}));
    CHECK(g.mean.values() == std::vector<double>{0.0, 0.0, 0.0});
    CHECK(g.std.values() == std::vector<double>{1.0, 1.0, 1.0});  // exp(0)=1
}

TEST_CASE("square head with zero weights floors the std at sigma_min") {
    ParameterStore store;
    Mlp net(store, "net", gaussian_spec(2, 4, 1, HeadTransform::square), RngStream(1));
    for (auto& [name, p] : store.params())
        for (double& v : store.param(name).value) v = 0.0;
    Tape t;
    DiagonalGaussian g = net.forward_gaussian(t, t.vector({1.0, 2.0}));
    CHECK(g.std.values()[0] == doctest::Approx(kSigmaMin));
}

TEST_CASE("zero-hidden-layer spec is an affine map") {
    ParameterStore store;
    MlpSpec spec{2, {}, {{1, HeadTransform::identity}}};
    Mlp net(store, "aff", spec, RngStream(4));
    store.param("aff/head0/w").value = {2.0, -1.0};
    store.param("aff/head0/b").value = {0.5};
    Tape t;
    CHECK(net.forward(t, t.vector({3.0, 1.0}))[0].values()[0] == doctest::Approx(5.5));
}

TEST_CASE("checkpoint save-load-save is byte-identical") {
    const std::string p1 = "/tmp/empo_test_ckpt_a.bin";
    const std::string p2 = "/tmp/empo_test_ckpt_b.bin";
    ParameterStore store;
    Mlp net(store, "net", gaussian_spec(3, 8, 2), RngStream(17));
    store.set_step_count(42);
    store.save(p1, "{\"kind\":\"test\"}");

    ParameterStore loaded;
    const std::string meta = loaded.load(p1);
    CHECK(meta == "{\"kind\":\"test\"}");
    CHECK(loaded.step_count() == 42);
    loaded.save(p2, meta);
    CHECK(slurp(p1) == slurp(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("plain sgd ascent applies p += lr * grad and clears grads") {
    ParameterStore store;
    store.add("p", {}, {1.0});
    store.param("p").grad = {2.0};
    OptimizerConfig opt;
    opt.mode = OptMode::sgd;
    store.ascend(0.1, opt);
    CHECK(store.param("p").value[0] == doctest::Approx(1.2));
    CHECK(store.param("p").grad[0] == 0.0);

    // zero grads leave parameters unchanged
    store.ascend(0.1, opt);
    CHECK(store.param("p").value[0] == doctest::Approx(1.2));
}

TEST_CASE("two sgd steps on a quadratic match the closed-form iterate") {
    // maximize f(p) = -0.5 p^2 from p0: p_{k+1} = p_k (1 - lr)
    ParameterStore store;
    store.add("p", {}, {4.0});
    OptimizerConfig opt;
    opt.mode = OptMode::sgd;
    for (int k = 0; k < 2; ++k) {
        Tape t;
        Tensor p = store.use(t, "p");
        Tensor f = t.affine(t.square(p), -0.5, 0.0);
        t.backward(f);
        store.collect_grads(t);
        store.ascend(0.1, opt);
    }
    CHECK(store.param("p").value[0] == doctest::Approx(4.0 * 0.9 * 0.9));
}

TEST_CASE("NaN gradient aborts naming the parameter") {
    ParameterStore store;
    store.add("bad/param", {}, {1.0});
    store.param("bad/param").grad = {std::numeric_limits<double>::quiet_NaN()};
    try {
        store.ascend(0.1);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("bad/param") != std::string::npos);
    }
}

TEST_CASE("ascend filter freezes non-matching parameters but clears their grads") {
    ParameterStore store;
    store.add("a", {}, {1.0});
    store.add("b", {}, {1.0});
    store.param("a").grad = {1.0};
    store.param("b").grad = {1.0};
    OptimizerConfig opt;
    opt.mode = OptMode::sgd;
    store.ascend(0.5, opt, [](const std::string& n) { return n == "a"; });
    CHECK(store.param("a").value[0] == doctest::Approx(1.5));
    CHECK(store.param("b").value[0] == doctest::Approx(1.0));
    CHECK(store.param("b").grad[0] == 0.0);
}

TEST_CASE("gradients accumulate across repeated leaf uses in one tape") {
    ParameterStore store;
    store.add("p", {}, {3.0});
    Tape t;
    Tensor p1 = store.use(t, "p");
    Tensor p2 = store.use(t, "p");
    CHECK(p1.id == p2.id);  // memoized leaf
    t.backward(t.add(t.square(p1), p2));  // p^2 + p
    store.collect_grads(t);
    CHECK(store.param("p").grad[0] == doctest::Approx(7.0));
    store.zero_grads();
}

TEST_CASE("end-to-end gradcheck of log density w.r.t. parameters") {
    ParameterStore store;
    Mlp net(store, "net", gaussian_spec(2, 6, 1), RngStream(33));
    const std::vector<double> input = {0.4, -1.1};
    const std::vector<double> target = {0.8};

    const auto value = [&] {
        Tape t;
        DiagonalGaussian g = net.forward_gaussian(t, t.vector(input));
        return g.log_prob(t.vector(target)).scalar();
    };

    Tape t;
    DiagonalGaussian g = net.forward_gaussian(t, t.vector(input));
    t.backward(g.log_prob(t.vector(target)));
    store.collect_grads(t);

    double worst = 0.0;
    for (const auto& [name, p] : store.params()) {
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            auto& param = store.param(name);
            const double saved = param.value[k];
            const double h = 1e-6;
            param.value[k] = saved + h;
            const double up = value();
            param.value[k] = saved - h;
            const double down = value();
            param.value[k] = saved;
            const double fd = (up - down) / (2 * h);
            const double rel = std::abs(p.grad[k] - fd) / std::max(1.0, std::abs(p.grad[k]));
            worst = std::max(worst, rel);
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("adam ascends towards the quadratic maximum") {
    ParameterStore store;
    store.add("p", {}, {4.0});
    for (int k = 0; k < 500; ++k) {
        Tape t;
        Tensor p = store.use(t, "p");
        t.backward(t.affine(t.square(t.sub(p, t.scalar(1.0))), -0.5, 0.0));
        store.collect_grads(t);
        store.ascend(0.05);
    }
    CHECK(store.param("p").value[0] == doctest::Approx(1.0).epsilon(1e-2));
}
