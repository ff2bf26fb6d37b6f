#include <doctest.h>

#include <cmath>
#include <vector>

#include "empo/distributions.hpp"
#include "empo/rng.hpp"
#include "empo/tensor.hpp"

using namespace empo;

namespace {
DiagonalGaussian make(Tape& t, std::vector<double> mean, std::vector<double> std) {
    return {t.vector(std::move(mean)), t.vector(std::move(std))};
}
}  // namespace

TEST_CASE("rsample is the affine reparametrization") {
    Tape t;
    auto g = make(t, {0.0}, {1.0});
    const double n0 = 0.0;
    CHECK(g.rsample(std::span<const double>(&n0, 1)).values()[0] == 0.0);

    auto g2 = make(t, {2.0}, {3.0});
    const double n1 = 1.0;
    CHECK(g2.rsample(std::span<const double>(&n1, 1)).values()[0] == doctest::Approx(5.0));

    // gradient of the sample w.r.t. std at noise=1 is 1
    Tape t2;
    Tensor mean = t2.vector({2.0});
    Tensor std = t2.vector({3.0});
    DiagonalGaussian g3{mean, std};
    t2.backward(t2.sum(g3.rsample(std::span<const double>(&n1, 1))));
    CHECK(std.grad()[0] == doctest::Approx(1.0));
    CHECK(mean.grad()[0] == doctest::Approx(1.0));
}

TEST_CASE("log_prob matches the closed form") {
    Tape t;
    auto g = make(t, {0.0}, {1.0});
    CHECK(g.log_prob(t.vector({0.0})).scalar() == doctest::Approx(-0.91893853320467274).epsilon(1e-12));
    CHECK(g.log_prob(t.vector({1.0})).scalar() == doctest::Approx(-1.41893853320467274).epsilon(1e-12));

    auto g2 = make(t, {0.0, 0.0}, {1.0, 1.0});
    CHECK(g2.log_prob(t.vector({0.0, 0.0})).scalar() ==
          doctest::Approx(-1.83787706640934548).epsilon(1e-12));
}

TEST_CASE("log_prob integrates to one on a 1-D grid") {
    Tape t;
    auto g = make(t, {0.3}, {0.7});
    double mass = 0.0;
    const double dx = 1e-3;
    for (double x = -6.0; x <= 6.0; x += dx)
        mass += std::exp(g.log_prob(t.vector({x})).scalar()) * dx;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("kl to standard normal closed-form values") {
    Tape t;
    CHECK(make(t, {0.0}, {1.0}).kl_to_standard_normal().scalar() == doctest::Approx(0.0));
    CHECK(make(t, {1.0}, {1.0}).kl_to_standard_normal().scalar() == doctest::Approx(0.5));
    CHECK(make(t, {0.0}, {2.0}).kl_to_standard_normal().scalar() ==
          doctest::Approx(0.5 * (4.0 - 1.0 - std::log(4.0))).epsilon(1e-12));
}

TEST_CASE("kl is nonnegative with equality only at the prior") {
    Tape t;
    RngStream rng(3);
    for (int i = 0; i < 50; ++i) {
        auto g = make(t, {rng.normal()}, {std::exp(0.5 * rng.normal())});
        CHECK(g.kl_to_standard_normal().scalar() >= -1e-15);
    }
    CHECK(make(t, {0.0, 0.0}, {1.0, 1.0}).kl_to_standard_normal().scalar() < 1e-12);
}

TEST_CASE("kl_to agrees with the standard-normal special case") {
    Tape t;
    auto g = make(t, {0.7}, {1.3});
    auto prior = make(t, {0.0}, {1.0});
    CHECK(g.kl_to(prior).scalar() ==
          doctest::Approx(g.kl_to_standard_normal().scalar()).epsilon(1e-12));
    CHECK(g.kl_to(g).scalar() == doctest::Approx(0.0));
}

TEST_CASE("squash saturates at the bounds") {
    Tape t;
    const std::vector<double> u_max = {2.0};
    CHECK(squash(t.vector({0.0}), u_max).action.values()[0] == 0.0);
    CHECK(squash(t.vector({100.0}), u_max).action.values()[0] == doctest::Approx(2.0));
    const std::vector<double> unit = {1.0};
    CHECK(squash(t.vector({1.0}), unit).action.values()[0] ==
          doctest::Approx(std::tanh(1.0)).epsilon(1e-12));
    CHECK_THROWS(squash(t.vector({1.0}), std::vector<double>{-1.0}));
}

TEST_CASE("rsample empirical moments match parameters") {
    Tape t;
    auto g = make(t, {0.4}, {1.7});
    RngStream rng(8);
    const int n = 100000;
    double mean = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        const double x = g.rsample(std::span<const double>(&z, 1)).values()[0];
        mean += x;
        sq += x * x;
    }
    mean /= n;
    const double sd = std::sqrt(sq / n - mean * mean);
    CHECK(std::abs(mean - 0.4) < 3 * 1.7 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(sd - 1.7) < 0.02);
}

TEST_CASE("log-ratio is invariant to the squash change of variables") {
    // ln q(pre) - ln w(pre) equals ln q~(a) - ln w~(a) because the shared
    // tanh Jacobian cancels; verified by adding the Jacobian to both sides.
    Tape t;
    auto w = make(t, {0.1}, {0.8});
    auto q = make(t, {-0.3}, {1.4});
    const double pre = 0.6;
    const double ratio_pre =
        q.log_prob(t.vector({pre})).scalar() - w.log_prob(t.vector({pre})).scalar();
    const double log_jac = std::log(2.0) + std::log1p(-std::tanh(pre) * std::tanh(pre));
    const double ratio_action = (q.log_prob(t.vector({pre})).scalar() - log_jac) -
                                (w.log_prob(t.vector({pre})).scalar() - log_jac);
    CHECK(ratio_pre == doctest::Approx(ratio_action).epsilon(1e-12));
}

TEST_CASE("log_prob and kl gradcheck") {
    const auto f = [](Tape& t, Tensor x) {
        Tensor mean = t.slice(x, 0, 1);
        Tensor std = t.exp(t.slice(x, 1, 1));
        DiagonalGaussian g{mean, std};
        return t.add(g.log_prob(t.vector({0.37})), g.kl_to_standard_normal());
    };
    RngStream rng(21);
    for (int i = 0; i < 20; ++i) {
        CHECK(finite_difference_check(f, {rng.normal(), 0.3 * rng.normal()}, 1e-6) < 1e-4);
    }
}
