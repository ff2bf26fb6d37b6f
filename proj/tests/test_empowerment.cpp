#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "empo/empowerment.hpp"
#include "empo/env.hpp"
#include "empo/errors.hpp"
#include "empo/rng.hpp"

using namespace empo;

namespace {

EstimatorConfig fixed_source_config(double std_dev, std::vector<MlpSpec::Hidden> hidden = {}) {
    EstimatorConfig c;
    c.fixed_source = true;
    c.fixed_source_std = std_dev;
    c.hidden = std::move(hidden);
    return c;
}

void zero_params(ParameterStore& store) {
    for (auto& [name, p] : store.params())
        for (double& v : store.param(name).value) v = 0.0;
}

// Successor ignores the action entirely: state + noise.
class ActionlessDynamics final : public Dynamics {
public:
    ActionlessDynamics() {
        spec_.name = "actionless";
        spec_.state_dim = 1;
        spec_.obs_dim = 1;
        spec_.action_dim = 1;
        spec_.process_noise_std = 1.0;
    }
    const EnvSpec& spec() const override { return spec_; }
    int noise_dim() const override { return 1; }
    Tensor step(Tape& t, Tensor state, Tensor, std::span<const double> noise) const override {
        return t.add(state, t.vector({noise[0]}));
    }
    std::vector<double> reset_state(RngStream& rng) const override { return {rng.normal()}; }

private:
    EnvSpec spec_;
};

}  // namespace

TEST_CASE("identical source and planner densities give exactly zero samples") {
    LinearGaussianChannel channel(1, 1.0);
    EmpowermentEstimator est(channel, fixed_source_config(1.0), RngStream(1));
    zero_params(est.store());  // planner becomes N(0,1), same as the source
    const MiEstimate e = est.estimate({0.3}, 50, RngStream(2));
    CHECK(e.mean == 0.0);
    CHECK(e.stderr_value == 0.0);
}

TEST_CASE("bound samples are always finite") {
    LinearGaussianChannel channel(1, 0.5);
    EmpowermentEstimator est(channel, fixed_source_config(2.0, {{16, Activation::tanh}}),
                             RngStream(3));
    RngStream rng(4);
    for (int i = 0; i < 200; ++i) {
        Tape t;
        RngStream sample_rng = rng.split(static_cast<std::uint64_t>(i));
        const double v = est.mi_sample(t, t.vector({rng.normal()}), sample_rng).scalar();
        CHECK(std::isfinite(v));
    }
}

TEST_CASE("planner pinned to the analytic posterior recovers the capacity") {
    // s' = s + a + eps with a ~ N(0,1), eps ~ N(0,1): the true posterior is
    // N((s'-s)/2, 1/2) and E[ln p - ln w] is the capacity 0.5 ln 2.
    LinearGaussianChannel channel(1, 1.0);
    EmpowermentEstimator est(channel, fixed_source_config(1.0), RngStream(5));
    est.store().param("q/head0/w").value = {-0.5, 0.5};
    est.store().param("q/head0/b").value = {0.0};
    est.store().param("q/head1/w").value = {0.0, 0.0};
    est.store().param("q/head1/b").value = {std::log(std::sqrt(0.5))};

    const MiEstimate e = est.estimate({0.7}, 20000, RngStream(6));
    const double truth = 0.5 * std::log(2.0);
    CHECK(std::abs(e.mean - truth) < 3 * e.stderr_value + 1e-9);

    // exact posterior -> zero planning gap
    const double gap = est.gap_estimate_linear_gaussian({0.7}, 2000, RngStream(7));
    CHECK(std::abs(gap) < 1e-9);
}

TEST_CASE("standard error shrinks like one over root N") {
    LinearGaussianChannel channel(1, 1.0);
    EmpowermentEstimator est(channel, fixed_source_config(1.0, {{16, Activation::tanh}}),
                             RngStream(8));
    const MiEstimate small = est.estimate({0.0}, 100, RngStream(9));
    const MiEstimate large = est.estimate({0.0}, 10000, RngStream(9));
    const double ratio = small.stderr_value / large.stderr_value;
    CHECK(ratio > 5.0);
    CHECK(ratio < 20.0);
}

TEST_CASE("fewer than two samples cannot report a standard error") {
    LinearGaussianChannel channel(1, 1.0);
    EmpowermentEstimator est(channel, fixed_source_config(1.0), RngStream(10));
    const MiEstimate e = est.estimate({0.0}, 1, RngStream(11));
    CHECK(e.samples == 1);
    CHECK(std::isnan(e.stderr_value));
}

TEST_CASE("training rises towards the analytic capacity and is deterministic") {
    LinearGaussianChannel channel(1, 1.0);
    const auto run = [&] {
        EmpowermentEstimator est(channel,
                                 fixed_source_config(1.0, {{32, Activation::tanh}}),
                                 RngStream(12));
        EmpowermentEstimator::TrainConfig tc;
        tc.iterations = 500;
        tc.states_per_batch = 8;
        tc.samples_per_state = 4;
        tc.train_source = false;
        const auto curve = est.train([](RngStream& r) { return std::vector<double>{r.normal()}; },
                                     tc, RngStream(13));
        const MiEstimate e = est.estimate({0.0}, 4000, RngStream(14));
        return std::make_pair(curve, e.mean);
    };
    const auto [curve, final_mi] = run();
    const double truth = 0.5 * std::log(2.0);
    double early = 0.0, late = 0.0;
    for (int i = 0; i < 20; ++i) early += curve[i] / 20;
    for (int i = 0; i < 20; ++i) late += curve[curve.size() - 1 - i] / 20;
    CHECK(late > early);
    CHECK(std::abs(final_mi - truth) < 0.1);
    CHECK(run().first == curve);
}

TEST_CASE("n-step chain with matched densities collapses to zero") {
    LinearGaussianChannel channel(1, 1.0);
    EstimatorConfig cfg = fixed_source_config(1.0);
    cfg.n_steps = 2;
    EmpowermentEstimator est(channel, cfg, RngStream(15));
    zero_params(est.store());  // every chain factor becomes N(0,1), like the source
    RngStream rng(16);
    for (int i = 0; i < 50; ++i) {
        Tape t;
        RngStream sample_rng = rng.split(static_cast<std::uint64_t>(i));
        CHECK(est.mi_sample(t, t.vector({rng.normal()}), sample_rng).scalar() == 0.0);
    }
}

TEST_CASE("trained two-step bound approaches the analytic two-step capacity") {
    // Two accumulated unit-variance actions against two accumulated unit
    // noise draws: capacity 0.5 ln(1 + 2/2) = 0.5 ln 2.
    LinearGaussianChannel channel(1, 1.0);
    EstimatorConfig cfg = fixed_source_config(1.0, {{32, Activation::tanh}});
    cfg.n_steps = 2;
    EmpowermentEstimator est(channel, cfg, RngStream(17));
    EmpowermentEstimator::TrainConfig tc;
    tc.iterations = 1200;
    tc.states_per_batch = 8;
    tc.samples_per_state = 4;
    tc.train_source = false;
    est.train([](RngStream& r) { return std::vector<double>{r.normal()}; }, tc, RngStream(18));
    const MiEstimate e = est.estimate({0.0}, 8000, RngStream(19));
    const double truth = 0.5 * std::log(2.0);
    CHECK(std::abs(e.mean - truth) < 0.1);
    CHECK(e.mean <= truth + 3 * e.stderr_value);
}

TEST_CASE("gap diagnostics require the analytic channel") {
    PendulumEnv env;
    EstimatorConfig cfg;
    cfg.hidden = {{16, Activation::tanh}};
    EmpowermentEstimator est(env, cfg, RngStream(20));
    CHECK_THROWS_AS(est.gap_estimate_linear_gaussian({0.0, 0.0}, 10, RngStream(21)),
                    UnsupportedError);
}

TEST_CASE("gap is nonnegative for an untrained planner") {
    LinearGaussianChannel channel(1, 1.0);
    EmpowermentEstimator est(channel, fixed_source_config(1.0, {{16, Activation::tanh}}),
                             RngStream(22));
    CHECK(est.gap_estimate_linear_gaussian({0.0}, 2000, RngStream(23)) > 0.0);
}

TEST_CASE("action-independent dynamics give a flat zero landscape") {
    ActionlessDynamics dyn;
    EmpowermentEstimator est(dyn, fixed_source_config(1.0), RngStream(24));
    zero_params(est.store());
    GridSpec grid{-1.0, 1.0, 5, -1.0, 1.0, 1};
    const auto cells = empowerment_landscape(
        est, grid, 32, RngStream(25), [](double c1, double) { return std::vector<double>{c1}; },
        2);
    REQUIRE(cells.size() == 5);
    for (const auto& c : cells) CHECK(c.value == 0.0);
}

TEST_CASE("landscape is deterministic and independent of thread count") {
    LinearGaussianChannel channel(1, 1.0);
    EmpowermentEstimator est(channel, fixed_source_config(1.0, {{16, Activation::tanh}}),
                             RngStream(26));
    GridSpec grid{-1.0, 1.0, 4, -1.0, 1.0, 3};
    const auto state_fn = [](double c1, double) { return std::vector<double>{c1}; };
    const auto a = empowerment_landscape(est, grid, 16, RngStream(27), state_fn, 1);
    const auto b = empowerment_landscape(est, grid, 16, RngStream(27), state_fn, 4);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].value == b[i].value);
        CHECK(a[i].stderr_value == b[i].stderr_value);
    }
}

TEST_CASE("estimator checkpoint round trip preserves estimates") {
    LinearGaussianChannel channel(1, 1.0);
    EmpowermentEstimator est(channel, fixed_source_config(1.0, {{16, Activation::tanh}}),
                             RngStream(28));
    const std::string path = "/tmp/empo_test_est.ckpt";
    est.save(path);
    EmpowermentEstimator back = EmpowermentEstimator::load(channel, path);
    std::remove(path.c_str());
    CHECK(back.config().fixed_source);
    CHECK(back.estimate({0.4}, 64, RngStream(29)).mean ==
          est.estimate({0.4}, 64, RngStream(29)).mean);
}

TEST_CASE("landscape csv export writes a header and one row per cell") {
    std::vector<LandscapeCell> cells = {{0.0, 1.0, 0.5, 0.01}, {2.0, 3.0, 0.7, 0.02}};
    const std::string path = "/tmp/empo_test_landscape.csv";
    save_landscape_csv(cells, path, "theta", "theta_dot");
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    CHECK(line == "theta,theta_dot,empowerment_nats,stderr");
    int rows = 0;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
    std::remove(path.c_str());
}
