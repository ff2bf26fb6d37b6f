#include <doctest.h>

#include <cmath>

#include "empo/rng.hpp"

using namespace empo;

TEST_CASE("same seed gives identical sequences") {
    RngStream a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different labels give independent child streams") {
    RngStream root(42);
    RngStream a = root.split("alpha");
    RngStream b = root.split("beta");
    int same = 0;
    for (int i = 0; i < 64; ++i)
        if (a.next_u64() == b.next_u64()) ++same;
    CHECK(same == 0);
}

TEST_CASE("indexed splits are deterministic and distinct") {
    RngStream root(7);
    CHECK(root.split(std::uint64_t{3}).next_u64() == root.split(std::uint64_t{3}).next_u64());
    CHECK(root.split(std::uint64_t{3}).next_u64() != root.split(std::uint64_t{4}).next_u64());
}

TEST_CASE("uniform lies in [0, 1)") {
    RngStream r(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("normal draws have the right first two moments") {
    RngStream r(9);
    const int n = 100000;
    double mean = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        mean += x;
        sq += x * x;
    }
    mean /= n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("uniform_int covers inclusive bounds") {
    RngStream r(11);
    bool lo = false, hi = false;
    for (int i = 0; i < 1000; ++i) {
        const int v = r.uniform_int(2, 5);
        CHECK(v >= 2);
        CHECK(v <= 5);
        lo = lo || v == 2;
        hi = hi || v == 5;
    }
    CHECK(lo);
    CHECK(hi);
}
