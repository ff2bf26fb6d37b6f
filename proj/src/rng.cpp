#include "empo/rng.hpp"

#include <cmath>

namespace empo {

namespace {

// splitmix64 step
std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t hash_label(const std::string& label) {
    // FNV-1a
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

RngStream RngStream::split(const std::string& label) const {
    return RngStream(mix(state_ ^ hash_label(label)));
}

RngStream RngStream::split(std::uint64_t index) const {
    return RngStream(mix(state_ ^ mix(index + 1)));
}

std::uint64_t RngStream::next_u64() {
    state_ = mix(state_);
    return state_;
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * M_PI * u2;
    spare_ = r * std::sin(phi);
    has_spare_ = true;
    return r * std::cos(phi);
}

std::vector<double> RngStream::normal_vector(std::size_t n) {
    std::vector<double> out(n);
    for (auto& v : out) v = normal();
    return out;
}

int RngStream::uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<int>(next_u64() % span);
}

}  // namespace empo
