#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace empo {

// Deterministic counter-based RNG stream. Streams are derived from a master
// seed plus a label so that independent components (data, init, rollout, MC)
// never share a sequence. Normal draws use hand-rolled Box-Muller to keep
// sequences identical across standard-library implementations.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    // Split off an independent child stream identified by a label.
    RngStream split(const std::string& label) const;
    RngStream split(std::uint64_t index) const;

    std::uint64_t next_u64();

    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    // Standard normal draw.
    double normal();
    std::vector<double> normal_vector(std::size_t n);

    int uniform_int(int lo, int hi);  // inclusive bounds

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace empo
