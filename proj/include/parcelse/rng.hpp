#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace parcelse {

// Independent perturbation sources. Each gets its own substream so that
// switching one source off leaves the draws of every other source intact
// (common random numbers across paired bootstrap runs).
enum class Stream : std::uint64_t {
    resample = 1,
    reference = 2,
    location = 3,
    landcover = 4,
    predictor = 5,
    synth = 6,
    split = 7,
};

// Hash a master seed and a key path into a 64-bit engine seed (splitmix64
// finalizer chained over the keys).
std::uint64_t mix_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys);

inline std::uint64_t key(Stream s) { return static_cast<std::uint64_t>(s); }

// mt19937_64 with portable uniform/normal transforms, so sequences are the
// same across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    Rng(std::uint64_t master, std::initializer_list<std::uint64_t> keys)
        : engine_(mix_seed(master, keys)) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer on [0, n).
    std::size_t index(std::size_t n);

    bool coin() { return (engine_() >> 63) != 0; }

    // Standard normal (Marsaglia polar method).
    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace parcelse
