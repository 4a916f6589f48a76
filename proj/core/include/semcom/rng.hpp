#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "semcom/hashing.hpp"

namespace semcom {

// Deterministic random stream. Gaussian variates use the Marsaglia polar
// method so results do not depend on the standard library's distribution
// internals, only on mt19937_64 itself.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform in [0, n)
    int uniform_int(int n) {
        return static_cast<int>((static_cast<unsigned __int128>(engine_()) *
                                 static_cast<unsigned __int128>(n)) >> 64);
    }

    std::uint64_t bits() { return engine_(); }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// All randomness in an experiment flows from one master seed through named
// sub-streams, so each component (channel, diffusion, data order, ...) is
// independently reproducible.
class RngPool {
public:
    explicit RngPool(std::uint64_t master) : master_(master) {}

    RandomStream stream(std::string_view name) const {
        return RandomStream(splitmix64(master_ ^ fnv1a64(name)));
    }

    // Indexed sub-stream, e.g. one per evaluation sample.
    RandomStream stream(std::string_view name, std::uint64_t index) const {
        return RandomStream(splitmix64(splitmix64(master_ ^ fnv1a64(name)) + index));
    }

    std::uint64_t master() const { return master_; }

private:
    std::uint64_t master_;
};

} // namespace semcom
