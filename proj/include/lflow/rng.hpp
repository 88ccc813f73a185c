#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "lflow/common.hpp"

namespace lflow {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derive an independent stream seed for a trial index. Retries after a
// discarded trial get a distinct attempt slot so resampling stays unbiased.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t trial,
                                 std::uint64_t attempt = 0) {
    std::uint64_t s = seed ^ (0x632be59bd9b4e019ULL * (trial + 1)) ^
                      (0x9e3779b97f4a7c15ULL * attempt);
    return splitmix64(s);
}

inline std::uint64_t splitmix_combine(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (0x9e3779b97f4a7c15ULL * (b + 1));
    return splitmix64(s);
}

// Seeded Gaussian stream. Box-Muller on top of mt19937_64 so draws are
// reproducible independent of the standard library's normal_distribution.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : eng_(seed) {}

    double uniform() {
        // (0,1]; never returns 0 so log() below is safe
        return (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
    }

    double gauss() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    Vec gauss_vec(int d) {
        Vec v(d);
        for (int i = 0; i < d; ++i) v[i] = gauss();
        return v;
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace lflow
