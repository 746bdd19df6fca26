#pragma once

#include <cmath>
#include <cstdint>

#include "peftlab/matrix.hpp"

namespace peftlab {

/// splitmix64 generator. One 64-bit word of state, so streams serialize to a
/// single integer and reproduce exactly from any saved point.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller on two consecutive uniforms.
    /// The second Box-Muller output is discarded to keep the stream position
    /// a simple function of the number of normals drawn.
    double normal() {
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

  private:
    std::uint64_t state_;
};

/// Kaiming normal init, fan-in form: N(0, 2/rows) under the y = x*W convention.
inline Matrix kaiming_init(Rng& rng, std::size_t rows, std::size_t cols) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(rows));
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.normal() * std_dev;
    return m;
}

inline Matrix gaussian_init(Rng& rng, std::size_t rows, std::size_t cols, double std_dev) {
    Matrix m(rows, cols);
    if (std_dev == 0.0) return m;
    for (double& v : m.data) v = rng.normal() * std_dev;
    return m;
}

}  // namespace peftlab
