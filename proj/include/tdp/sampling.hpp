#pragma once

#include "tdp/types.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace tdp {

/// Radical-inverse of `index` in the given base (van der Corput sequence).
inline Real radical_inverse(std::uint64_t index, unsigned base) {
    Real inv = 1.0 / static_cast<Real>(base);
    Real scale = inv;
    Real value = 0.0;
    while (index > 0) {
        value += static_cast<Real>(index % base) * scale;
        index /= base;
        scale *= inv;
    }
    return value;
}

/// Point `index` of the Halton sequence in [0,1)^dim, bases 2,3,5,...
inline Vec halton_point(std::uint64_t index, int dim) {
    static const unsigned primes[] = {2,  3,  5,  7,  11, 13, 17, 19,
                                      23, 29, 31, 37, 41, 43, 47, 53};
    Vec p(dim);
    for (int d = 0; d < dim; ++d)
        p[d] = radical_inverse(index + 1, primes[d % 16]);
    return p;
}

/// Uniform double in [0,1) built from the raw engine output; identical on
/// every platform, unlike std::uniform_real_distribution.
inline Real unit_real(std::mt19937_64& gen) {
    return static_cast<Real>(gen() >> 11) * 0x1.0p-53;
}

/// Point of the axis-aligned box [lo, hi] from a uniform source.
inline Vec box_point(const Vec& lo, const Vec& hi, std::mt19937_64& gen) {
    Vec x(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i)
        x[i] = lo[i] + (hi[i] - lo[i]) * unit_real(gen);
    return x;
}

/// Halton point `index` mapped onto the box [lo, hi].
inline Vec box_halton(const Vec& lo, const Vec& hi, std::uint64_t index) {
    Vec u = halton_point(index, static_cast<int>(lo.size()));
    return lo.array() + (hi - lo).array() * u.array();
}

} // namespace tdp
