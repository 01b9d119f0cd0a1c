#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace apex {

using Rng = std::mt19937_64;

// Derives an independent stream seed from a base seed and a stream tag
// (splitmix64 finalizer), so that sub-tasks never share generator state.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline Eigen::VectorXd standard_normal(Eigen::Index dim, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal(rng);
    return v;
}

inline double uniform(double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    return u(rng);
}

}  // namespace apex
