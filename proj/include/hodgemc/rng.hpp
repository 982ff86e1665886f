#pragma once

#include <cstdint>
#include <random>

namespace hodgemc {

// Independent stream per (master seed, path index, tag); the tag separates pipelines that
// must not share randomness, equal tags give common random numbers.
class PathRng {
public:
    PathRng(std::uint64_t seed, std::uint64_t index, std::uint32_t tag = 0)
    {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), tag};
        engine_.seed(seq);
    }

    double normal() { return normal_(engine_); }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

}  // namespace hodgemc
