#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace hodgemc {

// Running mean and centred second moment per component (Welford, merged with Chan's rule).
struct Moments {
    std::int64_t n = 0;
    Eigen::VectorXd mean, m2;

    explicit Moments(int dim = 0) : mean(Eigen::VectorXd::Zero(dim)), m2(Eigen::VectorXd::Zero(dim)) {}
    void add(const Eigen::VectorXd& x);
    void merge(const Moments& o);
    Eigen::VectorXd variance() const;
    Eigen::VectorXd standard_error() const;
};

inline constexpr std::size_t kBlockSize = 256;

int default_workers();

// Runs body(begin, end, acc) over fixed blocks of [0, n) on `workers` threads and merges the
// per-block moments over a fixed pairwise tree, so the result never depends on `workers`.
Moments deterministic_reduce(std::size_t n, int dim, int workers,
                             const std::function<void(std::size_t, std::size_t, Moments&)>& body,
                             std::size_t block = kBlockSize);

// Parallel map over [0, n) writing out[i]; order of evaluation is irrelevant to the result.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body);

}  // namespace hodgemc
