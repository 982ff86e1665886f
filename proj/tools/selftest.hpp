#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>

namespace hodgemc::cli {

struct SelftestOptions {
    std::string level = "quick";  // quick | full
    double n_divisor = 1.0;       // full: Monte Carlo path counts are divided by this
    bool tampered = false;        // swap in the tampered-Christoffel fixture for the Bianchi check
    int workers = 1;
    std::uint64_t seed = 20240611;
};

struct SelftestResult {
    nlohmann::json report;  // one entry per check with value, oracle, tolerance and verdict
    int failed = 0;
};

SelftestResult run_selftest(const SelftestOptions& opts);

}  // namespace hodgemc::cli
