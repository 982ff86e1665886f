#include "hodgemc/parallel.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace hodgemc {

void Moments::add(const Eigen::VectorXd& x)
{
    if (mean.size() == 0 && n == 0) {
        mean = Eigen::VectorXd::Zero(x.size());
        m2 = Eigen::VectorXd::Zero(x.size());
    }
    ++n;
    const Eigen::VectorXd d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d.cwiseProduct(x - mean);
}

void Moments::merge(const Moments& o)
{
    if (o.n == 0) return;
    if (n == 0) {
        *this = o;
        return;
    }
    const double na = static_cast<double>(n), nb = static_cast<double>(o.n), nt = na + nb;
    const Eigen::VectorXd d = o.mean - mean;
    mean += d * (nb / nt);
    m2 += o.m2 + d.cwiseProduct(d) * (na * nb / nt);
    n += o.n;
}

Eigen::VectorXd Moments::variance() const
{
    if (n < 2) return Eigen::VectorXd::Zero(mean.size());
    return m2 / static_cast<double>(n - 1);
}

Eigen::VectorXd Moments::standard_error() const
{
    if (n < 2) return Eigen::VectorXd::Zero(mean.size());
    return (variance() / static_cast<double>(n)).cwiseSqrt();
}

int default_workers()
{
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace {

void run_indices(std::size_t count, int workers, const std::function<void(std::size_t)>& task)
{
    if (count == 0) return;
    if (workers <= 1 || count == 1) {
        for (std::size_t i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::size_t err_index = count;
    std::exception_ptr err;
    auto loop = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                task(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (i < err_index) {
                    err_index = i;
                    err = std::current_exception();
                }
            }
        }
    };
    const int nthreads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), count));
    std::vector<std::thread> pool;
    pool.reserve(nthreads - 1);
    for (int t = 1; t < nthreads; ++t) pool.emplace_back(loop);
    loop();
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace

Moments deterministic_reduce(std::size_t n, int dim, int workers,
                             const std::function<void(std::size_t, std::size_t, Moments&)>& body,
                             std::size_t block)
{
    const std::size_t nblocks = (n + block - 1) / block;
    std::vector<Moments> parts(nblocks, Moments(dim));
    run_indices(nblocks, workers, [&](std::size_t b) {
        const std::size_t begin = b * block, end = std::min(n, begin + block);
        body(begin, end, parts[b]);
    });
    if (parts.empty()) return Moments(dim);
    while (parts.size() > 1) {
        std::vector<Moments> next((parts.size() + 1) / 2, Moments(dim));
        for (std::size_t i = 0; i < next.size(); ++i) {
            next[i] = parts[2 * i];
            if (2 * i + 1 < parts.size()) next[i].merge(parts[2 * i + 1]);
        }
        parts.swap(next);
    }
    return parts.front();
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body)
{
    run_indices(n, workers, body);
}

}  // namespace hodgemc
