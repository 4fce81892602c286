// SPDX-License-Identifier: Apache-2.0
#include "neurogen/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace ng {

int max_threads() {
    static const int n = [] {
        if (const char* env = std::getenv("NEUROGEN_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        const unsigned hc = std::thread::hardware_concurrency();
        return hc > 0 ? static_cast<int>(hc) : 1;
    }();
    return n;
}

namespace {

// Persistent pool; spawning a thread per kernel call would dominate small ops.
class Pool {
  public:
    explicit Pool(int workers) : stop_(false), job_id_(0) {
        for (int i = 1; i <= workers; ++i) {
            threads_.emplace_back([this, i] { worker_loop(i); });
        }
    }

    ~Pool() {
        {
            std::lock_guard lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
        const int parts = static_cast<int>(threads_.size()) + 1;
        pending_.store(parts - 1, std::memory_order_relaxed);
        {
            std::lock_guard lk(mu_);
            fn_ = &fn;
            n_ = n;
            parts_ = parts;
            ++job_id_;
        }
        cv_.notify_all();
        run_chunk(n, parts, 0, fn);
        std::unique_lock lk(mu_);
        done_cv_.wait(lk, [this] { return pending_.load(std::memory_order_acquire) == 0; });
        fn_ = nullptr;
    }

  private:
    static void run_chunk(std::size_t n, int parts, int idx,
                          const std::function<void(std::size_t, std::size_t)>& fn) {
        const std::size_t chunk = (n + parts - 1) / parts;
        const std::size_t begin = chunk * idx;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin < end) fn(begin, end);
    }

    void worker_loop(int idx) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::size_t, std::size_t)>* fn = nullptr;
            std::size_t n = 0;
            int parts = 0;
            {
                std::unique_lock lk(mu_);
                cv_.wait(lk, [&] { return stop_ || job_id_ != seen; });
                if (stop_) return;
                seen = job_id_;
                fn = fn_;
                n = n_;
                parts = parts_;
            }
            if (fn) run_chunk(n, parts, idx, *fn);
            if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                std::lock_guard lk(mu_);
                done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    bool stop_;
    std::uint64_t job_id_;
    const std::function<void(std::size_t, std::size_t)>* fn_ = nullptr;
    std::size_t n_ = 0;
    int parts_ = 0;
    std::atomic<int> pending_{0};
};

}  // namespace

namespace {
thread_local bool inside_parallel_region = false;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    const int workers = max_threads();
    // Nested or concurrent callers run inline; the pool serves one job at a time.
    if (workers <= 1 || n < 16 || inside_parallel_region) {
        if (n > 0) fn(0, n);
        return;
    }
    static Pool pool(max_threads() - 1);
    static std::mutex run_mu;
    std::unique_lock lk(run_mu, std::try_to_lock);
    if (!lk.owns_lock()) {
        fn(0, n);
        return;
    }
    inside_parallel_region = true;
    pool.run(n, fn);
    inside_parallel_region = false;
}

}  // namespace ng
