#include "hft/common.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <thread>
#include <vector>

namespace hft {

namespace {

thread_local bool t_in_pool_worker = false;

// A tiny long-lived pool. Work is handed out as contiguous index ranges, one
// per participating worker, so ranges are deterministic for a fixed thread
// count. The calling thread takes slot 0.
class Pool {
public:
    static Pool& instance() {
        static Pool* pool = new Pool();  // leaked: workers must outlive statics
        return *pool;
    }

    void set_size(int n) { size_.store(n < 1 ? 1 : n, std::memory_order_relaxed); }
    int size() const { return size_.load(std::memory_order_relaxed); }

    void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
        if (n <= 0) return;
        const int workers = static_cast<int>(std::min<int64_t>(size(), n));
        if (workers <= 1 || t_in_pool_worker) {
            fn(0, n);
            return;
        }
        std::lock_guard<std::mutex> serial(run_mutex_);
        ensure_workers(workers - 1);
        {
            std::lock_guard<std::mutex> lk(mutex_);
            job_ = &fn;
            job_n_ = n;
            job_workers_ = workers;
            remaining_ = workers - 1;
            ++generation_;
        }
        cv_.notify_all();

        run_slot(fn, n, workers, 0);

        std::unique_lock<std::mutex> done(mutex_);
        done_cv_.wait(done, [&] { return remaining_ == 0; });
        job_ = nullptr;
    }

private:
    Pool() = default;

    static void run_slot(const std::function<void(int64_t, int64_t)>& fn, int64_t n,
                         int workers, int slot) {
        const int64_t chunk = (n + workers - 1) / workers;
        const int64_t begin = slot * chunk;
        const int64_t end = std::min<int64_t>(n, begin + chunk);
        if (begin < end) fn(begin, end);
    }

    void ensure_workers(int n) {
        while (static_cast<int>(threads_.size()) < n) {
            const int id = static_cast<int>(threads_.size());
            threads_.emplace_back([this, id] { worker_loop(id); });
            threads_.back().detach();
        }
    }

    void worker_loop(int id) {
        t_in_pool_worker = true;
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(int64_t, int64_t)>* fn = nullptr;
            int64_t n = 0;
            int workers = 0;
            {
                std::unique_lock<std::mutex> lk(mutex_);
                cv_.wait(lk, [&] { return generation_ != seen; });
                seen = generation_;
                if (job_ != nullptr && id + 1 < job_workers_) {
                    fn = job_;
                    n = job_n_;
                    workers = job_workers_;
                }
            }
            if (fn == nullptr) continue;  // no slot in this job
            run_slot(*fn, n, workers, id + 1);
            {
                std::lock_guard<std::mutex> lk(mutex_);
                --remaining_;
            }
            done_cv_.notify_one();
        }
    }

    std::atomic<int> size_{static_cast<int>(std::max(1u, std::thread::hardware_concurrency()))};

    std::mutex run_mutex_;  // serializes top-level run() calls
    std::vector<std::thread> threads_;

    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(int64_t, int64_t)>* job_ = nullptr;
    int64_t job_n_ = 0;
    int job_workers_ = 0;
    int remaining_ = 0;
    uint64_t generation_ = 0;
};

std::atomic<int> g_log_level{-1};

int env_log_level() {
    const char* v = std::getenv("HFT_LOG");
    if (v == nullptr || *v == '\0') return 1;
    return std::atoi(v);
}

}  // namespace

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    Pool::instance().run(n, fn);
}

void parallel_for_work(int64_t n, int64_t total_work,
                       const std::function<void(int64_t, int64_t)>& fn) {
    constexpr int64_t kMinWork = 1 << 19;
    if (total_work < kMinWork) {
        if (n > 0) fn(0, n);
        return;
    }
    Pool::instance().run(n, fn);
}

void set_threads(int n) { Pool::instance().set_size(n); }

int get_threads() { return Pool::instance().size(); }

int log_level() {
    int lvl = g_log_level.load(std::memory_order_relaxed);
    if (lvl < 0) {
        lvl = env_log_level();
        g_log_level.store(lvl, std::memory_order_relaxed);
    }
    return lvl;
}

void set_log_level(int level) { g_log_level.store(level, std::memory_order_relaxed); }

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[hft] " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[hft:debug] " << msg << "\n";
}

void log_warn(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[hft:warn] " << msg << "\n";
}

}  // namespace hft
