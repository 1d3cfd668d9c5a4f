#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace hft {

/// Deterministic random stream. Wraps std::mt19937_64 (whose output sequence
/// is fully specified by the standard) and converts draws manually, so the
/// same seed yields bit-identical values on every platform and compiler.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Requires n > 0.
    uint64_t uniform_index(uint64_t n) {
        return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    int uniform_int(int lo, int hi) {  // inclusive range
        return lo + static_cast<int>(uniform_index(static_cast<uint64_t>(hi - lo + 1)));
    }

    /// Standard normal via Box-Muller (no cached second value, so the
    /// draw sequence is easy to reason about).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
};

/// Worker-pool parallel loop. Splits [0, n) into contiguous ranges, one per
/// worker; ranges are deterministic for a fixed thread count so results do
/// not depend on scheduling. fn(begin, end) must write disjoint memory.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

/// Like parallel_for, but runs inline when the total work estimate (rough
/// flop count) is too small to amortize the pool handshake.
void parallel_for_work(int64_t n, int64_t total_work,
                       const std::function<void(int64_t, int64_t)>& fn);

/// Caps the worker pool (1 = serial). Defaults to hardware concurrency.
void set_threads(int n);
int get_threads();

// --- logging -------------------------------------------------------------
// Verbosity from HFT_LOG: 0 silent, 1 info (default), 2 debug. Everything
// goes to stderr; stdout stays machine-readable.

int log_level();
void set_log_level(int level);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);
void log_warn(const std::string& msg);

}  // namespace hft
