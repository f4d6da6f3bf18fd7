#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace efshap {

// Thrown for malformed or inconsistent configuration (bad fractions, empty
// grid axes, infeasible perplexity, ...). The message names the offending
// field or JSON path.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when a caller violates an operation contract (shape mismatch,
// unknown feature, width mismatch).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown on filesystem failures; the message carries the file path.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. All randomness in the project flows through this
// generator so that identical seeds give identical results on every platform
// and at every thread count. Integer-only state transitions, no libc rand.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t bounded(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Box-Muller; consumes two uniforms per call.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t poisson(double mean) {
        // Knuth for small means; normal approximation above 30 keeps the
        // loop bounded for large event rates.
        if (mean <= 0.0) return 0;
        if (mean > 30.0) {
            const double v = normal(mean, std::sqrt(mean));
            return v < 0.0 ? 0 : static_cast<std::uint64_t>(v + 0.5);
        }
        const double limit = std::exp(-mean);
        std::uint64_t k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform();
        } while (p > limit);
        return k - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), in ascending order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

private:
    std::uint64_t state_;
};

// Derives an independent stream for a sub-task (per patient, per tree, ...)
// so work can be farmed out without sharing generator state.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

// ---------------------------------------------------------------------------
// FNV-1a 64-bit, used for artifact checksums and catalog fingerprints.
// ---------------------------------------------------------------------------

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string fnv1a_hex(std::string_view bytes);
std::string checksum_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Calendar dates as days since 1970-01-01. ISO 8601 text form.
// ---------------------------------------------------------------------------

using Date = std::int32_t;

Date parse_date(std::string_view iso);      // "YYYY-MM-DD"
std::string format_date(Date days);

// ---------------------------------------------------------------------------
// Number <-> text. Shortest round-trip form, locale independent.
// ---------------------------------------------------------------------------

std::string format_double(double v);
double parse_double(std::string_view s);
std::int64_t parse_int(std::string_view s);

// ---------------------------------------------------------------------------
// Static-chunked parallel for. Each index writes only its own slots, so the
// result is independent of the worker count.
// ---------------------------------------------------------------------------

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

// Resolves a requested worker count: 0 means EFSHAP_THREADS or hardware.
int resolve_threads(int requested);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

}  // namespace efshap
