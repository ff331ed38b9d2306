#pragma once

#include <bit>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dpa {

// Binary sidecars write integer arrays with memcpy semantics; the formats are
// specified little-endian, so a big-endian host would need byte swapping that
// nothing here implements.
static_assert(std::endian::native == std::endian::little,
              "binary container I/O assumes a little-endian host");

/// FNV-1a 64-bit. Used for content addressing of datasets, plans and model
/// blobs; not a cryptographic hash.
class Fnv1a {
public:
    static constexpr std::uint64_t kOffset = 1469598103934665603ull;
    static constexpr std::uint64_t kPrime = 1099511628211ull;

    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= kPrime;
        }
    }
    void update_u32(std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        update(b, 4);
    }
    void update_u64(std::uint64_t v) {
        update_u32(static_cast<std::uint32_t>(v));
        update_u32(static_cast<std::uint32_t>(v >> 32));
    }
    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = kOffset;
};

std::string hash_hex(std::uint64_t h);

/// Deterministic PRNG (splitmix64). The standard library's distributions and
/// std::shuffle are implementation-defined, so everything that needs
/// reproducible randomness draws from this instead.
class DetRng {
public:
    explicit DetRng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    /// Uniform in [0, n). Modulo bias is irrelevant here; determinism is not.
    std::uint64_t below(std::uint64_t n) { return next() % n; }
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

template <typename T>
void deterministic_shuffle(std::vector<T>& v, DetRng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = rng.below(i);
        std::swap(v[i - 1], v[j]);
    }
}

/// Runs fn(i) for i in [0, n) across `jobs` threads. Each index must write
/// only to its own output slot; results are then independent of scheduling.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

int default_jobs();

}  // namespace dpa
