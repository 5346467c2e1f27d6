#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace mvg {

/// Counter-based generator: draw i of a stream is a pure function of
/// (seed, stream name, stream index, i), so results do not depend on the
/// order in which streams are consumed.
class Rng {
public:
    Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0)
        : key_(mix(mix(seed ^ 0x6a09e667f3bcc908ULL) ^ hash(stream)) ^ mix(index + 0x9e3779b97f4a7c15ULL)) {}

    /// Derive an independent child stream.
    Rng split(std::string_view stream, std::uint64_t index = 0) const {
        return Rng(key_, stream, index);
    }

    std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in the open interval (0, 1); safe for log().
    double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    double normal() {
        // Box-Muller, one value per call.
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double gumbel() { return -std::log(-std::log(uniform_open())); }

    std::uint64_t key() const { return key_; }

private:
    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    static constexpr std::uint64_t hash(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace mvg
