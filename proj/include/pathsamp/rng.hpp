#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace pathsamp {

// Philox4x32-10 counter-based generator. Every draw is a pure function of
// (key, counter), so per-path streams do not depend on evaluation order.
class Philox {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter ctr, Key key) {
        for (int round = 0; round < 10; ++round) {
            ctr = single_round(ctr, key);
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    static Counter single_round(const Counter& c, const Key& k) {
        const std::uint64_t p0 = std::uint64_t{kMul0} * c[0];
        const std::uint64_t p1 = std::uint64_t{kMul1} * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Maps the top 53 bits to (0, 1); zero is excluded so log() is safe.
inline double to_unit_open(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace detail

/// A deterministic random stream identified by (seed, stream id). Draws are
/// addressed by a two-component index, typically (step, slot).
class CounterRng {
public:
    CounterRng() = default;
    CounterRng(std::uint64_t seed, std::uint64_t stream) {
        const std::uint64_t k = detail::splitmix64(seed ^ detail::splitmix64(stream + 0x632BE59BD9B4E019ull));
        key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
        stream_hi_ = static_cast<std::uint32_t>(detail::splitmix64(stream));
    }

    /// Two independent uniforms on (0,1) for the given address.
    std::array<double, 2> uniform2(std::uint64_t a, std::uint64_t b) const {
        const Philox::Counter ctr{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                                  static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32) ^ stream_hi_};
        const auto out = Philox::generate(ctr, key_);
        const std::uint64_t w0 = (std::uint64_t{out[0]} << 32) | out[1];
        const std::uint64_t w1 = (std::uint64_t{out[2]} << 32) | out[3];
        return {detail::to_unit_open(w0), detail::to_unit_open(w1)};
    }

    double uniform(std::uint64_t a, std::uint64_t b) const { return uniform2(a, b)[0]; }

    /// Two independent standard normals (Box-Muller) for the given address.
    std::array<double, 2> normal2(std::uint64_t a, std::uint64_t b) const {
        const auto [u1, u2] = uniform2(a, b);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        return {r * std::cos(theta), r * std::sin(theta)};
    }

    /// Standard normal number `index` of draw group `a`.
    double normal(std::uint64_t a, std::uint64_t index) const { return normal2(a, index / 2)[index % 2]; }

private:
    Philox::Key key_{0, 0};
    std::uint32_t stream_hi_ = 0;
};

/// Sequential view over a CounterRng: each call advances an internal counter.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream) : rng_(seed, stream) {}

    double uniform() { return rng_.uniform(counter_++, 0); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const auto z = rng_.normal2(counter_++, 1);
        spare_ = z[1];
        has_spare_ = true;
        return z[0];
    }

private:
    CounterRng rng_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace pathsamp
