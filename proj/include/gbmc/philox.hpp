#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
// A stream is fully determined by its 64-bit key and 64-bit stream id, so each
// Monte Carlo path can own an independent generator without shared state.

#include <array>
#include <cstdint>
#include <limits>

namespace gbmc {

class Philox4x32 {
public:
    using result_type = std::uint64_t;

    Philox4x32(std::uint64_t key, std::uint64_t stream)
        : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
          counter_{0, 0, static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)} {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        if (used_ == 2) {
            block_ = generate(counter_, key_);
            increment();
            used_ = 0;
        }
        const std::size_t i = 2 * used_++;
        return static_cast<result_type>(block_[i]) | (static_cast<result_type>(block_[i + 1]) << 32);
    }

    /// Random access: 64 bits for block `index` of `stream`, without constructing a generator.
    static result_type at(std::uint64_t key, std::uint64_t stream, std::uint64_t index) {
        const auto b = generate({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                                 static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)},
                                {static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)});
        return static_cast<result_type>(b[0]) | (static_cast<result_type>(b[1]) << 32);
    }

    /// One 128-bit block for an explicit counter; exposed for known-answer tests.
    static std::array<std::uint32_t, 4> generate(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
        std::uint32_t c0 = ctr[0], c1 = ctr[1], c2 = ctr[2], c3 = ctr[3];
        std::uint32_t k0 = key[0], k1 = key[1];
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c0;
            const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c2;
            c0 = static_cast<std::uint32_t>(p1 >> 32) ^ c1 ^ k0;
            c2 = static_cast<std::uint32_t>(p0 >> 32) ^ c3 ^ k1;
            c1 = static_cast<std::uint32_t>(p1);
            c3 = static_cast<std::uint32_t>(p0);
            k0 += kW0;
            k1 += kW1;
        }
        return {c0, c1, c2, c3};
    }

private:
    static constexpr std::uint32_t kM0 = 0xD2511F53;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57;
    static constexpr std::uint32_t kW0 = 0x9E3779B9;
    static constexpr std::uint32_t kW1 = 0xBB67AE85;

    void increment() {
        if (++counter_[0] == 0) ++counter_[1];
    }

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> counter_;
    std::array<std::uint32_t, 4> block_{};
    std::size_t used_ = 2;
};

/// Uniform double in (0, 1) from the top 52 bits.
inline double to_unit_open(std::uint64_t bits) {
    return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

}  // namespace gbmc
