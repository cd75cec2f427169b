#include "gbmc/philox.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cstdint>
#include <set>

using gbmc::Philox4x32;

using Block = std::array<std::uint32_t, 4>;

TEST(Philox, KnownAnswerZero) {
    EXPECT_EQ(Philox4x32::generate({0, 0, 0, 0}, {0, 0}), (Block{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
}

TEST(Philox, KnownAnswerOnes) {
    EXPECT_EQ(Philox4x32::generate({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
              (Block{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
}

TEST(Philox, KnownAnswerPi) {
    EXPECT_EQ(Philox4x32::generate({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
              (Block{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Philox, SequentialMatchesRandomAccess) {
    Philox4x32 g(0x1234, 77);
    for (std::uint64_t i = 0; i < 16; ++i) {
        const std::uint64_t first = g();
        g();
        EXPECT_EQ(first, Philox4x32::at(0x1234, 77, i));
    }
}

TEST(Philox, StreamsDiffer) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 1000; ++s) seen.insert(Philox4x32(9, s)());
    EXPECT_EQ(seen.size(), 1000u);
}

TEST(Philox, UnitOpenInterval) {
    EXPECT_GT(gbmc::to_unit_open(0), 0.0);
    EXPECT_LT(gbmc::to_unit_open(~std::uint64_t{0}), 1.0);
}
