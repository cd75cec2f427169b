#include "gbmc/analytic.hpp"
#include "gbmc/simulate.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>

using namespace gbmc;

namespace {
const double kLog2 = std::log(2.0);

bool bit_identical(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}
}  // namespace

TEST(SimConfig, Validation) {
    EXPECT_THROW(validate(SimConfig{0, 1e-3, 1.0, 1, true}), InputError);
    EXPECT_THROW(validate(SimConfig{10, 0.0, 1.0, 1, true}), InputError);
    EXPECT_THROW(validate(SimConfig{10, 1e-3, -1.0, 1, true}), InputError);
}

TEST(Simulate, CoupledStartHitsAtZero) {
    const Outcomes o = simulate_tau(derive({1, 1, 0, 0.3, 1, 2}), Mirror{}, {100, 1e-2, 1.0, 1, true});
    for (double t : o.hit_times) EXPECT_EQ(t, 0.0);
    EXPECT_EQ(estimate_survival(o, 1.0).mean, 0.0);
    EXPECT_EQ(estimate_survival(o, 1.0).std_error, 0.0);
    EXPECT_EQ(estimate_laplace(o, 2.0).lower.mean, 1.0);
    EXPECT_EQ(estimate_laplace(o, 2.0).upper.mean, 1.0);
}

TEST(Simulate, DeterministicSynchronous) {
    const DerivedConstants d = derive({2, 1, 0, 1, 1, 1});
    const Outcomes o = simulate_tau(d, Synchronous{}, {1000, 1e-2, 2.0, 1, true});
    for (double t : o.hit_times) EXPECT_DOUBLE_EQ(t, kLog2);
    EXPECT_EQ(estimate_survival(o, 0.5).mean, 1.0);
    EXPECT_EQ(estimate_survival(o, 1.0).mean, 0.0);
}

TEST(Simulate, BadCaseNeverCouples) {
    const Outcomes o = simulate_tau(derive({2, 1, 0, -0.5, 1, 1}), Synchronous{}, {500, 1e-2, 3.0, 1, true});
    for (double t : o.hit_times) EXPECT_EQ(t, kInf);
}

TEST(Simulate, MirrorZeroDriftMatchesClosedForm) {
    const DerivedConstants d = derive({2, 1, 0, 0, 1, 1});
    const Outcomes o = simulate_tau(d, Mirror{}, {100000, 1e-3, 1.0, 17, true});
    const Estimate s = estimate_survival(o, 1.0);
    EXPECT_NEAR(s.mean, phi(d, 1.0, Sign::plus), 3.0 * s.std_error);
    EXPECT_NEAR(phi(d, 1.0, Sign::plus), 0.2711, 1e-4);
}

TEST(Simulate, BridgeCorrectionRemovesCoarseStepBias) {
    const DerivedConstants d = derive({2, 1, 0, 0, 1, 1});
    const double exact = phi(d, 1.0, Sign::plus);
    const Estimate bridged = estimate_survival(simulate_tau(d, Mirror{}, {50000, 0.05, 1.0, 5, true}), 1.0);
    const Estimate raw = estimate_survival(simulate_tau(d, Mirror{}, {50000, 0.05, 1.0, 5, false}), 1.0);
    EXPECT_NEAR(bridged.mean, exact, 3.0 * bridged.std_error);
    EXPECT_GT(raw.mean - exact, 5.0 * raw.std_error);
}

TEST(Simulate, WorkerCountDoesNotChangeOutcomes) {
    const DerivedConstants d = derive({2, 1, 0.1, 0.3, 0.8, 1.5});
    const SimConfig cfg{5000, 5e-3, 2.0, 99, true};
    const Switching sw{{0.8, 0.5, 0.3, 0.2}, -1.0, 1.0};
    const Outcomes one = simulate_tau(d, sw, cfg, 1);
    for (unsigned w : {2u, 4u, 16u}) EXPECT_TRUE(bit_identical(one.hit_times, simulate_tau(d, sw, cfg, w).hit_times));
}

TEST(Simulate, SeedChangesOutcomes) {
    const DerivedConstants d = derive({2, 1, 0, 0, 1, 1});
    const Outcomes a = simulate_tau(d, Mirror{}, {2000, 1e-2, 1.0, 1, true});
    const Outcomes b = simulate_tau(d, Mirror{}, {2000, 1e-2, 1.0, 2, true});
    EXPECT_FALSE(bit_identical(a.hit_times, b.hit_times));
}

TEST(Simulate, RejectsInvalidPolicy) {
    EXPECT_THROW(simulate_tau(derive({2, 1, 0, 0, 1, 1}), Constant{1.5}, {10, 1e-2, 1.0, 1, true}), InputError);
}

TEST(Estimate, MergeIsAssociative) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(1.0, 2.0);
    std::vector<double> xs(3000);
    for (double& x : xs) x = n(rng);
    auto part = [&](std::size_t lo, std::size_t hi) {
        return Estimate::from_samples(EstimateKind::laplace, std::span<const double>(xs.data() + lo, hi - lo));
    };
    const Estimate a = part(0, 700), b = part(700, 1900), c = part(1900, 3000);
    const Estimate left = merge(merge(a, b), c), right = merge(a, merge(b, c));
    const Estimate all = Estimate::from_samples(EstimateKind::laplace, xs);
    EXPECT_NEAR(left.mean, right.mean, 1e-14);
    EXPECT_NEAR(left.m2, right.m2, 1e-9);
    EXPECT_NEAR(left.mean, all.mean, 1e-13);
    EXPECT_NEAR(left.std_error, all.std_error, 1e-13);
    EXPECT_EQ(left.n, 3000u);
    EXPECT_THROW(merge(a, Estimate::from_samples(EstimateKind::survival, xs)), InputError);
}

TEST(Estimate, SurvivalCurveMatchesPointwise) {
    const Outcomes o = simulate_tau(derive({2, 1, 0, 0, 1, 1}), Mirror{}, {3000, 1e-2, 2.0, 3, true});
    const std::vector<double> times{0.1, 0.5, 2.0};
    const auto curve = survival_curve(o, times);
    for (std::size_t i = 0; i < times.size(); ++i) EXPECT_EQ(curve[i].mean, estimate_survival(o, times[i]).mean);
    EXPECT_THROW(estimate_survival(o, 3.0), InputError);
}

TEST(Estimate, LaplaceBracketContainsClosedForm) {
    const DerivedConstants d = derive({2, 1, 0, 0, 1, 1});
    const Outcomes o = simulate_tau(d, Mirror{}, {50000, 5e-3, 25.0, 8, true});
    const LaplaceBracket b = estimate_laplace(o, 2.0, 1e-3);
    EXPECT_TRUE(b.contains(0.5));
    EXPECT_LE(b.lower.mean, b.upper.mean);
    EXPECT_FALSE(b.horizon_too_short);
    EXPECT_TRUE(estimate_laplace(o, 0.01, 1e-3).horizon_too_short);
}

TEST(Estimate, MirrorDominatesSynchronousDiscounted) {
    const DerivedConstants d = derive({2, 1, 0, 0, 1, 2});
    const SimConfig cfg{20000, 5e-3, 15.0, 21, true};
    const Outcomes m = simulate_tau(d, Mirror{}, cfg), s = simulate_tau(d, Synchronous{}, cfg);
    const Estimate diff = paired_difference(m, s, [](double t) { return t == kInf ? 0.0 : std::exp(-t); });
    EXPECT_GT(diff.mean, -3.0 * diff.std_error);
}

TEST(Estimate, ErgodicLimits) {
    const DerivedConstants d = derive({2, 1, 0, -1, 1, 1});
    const Outcomes o = simulate_tau(d, Mirror{}, {20000, 1e-2, 50.0, 12, true});
    const ErgodicEstimate e = estimate_ergodic(o, std::vector<double>{10, 20, 30, 40, 50});
    const double limit = TailFunction(d, Sign::plus).limit(d.z0);
    EXPECT_NEAR(e.at_horizon.mean, limit, 3.0 * e.at_horizon.std_error);
    EXPECT_GE(e.time_average, e.at_horizon.mean);

    const DerivedConstants pos = derive({2, 1, 0, 1, 1, 1});
    const Outcomes p = simulate_tau(pos, Constant{0.3}, {5000, 1e-2, 50.0, 13, true});
    EXPECT_LT(estimate_ergodic(p, std::vector<double>{}).at_horizon.mean, 1e-3);
}

TEST(Tail, GridIsGeometric) {
    const auto g = tail_grid(16.0, 3);
    ASSERT_EQ(g.size(), 3u);
    EXPECT_DOUBLE_EQ(g[0], 4.0);
    EXPECT_DOUBLE_EQ(g[1], 8.0);
    EXPECT_DOUBLE_EQ(g[2], 16.0);
}

TEST(Tail, MirrorRateNearTheory) {
    const DerivedConstants d = derive({2, 1, 0, 1, 1, 1});
    const TailFit f = tail_rate_regression(d, Mirror{}, tail_grid(160.0), {100000, 0.05, 1.0, 31, true});
    EXPECT_FALSE(f.insufficient_data);
    EXPECT_NEAR(f.rate, -0.125, 0.0125);
    EXPECT_LE(f.band_lo, f.rate);
    EXPECT_GE(f.band_hi, f.rate);
}

TEST(Tail, DeterministicCutoffIsMinusInfinity) {
    const DerivedConstants d = derive({2, 1, 0, 1, 1, 1});
    const TailFit f = tail_rate_regression(d, Synchronous{}, tail_grid(8 * kLog2), {1000, 0.05, 1.0, 1, true});
    EXPECT_TRUE(f.insufficient_data);
    EXPECT_EQ(f.rate, -kInf);
}

TEST(HitTimes, RoundTrip) {
    const Outcomes o = simulate_tau(derive({2, 1, 0, -1, 1, 1}), Mirror{}, {500, 1e-2, 1.0, 2, true});
    const auto path = std::filesystem::temp_directory_path() / "gbmc_hit_times_test.bin";
    write_hit_times(path.string(), o);
    EXPECT_TRUE(bit_identical(read_hit_times(path.string()), o.hit_times));
    std::filesystem::remove(path);
}
