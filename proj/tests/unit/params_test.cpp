#include "gbmc/params.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace gbmc;

TEST(Derive, SymmetricIdentity) {
    const DerivedConstants d = derive({1, 1, 0, 0, 1, 1});
    EXPECT_DOUBLE_EQ(d.mu, 0.0);
    EXPECT_DOUBLE_EQ(d.sigma_plus, 2.0);
    EXPECT_DOUBLE_EQ(d.sigma_minus, 0.0);
    EXPECT_EQ(d.z0, 0.0);
    EXPECT_TRUE(d.coupled_at_start());
}

TEST(Derive, UnitDriftGap) {
    const DerivedConstants d = derive({2, 1, 0, 1, 1, 1});
    EXPECT_DOUBLE_EQ(d.mu, 1.0);
    EXPECT_DOUBLE_EQ(d.sigma_plus, 2.0);
    EXPECT_DOUBLE_EQ(d.sigma_minus, 0.0);
    EXPECT_DOUBLE_EQ(d.z0, std::log(2.0));
    EXPECT_FALSE(d.swapped);
}

TEST(Derive, SwapsWhenXBelowY) {
    const DerivedConstants d = derive({1, 2, 0, 0, 1, 2});
    EXPECT_TRUE(d.swapped);
    EXPECT_DOUBLE_EQ(d.mu, 1.5);
    EXPECT_DOUBLE_EQ(d.z0, std::log(2.0));
    EXPECT_DOUBLE_EQ(d.sigma_plus, 3.0);
    EXPECT_DOUBLE_EQ(d.sigma_minus, -1.0);
    EXPECT_EQ(d.reduced, swap_roles(ProblemSpec{1, 2, 0, 0, 1, 2}));
}

TEST(Derive, SwapSymmetry) {
    const ProblemSpec p{3, 1.2, 0.3, -0.4, 0.7, 1.9};
    DerivedConstants a = derive(p), b = derive(swap_roles(p));
    EXPECT_NE(a.swapped, b.swapped);
    b.swapped = a.swapped;
    EXPECT_EQ(a, b);
}

TEST(Derive, NegativeVolatilityPair) {
    const DerivedConstants d = derive({2, 1, 0, 0, -1, -2});
    EXPECT_DOUBLE_EQ(d.sigma_plus, -3.0);
    EXPECT_DOUBLE_EQ(d.variance_rate(-1.0), 9.0);
    EXPECT_DOUBLE_EQ(d.variance_rate(1.0), 1.0);
}

TEST(Derive, RejectsInvalid) {
    auto tag_of = [](const ProblemSpec& p) {
        try {
            derive(p);
        } catch (const InputError& e) {
            return e.tag();
        }
        return std::string("none");
    };
    EXPECT_EQ(tag_of({0, 1, 0, 0, 1, 1}), "non_positive_start");
    EXPECT_EQ(tag_of({1, -1, 0, 0, 1, 1}), "non_positive_start");
    EXPECT_EQ(tag_of({1, 1, 0, 0, 1, -1}), "volatility_product_not_positive");
    EXPECT_EQ(tag_of({1, 1, 0, 0, 0, 1}), "volatility_product_not_positive");
    EXPECT_EQ(tag_of({1, 1, std::numeric_limits<double>::quiet_NaN(), 0, 1, 1}), "non_finite_parameter");
}

TEST(Classify, FiniteHorizon) {
    EXPECT_EQ(classify_finite_horizon(derive({2, 1, 0, 1, 1, 1}), Sign::plus, 1.0).verdict, Verdict::suboptimal);
    EXPECT_EQ(classify_finite_horizon(derive({2, 1, 0, -0.5, 1, 1}), Sign::plus, 3.0).verdict, Verdict::optimal);
    const DerivedConstants d = derive({2, 1, 0, 1, 1, 1});
    EXPECT_EQ(classify_finite_horizon(d, Sign::minus, 0.5).verdict, Verdict::optimal);
    EXPECT_EQ(classify_finite_horizon(d, Sign::minus, 1.0).verdict, Verdict::suboptimal);
}

TEST(Classify, BadCase) {
    const DerivedConstants d = derive({2, 1, 0, -0.3, 1, 1});
    EXPECT_TRUE(is_bad_case(d, Sign::minus));
    EXPECT_FALSE(is_bad_case(d, Sign::plus));
    const OptimalityVerdict v = classify_finite_horizon(d, Sign::minus, 1.0);
    EXPECT_EQ(v.verdict, Verdict::degenerate_deterministic);
    EXPECT_EQ(v.reason, "bad_case_tau_infinite");
    EXPECT_TRUE(v.tau_infinite);
    EXPECT_TRUE(v.candidate_optimal());
}

TEST(Classify, RejectsCoupledStartAndBadHorizon) {
    EXPECT_THROW(classify_finite_horizon(derive({1, 1, 0, 0, 1, 1}), Sign::plus, 1.0), InputError);
    EXPECT_THROW(classify_finite_horizon(derive({2, 1, 0, 0, 1, 1}), Sign::plus, 0.0), InputError);
}

TEST(Classify, Stationary) {
    const StationaryVerdict pos = classify_stationary(derive({2, 1, 0, 1, 1, 1}));
    EXPECT_TRUE(pos.zero_for_all_policies);
    EXPECT_EQ(*pos.inf.stationary_value, 0.0);
    EXPECT_EQ(*pos.sup.stationary_value, 0.0);

    const StationaryVerdict z = classify_stationary(derive({1, 1, 0, 0, 1, 1}));
    EXPECT_EQ(*z.inf.stationary_value, 0.0);

    const DerivedConstants d = derive({2, 1, 0, -1, 1, 1});
    const StationaryVerdict neg = classify_stationary(d);
    EXPECT_NEAR(*neg.inf.stationary_value, 1.0 - std::pow(2.0, -0.5), 1e-15);
    EXPECT_EQ(*neg.sup.stationary_value, 1.0);
    EXPECT_TRUE(neg.sup.tau_infinite);
}
