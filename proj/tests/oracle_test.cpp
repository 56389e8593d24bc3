#include <gtest/gtest.h>

#include "rulex/oracle.hpp"

using namespace rulex;

namespace {

void expect_pass(const oracle::Report& r) {
    EXPECT_TRUE(r.passed()) << r.name << ": " << r.failures << " failure(s), first: " << r.first_failure;
    EXPECT_GT(r.checks, 0u) << r.name;
}

}  // namespace

TEST(Oracle, GroundingMatchesPathEnumeration) {
    for (std::uint64_t seed : {1u, 2u}) expect_pass(oracle::grounding(seed, 300));
}

TEST(Oracle, PosteriorMatchesIndependentSoftmax) { expect_pass(oracle::posterior(3)); }

TEST(Oracle, GeneratorIsNormalized) {
    expect_pass(oracle::generator_normalization(4));
    expect_pass(oracle::generator_normalization(5, 3, 2));
}

TEST(Oracle, GradientMatchesFiniteDifferences) { expect_pass(oracle::gradient(6)); }

TEST(Oracle, TaylorBound) { expect_pass(oracle::taylor()); }

TEST(Oracle, ScopeSelection) {
    EXPECT_EQ(oracle::run("taylor", 1).size(), 1u);
    EXPECT_THROW(oracle::run("everything", 1), Error);
}

TEST(Oracle, ReportRecordsFailures) {
    oracle::Report r("x");
    EXPECT_FALSE(r.passed());  // no checks yet
    ++r.checks;
    EXPECT_TRUE(r.passed());
    r.fail("first");
    r.fail("second");
    EXPECT_FALSE(r.passed());
    EXPECT_EQ(r.failures, 2u);
    EXPECT_EQ(r.first_failure, "first");
}
