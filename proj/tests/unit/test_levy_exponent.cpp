#include "tcfpt/levy_exponent.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace tcfpt;

namespace {

// Lambda(dr) = e^{-r} dr: psi_jump(l) = 1/(1+l) - 1 + l (1 - 2/e).
double exp_density_jump_part(double l) { return 1.0 / (1.0 + l) - 1.0 + l * (1.0 - 2.0 / std::exp(1.0)); }

LevyExponent exp_density_psi(double drift, double gaussian) {
    return LevyExponent(drift, gaussian, {}, JumpDensity{[](double r) { return std::exp(-r); }, -1.0});
}

}  // namespace

TEST(LevyExponent, BrownianIsHalfSquare) {
    const auto psi = LevyExponent::brownian();
    for (double l : {0.0, 0.25, 1.0, 3.0, 1e3}) EXPECT_DOUBLE_EQ(psi(l), 0.5 * l * l);
}

TEST(LevyExponent, DriftAndGaussianPart) {
    const LevyExponent psi(-1.0, 2.0);  // l^2 - l
    EXPECT_DOUBLE_EQ(psi(1.0), 0.0);
    EXPECT_DOUBLE_EQ(psi(3.0), 6.0);
    EXPECT_LT(psi(0.5), 0.0);
}

TEST(LevyExponent, JumpAtomKernelMatchesDirectFormula) {
    const LevyExponent psi(0.3, 0.0, {{0.5, 2.0}, {2.0, 0.7}});
    for (double l : {0.01, 0.5, 1.0, 4.0, 50.0}) {
        const long double a = 2.0L * (std::exp(-0.5L * l) - 1.0L + 0.5L * l);
        const long double b = 0.7L * (std::exp(-2.0L * l) - 1.0L);
        const double oracle = static_cast<double>(0.3L * l + a + b);
        EXPECT_NEAR(psi(l), oracle, 1e-14 * std::max(1.0, std::abs(oracle)));
    }
}

TEST(LevyExponent, CompensatedKernelSmallArgument) {
    for (double x : {1e-12, 1e-8, 1e-4, 5e-3, 2e-2, 0.3, 0.49}) {
        long double term = 1.0L;
        long double oracle = 0.0L;
        for (int k = 1; k < 40; ++k) {
            term *= -static_cast<long double>(x) / k;
            if (k >= 2) oracle += term;
        }
        EXPECT_NEAR(detail::compensated_exp(x), static_cast<double>(oracle), 4e-16 * static_cast<double>(oracle));
    }
}

TEST(LevyExponent, DensityQuadratureMatchesClosedForm) {
    const auto psi = exp_density_psi(0.5, 1.0);
    for (double l : {0.1, 1.0, 7.0, 40.0}) {
        const double oracle = 0.5 * l + 0.5 * l * l + exp_density_jump_part(l);
        EXPECT_NEAR(psi(l), oracle, 1e-9 * std::abs(oracle));
    }
}

TEST(LevyExponent, InfiniteActivityDensity) {
    // Lambda(dr) = r^{-3/2} dr on (0, 1]: jump part = int_0^1 (e^{-lr} - 1 + lr) r^{-3/2} dr
    const LevyExponent psi(0.0, 0.0, {}, JumpDensity{[](double r) { return std::pow(r, -1.5); }, 0.5, 1.0});
    // series oracle: sum_{k>=2} (-l)^k / k! * int_0^1 r^{k-3/2} dr = sum (-l)^k / (k! (k - 1/2))
    const double l = 2.0;
    long double s = 0.0L;
    long double term = 1.0L;
    for (int k = 1; k < 60; ++k) {
        term *= -l / k;
        if (k >= 2) s += term / (k - 0.5L);
    }
    EXPECT_NEAR(psi(l), static_cast<double>(s), 1e-9);
}

TEST(LevyExponent, RejectsInvalidTriplets) {
    EXPECT_THROW(LevyExponent(0.0, -1.0), DomainError);
    EXPECT_THROW(LevyExponent(std::nan(""), 1.0), DomainError);
    EXPECT_THROW(LevyExponent(0.0, 1.0, {{-1.0, 1.0}}), DomainError);
    EXPECT_THROW(LevyExponent(0.0, 1.0, {{1.0, 0.0}}), DomainError);
    EXPECT_THROW(LevyExponent(0.0, 1.0, {}, JumpDensity{[](double) { return 1.0; }, 2.0}), DomainError);
    EXPECT_THROW((void)LevyExponent::brownian()(-1.0), DomainError);
}

TEST(LevyExponent, QuadratureFailureIsReported) {
    // claims an integrable singularity but is not integrable at 0
    const LevyExponent psi(0.0, 1.0, {}, JumpDensity{[](double r) { return std::pow(r, -3.5); }, 1.5, 1.0});
    EXPECT_THROW((void)psi(1.0), NumericalError);
}

TEST(PsiInverse, ExactBenchmarks) {
    const auto bm = LevyExponent::brownian();
    EXPECT_EQ(psi_inverse(bm, 0.0), 0.0);
    EXPECT_EQ(psi_inverse(bm, 0.5), 1.0);
    EXPECT_EQ(psi_inverse(bm, 2.0), 2.0);
    EXPECT_EQ(psi_inverse(LevyExponent(-1.0, 2.0), 0.0), 1.0);
}

TEST(PsiInverse, InvertsOnRandomInputs) {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int i = 0; i < 50; ++i) {
        const LevyExponent psi(2.0 * U(gen) - 1.0, 0.1 + 2.0 * U(gen), {{0.2 + 2.0 * U(gen), U(gen) + 0.1}});
        const double u = 10.0 * U(gen);
        const double s = psi_inverse(psi, u);
        EXPECT_LE(psi(s), u + 1e-12 * std::max(1.0, u));
        EXPECT_NEAR(psi(s), u, 1e-9 * std::max(1.0, u));
    }
}

TEST(PsiInverse, ErrorsNameTheBracket) {
    EXPECT_THROW(psi_inverse(LevyExponent::brownian(), -1.0), DomainError);
    try {
        psi_inverse(LevyExponent(1e-30, 0.0), 1e10);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("lambda_max"), std::string::npos);
    }
}

TEST(Esscher, BrownianWithKilling) {
    const auto tilted = esscher(LevyExponent::brownian(), 2.0);  // l^2 / 2 + 2 l
    EXPECT_DOUBLE_EQ(tilted.drift(), 2.0);
    EXPECT_DOUBLE_EQ(tilted.gaussian(), 1.0);
    EXPECT_EQ(tilted(0.0), 0.0);
    EXPECT_EQ(psi_inverse(tilted, 0.0), 0.0);
}

TEST(Esscher, MatchesShiftedExponentWithJumps) {
    const LevyExponent psi(-1.5, 0.8, {{0.4, 1.2}, {1.7, 0.6}},
                           JumpDensity{[](double r) { return 0.7 * std::exp(-2.0 * r); }, -1.0});
    for (double p : {0.0, 0.3, 2.0}) {
        const double b = psi_inverse(psi, p);
        const auto t = esscher(psi, p);
        for (double l : {0.05, 0.5, 2.0, 10.0}) {
            const double direct = psi(b + l) - p;
            EXPECT_NEAR(t(l), direct, 1e-9 * std::max(1.0, std::abs(direct))) << "p=" << p << " l=" << l;
        }
        EXPECT_TRUE(explosion_safe(t, 0.0));
    }
}

TEST(Esscher, IdentityWhenBaseIsZero) {
    const LevyExponent psi(0.2, 1.0, {{0.5, 1.0}});
    const auto t = esscher(psi, 0.0);
    EXPECT_EQ(t.drift(), psi.drift());
    EXPECT_EQ(t(1.3), psi(1.3));
}

TEST(ExplosionSafe, Cases) {
    EXPECT_TRUE(explosion_safe(LevyExponent::brownian(), 0.0));
    EXPECT_FALSE(explosion_safe(LevyExponent(-1.0, 2.0), 0.0));
    EXPECT_TRUE(explosion_safe(LevyExponent(-1.0, 2.0), 0.1));
}

TEST(ValidateExponent, AcceptsAndRejects) {
    EXPECT_NO_THROW(validate_exponent(LevyExponent::brownian()));
    EXPECT_NO_THROW(validate_exponent(LevyExponent(1.0, 0.0, {{1.0, 1.0}})));
    EXPECT_NO_THROW(validate_exponent(exp_density_psi(-0.5, 0.0 + 1e-3)));
    // negative drift without diffusion or jumps is a (deterministic) subordinator
    EXPECT_THROW(validate_exponent(LevyExponent(-1.0, 0.0)), DomainError);
    const auto c = check_exponent(LevyExponent(0.0, 2.0, {{0.3, 4.0}}));
    EXPECT_TRUE(c.zero_at_origin);
    EXPECT_TRUE(c.convex);
    EXPECT_TRUE(c.unbounded);
}
