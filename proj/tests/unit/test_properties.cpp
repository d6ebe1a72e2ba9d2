// Randomized property checks over generated models.

#include "tcfpt/cm_test.hpp"
#include "tcfpt/scale_solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace tcfpt;

namespace {

struct Gen {
    std::mt19937_64 eng;
    explicit Gen(std::uint64_t seed) : eng(seed) {}
    double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(eng); }
    int integer(int a, int b) { return std::uniform_int_distribution<int>(a, b)(eng); }

    LevyExponent psi() {
        std::vector<JumpAtom> atoms;
        for (int i = integer(0, 2); i > 0; --i) atoms.push_back({uniform(0.1, 2.0), uniform(0.1, 2.0)});
        return LevyExponent(uniform(-1.0, 1.0), uniform(0.2, 2.0), std::move(atoms));
    }

    MeasureRepr lattice_gamma(double alpha) {
        MeasureRepr g;
        const int n = integer(1, 3);
        for (int k = 1; k <= n; ++k)
            if (k == 1 || uniform(0.0, 1.0) < 0.7) g.add_atom(alpha * k, uniform(0.1, 2.0));
        return g;
    }

    ModelSpec lattice_model() {
        ModelSpec m;
        m.psi = psi();
        m.killing = uniform(0.0, 1.0) < 0.5 ? 0.0 : uniform(0.0, 2.0);
        m.gamma = lattice_gamma(uniform(0.0, 1.0) < 0.5 ? 0.5 : 1.0);
        return m;
    }
};

constexpr int kCases = 40;

}  // namespace

TEST(Properties, CarrierAndMonotonicity) {
    Gen g(101);
    for (int c = 0; c < kCases; ++c) {
        const auto m = g.lattice_model();
        const double q = g.uniform(0.1, 3.0);
        const auto s = lattice_mq_to_tolerance(m, q, 0.0);
        ASSERT_TRUE(carrier_ok(s)) << "case " << c;
        double prev = 1.0;
        for (int i = 1; i <= 20; ++i) {
            const double v = fptd_laplace(s, 0.2 * i, 0.0);
            EXPECT_GT(v, 0.0);
            EXPECT_LE(v, prev * (1.0 + 1e-14));
            prev = v;
        }
        // nondecreasing in l toward 1
        double prev_l = 0.0;
        for (int i = 0; i <= 10; ++i) {
            const double v = fptd_laplace(s, 2.0, 0.2 * i);
            EXPECT_GE(v, prev_l * (1.0 - 1e-14));
            prev_l = v;
        }
        EXPECT_EQ(prev_l, 1.0);
    }
}

TEST(Properties, CompletelyMonotoneCurves) {
    Gen g(202);
    for (int c = 0; c < kCases; ++c) {
        const auto m = g.lattice_model();
        const auto s = lattice_mq_to_tolerance(m, g.uniform(0.1, 3.0), 0.0);
        std::vector<double> curve;
        for (int i = 0; i < 64; ++i) curve.push_back(fptd_laplace(s, 0.05 * i, 0.0));
        const auto r = cm_finite_difference_test(curve, 6);
        EXPECT_TRUE(r.pass) << "case " << c << ": " << r.describe();
    }
}

TEST(Properties, ResidualWithinAllowance) {
    Gen g(303);
    for (int c = 0; c < kCases; ++c) {
        const auto m = g.lattice_model();
        const double q = g.uniform(0.1, 3.0);
        const double pts[] = {0.0};
        const auto s = build_mq(m, q, pts);
        if (s.status != ScaleStatus::converged) continue;
        std::vector<double> th;
        for (int i = 0; i < 8; ++i) th.push_back(5.0 * i / 7.0);
        const auto r = residual_nu_q(m, q, s, th);
        EXPECT_LE(r.max_relative, r.allowed) << "case " << c;
    }
}

TEST(Properties, LatticeMatchesSeries) {
    Gen g(404);
    int checked = 0;
    for (int c = 0; c < kCases; ++c) {
        const auto m = g.lattice_model();
        const double q = g.uniform(0.1, 3.0);
        const double pts[] = {0.0};
        const auto s = build_mq(m, q, pts);
        if (s.status != ScaleStatus::converged) continue;
        const double alpha = m.gamma.atoms().front().location;
        const auto lat = lattice_mq(m, q, s.k_truncation);
        for (const auto& a : s.measure.atoms()) {
            if (a.location > s.base + alpha * s.k_truncation + 1e-9) break;
            const double w = lat.measure.atom_mass_at(a.location);
            EXPECT_NEAR(a.mass, w, 1e-12 * w) << "case " << c << " at " << a.location;
        }
        ++checked;
    }
    EXPECT_GT(checked, kCases / 2);
}

TEST(Properties, EsscherMatchesDirect) {
    Gen g(505);
    for (int c = 0; c < kCases; ++c) {
        const auto m = g.lattice_model();
        const double q = g.uniform(0.1, 3.0);
        const double pts[] = {0.0};
        const auto direct = build_mq(m, q, pts);
        if (direct.status != ScaleStatus::converged) continue;
        const auto tilted = esscher_reduce(m, q, pts);
        ASSERT_TRUE(carrier_ok(tilted));
        for (double d : {0.5, 1.0, 2.0}) {
            const double a = fptd_laplace(direct, d, 0.0);
            const double b = fptd_laplace(tilted, d, 0.0);
            EXPECT_NEAR(a, b, 1e-10 * b) << "case " << c;
        }
    }
}

TEST(Properties, MonotoneInQ) {
    Gen g(606);
    for (int c = 0; c < kCases; ++c) {
        const auto m = g.lattice_model();
        double prev = std::exp(-m.base_point());  // q -> 0 limit at x - l = 1
        for (double q : {0.01, 0.1, 0.5, 1.0, 2.0, 5.0}) {
            const double v = fptd_laplace(lattice_mq_to_tolerance(m, q, 0.0), 1.0, 0.0);
            EXPECT_LE(v, prev * (1.0 + 1e-12)) << "case " << c << " q " << q;
            prev = v;
        }
    }
}

TEST(Properties, ConvolutionLaplaceProduct) {
    Gen g(707);
    for (int c = 0; c < kCases; ++c) {
        const double h = 0.01 * g.integer(1, 5);
        auto random_measure = [&] {
            MeasureRepr mu;
            for (int i = g.integer(0, 3); i > 0; --i) mu.add_atom(g.uniform(0.0, 2.0), g.uniform(0.0, 1.0));
            std::vector<double> ms(static_cast<std::size_t>(g.integer(1, 30)));
            for (double& v : ms) v = g.uniform(0.0, 1.0);
            mu.add_grid(GridPart{h * g.integer(0, 20), h, g.integer(1, 3), ms});
            return mu;
        };
        const auto a = random_measure();
        const auto b = random_measure();
        const auto ab = convolve(a, b);
        for (double th : {0.0, 1.0, 4.0}) {
            const double prod = laplace(a, th) * laplace(b, th);
            EXPECT_NEAR(laplace(ab, th), prod, 1e-13 * prod);
        }
        const auto back = measure_from_json(nlohmann::json::parse(to_json(ab).dump()));
        EXPECT_EQ(laplace(back, 0.7), laplace(ab, 0.7));
    }
}
