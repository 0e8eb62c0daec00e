#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "basisloss/numeric.hpp"

using namespace basisloss;

TEST(Cosine, Examples) {
    EXPECT_EQ(cosine(Vector{1, 0}, Vector{0, 1}), 0.0);
    EXPECT_EQ(cosine(Vector{2, 0}, Vector{1, 0}), 1.0);
    EXPECT_NEAR(cosine(Vector{1, 1}, Vector{1, 0}), 0.7071067811865475, 1e-15);
    EXPECT_EQ(cosine(Vector{1, 2}, Vector{-2, -4}), -1.0);
}

TEST(Cosine, SelfSimilarityAndScaleInvariance) {
    SeededRng rng(2);
    for (int i = 0; i < 500; ++i) {
        Vector u(6), v(6);
        for (double& x : u) x = rng.normal();
        for (double& x : v) x = rng.normal();
        EXPECT_EQ(cosine(u, u), 1.0);
        const double a = rng.uniform(0.01, 100.0), c = rng.uniform(0.01, 100.0);
        Vector au = u, cv = v;
        for (double& x : au) x *= a;
        for (double& x : cv) x *= c;
        EXPECT_NEAR(cosine(au, cv), cosine(u, v), 1e-12);
    }
}

TEST(Cosine, RejectsDegenerateAndMismatched) {
    EXPECT_THROW(cosine(Vector{0, 0}, Vector{1, 0}), DegenerateVector);
    EXPECT_THROW(cosine(Vector{1, 0}, Vector{1e-13, 0}), DegenerateVector);
    EXPECT_THROW(cosine(Vector{1, 0}, Vector{1, 0, 0}), ShapeMismatch);
}

TEST(Cosine, StaysInRangeForNearlyParallelVectors) {
    SeededRng rng(3);
    for (int i = 0; i < 1000; ++i) {
        Vector u(7);
        for (double& x : u) x = rng.normal();
        Vector v = u;
        for (double& x : v) x *= 3.7;
        const double c = cosine(u, v);
        EXPECT_LE(c, 1.0);
        EXPECT_GE(c, 0.999999);
    }
}

TEST(CosineGrad, MatchesFiniteDifferences) {
    SeededRng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Vector u(4), v(4);
        for (double& x : u) x = rng.normal();
        for (double& x : v) x = rng.normal();
        const double c = cosine(u, v);
        Vector gu(4, 0.0), gv(4, 0.0);
        accumulate_cosine_grad(u, v, c, norm(u), norm(v), 1.0, gu, gv);
        const Vector fu = finite_difference_gradient([&](std::span<const double> x) { return cosine(x, v); }, u, 1e-6);
        const Vector fv = finite_difference_gradient([&](std::span<const double> x) { return cosine(u, x); }, v, 1e-6);
        EXPECT_LT(relative_error(gu, fu), 1e-7);
        EXPECT_LT(relative_error(gv, fv), 1e-7);
    }
}

TEST(LogSumExp, Examples) {
    EXPECT_NEAR(log_sum_exp(Vector{0, 0}), 0.6931471805599453, 1e-15);
    EXPECT_NEAR(log_sum_exp(Vector{1000, 1000}), 1000 + std::log(2.0), 1e-12);
    EXPECT_EQ(log_sum_exp(Vector{5}), 5.0);
    EXPECT_THROW(log_sum_exp(Vector{}), EmptyInput);
}

TEST(LogSumExp, AgreesWithNaiveFormulaAtSmallMagnitudes) {
    SeededRng rng(5);
    for (int i = 0; i < 100; ++i) {
        Vector x(1 + rng.index(8));
        for (double& v : x) v = rng.uniform(-5, 5);
        double s = 0;
        for (double v : x) s += std::exp(v);
        EXPECT_NEAR(log_sum_exp(x), std::log(s), 1e-12);
    }
}

TEST(FiniteDifference, Examples) {
    const auto sq = [](std::span<const double> x) { return x[0] * x[0]; };
    EXPECT_NEAR(finite_difference_gradient(sq, Vector{3}, 1e-6)[0], 6.0, 1e-8);

    const auto constant = [](std::span<const double>) { return 4.2; };
    for (double g : finite_difference_gradient(constant, Vector{1, -2, 3}, 1e-6)) EXPECT_NEAR(g, 0.0, 1e-9);

    const auto norm2 = [](std::span<const double> x) { return dot(x, x); };
    const Vector g = finite_difference_gradient(norm2, Vector{1, 2}, 1e-6);
    EXPECT_NEAR(g[0], 2.0, 1e-7);
    EXPECT_NEAR(g[1], 4.0, 1e-7);
}

TEST(FiniteDifference, RejectsBadStepAndNonFiniteValues) {
    const auto f = [](std::span<const double> x) { return x[0]; };
    EXPECT_THROW(finite_difference_gradient(f, Vector{1}, 0.0), std::invalid_argument);
    EXPECT_THROW(finite_difference_gradient(f, Vector{1}, 1e-2), std::invalid_argument);
    const auto bad = [](std::span<const double> x) { return std::log(x[0]); };
    EXPECT_THROW(finite_difference_gradient(bad, Vector{0.0}, 1e-6), NonFiniteEvaluation);
}

TEST(Softplus, StableAtExtremes) {
    EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
    EXPECT_EQ(softplus(800.0), 800.0);
    EXPECT_GT(softplus(-800.0), -1e-300);
    EXPECT_NEAR(sigmoid(0.0), 0.5, 0.0);
    EXPECT_EQ(sigmoid(-1000.0), 0.0);
    EXPECT_EQ(sigmoid(1000.0), 1.0);
}

TEST(Matmul, Variants) {
    const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
    const Matrix b = Matrix::from_rows({{1, 0, 2}, {0, 1, 3}});
    const Matrix ab = matmul(a, b);
    EXPECT_EQ(ab, Matrix::from_rows({{1, 2, 8}, {3, 4, 18}, {5, 6, 28}}));
    EXPECT_EQ(matmul_at_b(a, a), matmul(a.transposed(), a));
    EXPECT_EQ(matmul_a_bt(a, a), matmul(a, a.transposed()));
    EXPECT_THROW(matmul(a, a), ShapeMismatch);
}

TEST(SeededRng, DeterministicAndSeedSensitive) {
    SeededRng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next();
        EXPECT_EQ(x, b.next());
        EXPECT_NE(x, c.next());
    }
}

TEST(SeededRng, IndexAndSampleStayInRange) {
    SeededRng rng(9);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 7000; ++i) ++counts[rng.index(7)];
    for (int c : counts) EXPECT_GT(c, 800);

    std::vector<int> items{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    const auto picked = rng.sample(items, 6);
    EXPECT_EQ(picked.size(), 6u);
    EXPECT_EQ(std::set<int>(picked.begin(), picked.end()).size(), 6u);
    EXPECT_THROW(rng.index(0), EmptyInput);
}

TEST(SeededRng, NormalMoments) {
    SeededRng rng(1);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(DeriveSeed, DistinctStreams) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 100; ++s) seen.insert(derive_seed(1, s));
    EXPECT_EQ(seen.size(), 100u);
    EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
}
