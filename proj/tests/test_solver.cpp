#include <cmath>

#include <gtest/gtest.h>

#include "nucomplete/solver.hpp"
#include "test_util.hpp"

using namespace nucomplete;

namespace {

ObservationSet scalar_obs(double y) { return ObservationSet{1, 1, {{0, 0, y}}}; }

SolverConfig config(std::vector<double> lambdas) {
    SolverConfig c;
    c.lambdas = std::move(lambdas);
    return c;
}

// (1/n) sum_i (y_i - B_{j_i k_i})^2 written out directly.
double squared_loss(const DenseMatrix& b, const ObservationSet& obs) {
    double acc = 0.0;
    for (const auto& s : obs.samples) {
        const double r = s.value - b(static_cast<Eigen::Index>(s.row), static_cast<Eigen::Index>(s.col));
        acc += r * r;
    }
    return acc / static_cast<double>(obs.size());
}

} // namespace

TEST(WeightedObjective, Examples) {
    const ObservationSet obs{2, 2, {{0, 0, 1.0}, {1, 1, -2.0}, {0, 1, 3.0}}};
    const DenseMatrix ones = DenseMatrix::Ones(2, 2);
    EXPECT_NEAR(weighted_objective(DenseMatrix::Zero(2, 2), obs, ones, 0.7), (1.0 + 4.0 + 9.0) / 3.0, 1e-15);
    DenseMatrix interp(2, 2);
    interp << 1.0, 3.0, 5.0, -2.0;
    EXPECT_EQ(weighted_objective(interp, obs, ones, 0.0), 0.0);
    EXPECT_NEAR(weighted_objective(DenseMatrix::Constant(1, 1, 2.0), scalar_obs(3.0), DenseMatrix::Ones(1, 1), 2.0),
                5.0, 1e-15);
}

TEST(WeightedObjective, PenaltyUsesSquareRootOfWeights) {
    CounterRng rng(21);
    const ObservationSet obs = testutil::random_observations(4, 3, 10, rng);
    const DenseMatrix b = testutil::random_matrix(4, 3, rng);
    const DenseMatrix w = testutil::random_positive(4, 3, rng);
    const double expected = squared_loss(b, obs) + 0.3 * testutil::nuclear_norm_eig(w.cwiseSqrt().cwiseProduct(b));
    EXPECT_NEAR(weighted_objective(b, obs, w, 0.3), expected, 1e-12);
}

TEST(WeightedObjective, RejectsNonPositiveWeights) {
    DenseMatrix w = DenseMatrix::Ones(2, 2);
    w(1, 0) = 0.0;
    EXPECT_THROW(weighted_objective(DenseMatrix::Zero(2, 2), ObservationSet{2, 2, {{0, 0, 1.0}}}, w, 1.0), DomainError);
}

TEST(Design, ApplyAndAdjointExamples) {
    DenseMatrix b(2, 2);
    b << 1, 2, 3, 4;
    const ObservationSet obs{2, 2, {{0, 1, 0.0}}};
    const Vector v = apply_design(b, obs);
    ASSERT_EQ(v.size(), 1);
    EXPECT_EQ(v(0), 2.0);

    const ObservationSet three{2, 2, {{0, 1, 0.0}, {1, 0, 0.0}, {0, 1, 0.0}}};
    Vector e = Vector::Zero(3);
    e(1) = 1.0;
    DenseMatrix want = DenseMatrix::Zero(2, 2);
    want(1, 0) = 1.0;
    EXPECT_EQ(adjoint_design(e, three), want);
}

TEST(Design, DualityIdentity) {
    CounterRng rng(22);
    for (int t = 0; t < 20; ++t) {
        const ObservationSet obs = testutil::random_observations(4, 4, 20, rng);
        const DenseMatrix b = testutil::random_matrix(4, 4, rng);
        Vector v(20);
        for (Eigen::Index i = 0; i < 20; ++i) v(i) = rng.normal();
        const double lhs = apply_design(b, obs).dot(v);
        const double rhs = (b.array() * adjoint_design(v, obs).array()).sum();
        EXPECT_NEAR(lhs, rhs, 1e-12);
    }
}

TEST(Design, TransformedOperatorMatchesOriginal) {
    CounterRng rng(23);
    const ObservationSet obs = testutil::random_observations(5, 4, 30, rng);
    const DenseMatrix w = testutil::random_positive(5, 4, rng);
    const DenseMatrix b = testutil::random_matrix(5, 4, rng);
    const DenseMatrix sw = w.cwiseSqrt();
    const std::vector<double> omega(obs.size(), 1.0);
    const detail::TransformedLoss loss(obs, sw, omega);
    EXPECT_NEAR(loss.value(sw.cwiseProduct(b)), squared_loss(b, obs), 1e-12);
}

TEST(FitPath, ScalarClosedForm) {
    const auto path = fit_path(scalar_obs(3.0), DenseMatrix::Ones(1, 1), config({2.0}));
    ASSERT_EQ(path.size(), 1u);
    EXPECT_NEAR(path[0].b_hat(0, 0), 2.0, 1e-8);
    EXPECT_TRUE(path[0].converged);
    const auto neg = fit_path(scalar_obs(-3.0), DenseMatrix::Ones(1, 1), config({2.0}));
    EXPECT_NEAR(neg[0].b_hat(0, 0), -2.0, 1e-8);
}

TEST(FitPath, ZeroAtAndAboveLambdaMax) {
    CounterRng rng(24);
    const ObservationSet obs = testutil::random_observations(6, 5, 40, rng);
    const DenseMatrix ones = DenseMatrix::Ones(6, 5);
    const double top = lambda_max(obs, ones);
    const auto path = fit_path(obs, ones, config({4 * top, top, 0.9 * top}));
    EXPECT_EQ(path[0].b_hat, DenseMatrix::Zero(6, 5));
    EXPECT_EQ(path[1].b_hat, DenseMatrix::Zero(6, 5));
    EXPECT_GT(path[2].b_hat.norm(), 0.0);
    // Exactly zero also for general weights and a path that starts at lambda_max.
    for (int t = 0; t < 10; ++t) {
        const ObservationSet o = testutil::random_observations(7, 6, 50, rng);
        const DenseMatrix w = testutil::random_positive(7, 6, rng);
        EXPECT_EQ(fit_path(o, w, config({lambda_max(o, w)}))[0].b_hat, DenseMatrix::Zero(7, 6));
    }
}

TEST(FitPath, NoiselessFullyObservedRankOneRecovered) {
    Vector u(5), v(5);
    u << 1, 2, -1, 0.5, 3;
    v << 2, -1, 1, 1, 0.5;
    const DenseMatrix b = u * v.transpose();
    ObservationSet obs{5, 5, {}};
    for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t k = 0; k < 5; ++k)
            obs.samples.push_back({j, k, b(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k))});
    const DenseMatrix w = DenseMatrix::Ones(5, 5);
    SolverConfig cfg = config(lambda_path(lambda_max(obs, w), 30, 1e-5));
    const auto path = fit_path(obs, w, cfg);
    EXPECT_LE((path.back().b_hat - b).norm() / b.norm(), 1e-3);
}

TEST(FitPath, PathMonotonicity) {
    CounterRng rng(25);
    const ObservationSet obs = testutil::random_observations(8, 7, 60, rng);
    const DenseMatrix w = testutil::random_positive(8, 7, rng);
    const auto path = fit_path(obs, w, config(lambda_path(lambda_max(obs, w), 15, 1e-2)));
    for (std::size_t i = 1; i < path.size(); ++i) {
        const double prev = weighted_objective(path[i - 1].b_hat, obs, w, path[i - 1].lambda);
        const double cur = weighted_objective(path[i].b_hat, obs, w, path[i].lambda);
        EXPECT_LE(cur, prev + 1e-6);
        const double pen_prev = nuclear_norm(w.cwiseSqrt().cwiseProduct(path[i - 1].b_hat));
        const double pen_cur = nuclear_norm(w.cwiseSqrt().cwiseProduct(path[i].b_hat));
        EXPECT_GE(pen_cur, pen_prev - 1e-6);
    }
}

TEST(FitPath, AcceptedStepsSatisfySufficientDecrease) {
    CounterRng rng(26);
    const ObservationSet obs = testutil::random_observations(7, 6, 50, rng);
    const DenseMatrix w = testutil::random_positive(7, 6, rng);
    const DenseMatrix sw = w.cwiseSqrt();
    auto g = [&](const DenseMatrix& n) { return squared_loss(n.cwiseQuotient(sw), obs); };
    std::size_t checked = 0;
    fit_path(obs, w, config(lambda_path(lambda_max(obs, w), 8, 1e-2)), {}, [&](const StepRecord& s) {
        const DenseMatrix d = s.next - s.n;
        const double rhs = g(s.n) + (s.gradient.array() * d.array()).sum() + d.squaredNorm() / (2 * s.t);
        EXPECT_LE(g(s.next), rhs + 1e-12 * (1 + std::abs(rhs)));
        ++checked;
    });
    EXPECT_GT(checked, 8u);
}

TEST(FitPath, ObjectiveTraceNonIncreasing) {
    CounterRng rng(27);
    const ObservationSet obs = testutil::random_observations(9, 9, 70, rng);
    const DenseMatrix w = testutil::random_positive(9, 9, rng);
    for (const auto& f : fit_path(obs, w, config(lambda_path(lambda_max(obs, w), 10, 1e-2)))) {
        for (std::size_t i = 1; i < f.objective_trace.size(); ++i) {
            EXPECT_LE(f.objective_trace[i], f.objective_trace[i - 1] + 1e-10);
        }
        EXPECT_EQ(f.objective_trace.size(), f.n_iterations);
        EXPECT_EQ(f.step_sizes.size(), f.n_iterations);
    }
}

TEST(FitPath, IterationCapFlagsNonConvergence) {
    CounterRng rng(28);
    const ObservationSet obs = testutil::random_observations(8, 8, 50, rng);
    const DenseMatrix w = DenseMatrix::Ones(8, 8);
    SolverConfig cfg = config({0.01 * lambda_max(obs, w)});
    cfg.max_iter = 2;
    cfg.tol = 1e-30;
    const auto path = fit_path(obs, w, cfg);
    EXPECT_FALSE(path[0].converged);
    EXPECT_EQ(path[0].n_iterations, 2u);
}

TEST(FitPath, InputErrors) {
    const ObservationSet obs{2, 2, {{0, 0, 1.0}}};
    DenseMatrix w = DenseMatrix::Ones(2, 2);
    w(1, 1) = 0.0;
    EXPECT_THROW(fit_path(obs, w, config({1.0})), DomainError);
    EXPECT_THROW(fit_path(obs, DenseMatrix::Ones(2, 2), config({1.0, 2.0})), ConfigError);
    EXPECT_THROW(fit_path(obs, DenseMatrix::Ones(2, 2), config({})), ConfigError);
    EXPECT_THROW(fit_path(ObservationSet{2, 2, {}}, DenseMatrix::Ones(2, 2), config({1.0})), DegenerateInputError);
    EXPECT_THROW(fit_path(obs, DenseMatrix::Ones(3, 2), config({1.0})), DimensionError);
}

TEST(LambdaPath, LogSpacedDecreasing) {
    const auto p = lambda_path(10.0, 4, 1e-3);
    ASSERT_EQ(p.size(), 4u);
    EXPECT_DOUBLE_EQ(p[0], 10.0);
    EXPECT_NEAR(p[1], 1.0, 1e-12);
    EXPECT_NEAR(p[3], 0.01, 1e-14);
    EXPECT_THROW(lambda_path(0.0), DegenerateInputError);
}
