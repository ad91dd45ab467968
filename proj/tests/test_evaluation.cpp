#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <gtest/gtest.h>

#include "nucomplete/evaluation.hpp"
#include "test_util.hpp"

using namespace nucomplete;

namespace {

DenseMatrix mat2(double a, double b, double c, double d) {
    DenseMatrix m(2, 2);
    m << a, b, c, d;
    return m;
}

EstimatorSpec small_spec(Method m) {
    EstimatorSpec s;
    s.method = m;
    s.solver.path_length = 8;
    return s;
}

} // namespace

TEST(RelativeError, Examples) {
    EXPECT_EQ(relative_frobenius(DenseMatrix::Ones(2, 2), DenseMatrix::Ones(2, 2)), 0.0);
    EXPECT_NEAR(relative_frobenius(DenseMatrix::Zero(2, 2), mat2(1, 2, 3, 4)), 1.0, 1e-15);
    EXPECT_NEAR(relative_frobenius(mat2(2, 0, 0, 0), mat2(1, 0, 0, 0)), 1.0, 1e-15);
    EXPECT_THROW(relative_frobenius(DenseMatrix::Ones(2, 2), DenseMatrix::Zero(2, 2)), DomainError);
}

TEST(RelativeError, L2PiWithUniformPIsFrobenius) {
    CounterRng rng(61);
    for (int t = 0; t < 20; ++t) {
        const DenseMatrix a = testutil::random_matrix(5, 4, rng), b = testutil::random_matrix(5, 4, rng);
        EXPECT_NEAR(relative_l2pi(a, b, DenseMatrix::Constant(5, 4, 0.05)), relative_frobenius(a, b), 1e-13);
    }
}

TEST(RelativeError, L2PiIgnoresUnsampledCells) {
    const DenseMatrix p = mat2(0.5, 0.5, 0.0, 0.0);
    EXPECT_EQ(relative_l2pi(mat2(1, 1, 9, 9), mat2(1, 1, 0, 0), p), 0.0);
    EXPECT_THROW(relative_l2pi(mat2(1, 1, 1, 1), mat2(0, 0, 1, 1), p), DomainError);
}

TEST(TestRmse, Examples) {
    const ObservationSet t{2, 2, {{0, 0, 3.0}, {1, 1, -4.0}}};
    EXPECT_NEAR(test_rmse(DenseMatrix::Zero(2, 2), t), std::sqrt(25.0 / 2.0), 1e-15);
    EXPECT_EQ(test_rmse(mat2(3, 7, 7, -4), t), 0.0);
    EXPECT_THROW(test_rmse(DenseMatrix::Zero(2, 2), ObservationSet{2, 2, {}}), DegenerateInputError);
    EXPECT_THROW(test_rmse(DenseMatrix::Zero(3, 2), t), DimensionError);
}

TEST(MeanTwoSe, Examples) {
    const MeanTwoSe a = mean_two_se({1.0, 2.0, 3.0});
    EXPECT_DOUBLE_EQ(a.mean, 2.0);
    EXPECT_NEAR(a.two_se, 2.0 / std::sqrt(3.0), 1e-15);
    const MeanTwoSe b = mean_two_se({5.0});
    EXPECT_EQ(b.mean, 5.0);
    EXPECT_EQ(b.two_se, 0.0);
}

TEST(Selection, ValidationAndTruth) {
    std::vector<FitResult> path(3);
    path[0].b_hat = DenseMatrix::Zero(1, 2);
    path[1].b_hat = mat2(1, 1, 0, 0).topRows(1);
    path[2].b_hat = mat2(2, 2, 0, 0).topRows(1);
    const ObservationSet val{1, 2, {{0, 0, 1.1}, {0, 1, 0.9}}};
    EXPECT_EQ(select_by_validation(path, val), 1u);
    EXPECT_EQ(select_by_truth(path, DenseMatrix::Constant(1, 2, 1.8)), 2u);
    EXPECT_THROW(select_by_validation({}, val), ConfigError);
}

TEST(MakeSplit, SizesAndDisjointness) {
    SplitPlan plan;
    plan.rng_seed = 5;
    const RepeatSplit s = make_split(plan, 3, 1000);
    EXPECT_EQ(s.eval.size(), 800u);
    EXPECT_EQ(s.test.size(), 200u);
    EXPECT_EQ(s.train.size(), 640u);
    EXPECT_EQ(s.validation.size(), 160u);
    std::set<std::size_t> all(s.eval.begin(), s.eval.end());
    for (std::size_t i : s.test) EXPECT_TRUE(all.insert(i).second);
    EXPECT_EQ(all.size(), 1000u);
    std::set<std::size_t> ev(s.eval.begin(), s.eval.end()), inner(s.train.begin(), s.train.end());
    for (std::size_t i : s.validation) EXPECT_TRUE(inner.insert(i).second);
    EXPECT_EQ(inner, ev);
}

TEST(MakeSplit, DeterministicPerRepeatAndDistinctAcrossRepeats) {
    SplitPlan plan;
    plan.rng_seed = 9;
    const RepeatSplit a = make_split(plan, 0, 200), b = make_split(plan, 0, 200), c = make_split(plan, 1, 200);
    EXPECT_EQ(a.test, b.test);
    EXPECT_EQ(a.validation, b.validation);
    EXPECT_NE(a.test, c.test);
    EXPECT_THROW(make_split(plan, 0, 2), ConfigError);
}

TEST(CrossValidate, DeterministicAndParallelInvariant) {
    CounterRng rng(62);
    const ObservationSet obs = testutil::random_observations(8, 8, 300, rng);
    SplitPlan plan;
    plan.n_repeats = 4;
    plan.rng_seed = 3;
    const auto a = cross_validate(obs, small_spec(Method::margin), plan, 1);
    const auto b = cross_validate(obs, small_spec(Method::margin), plan, 4);
    ASSERT_EQ(a.repeats.size(), 4u);
    for (std::size_t r = 0; r < 4; ++r) {
        EXPECT_EQ(a.repeats[r].repeat, r);
        EXPECT_EQ(a.repeats[r].b_hat, b.repeats[r].b_hat);
        EXPECT_EQ(a.repeats[r].test_rmse, b.repeats[r].test_rmse);
    }
    EXPECT_EQ(a.mean_rmse, b.mean_rmse);
    std::vector<double> errs;
    for (const auto& r : a.repeats) errs.push_back(r.test_rmse);
    EXPECT_EQ(a.mean_rmse, mean_two_se(errs).mean);
}

TEST(CrossValidate, SingleLambdaPlanUsesIt) {
    CounterRng rng(63);
    const ObservationSet obs = testutil::random_observations(6, 6, 200, rng);
    EstimatorSpec spec = small_spec(Method::uniform);
    spec.solver.lambdas = {0.01};
    SplitPlan plan;
    plan.n_repeats = 2;
    for (const auto& r : cross_validate(obs, spec, plan).repeats) EXPECT_EQ(r.lambda, 0.01);
}

// The chosen lambda minimizes validation RMSE over the inner path, recomputed here.
TEST(CrossValidate, ChosenLambdaIsValidationArgmin) {
    CounterRng rng(64);
    const ObservationSet obs = testutil::random_observations(7, 7, 250, rng);
    SplitPlan plan;
    plan.rng_seed = 17;
    const EstimatorSpec spec = small_spec(Method::uniform);
    const RepeatOutcome out = cross_validate_repeat(obs, spec, plan, 2);
    const auto inner = fit_uniform(obs.subset(out.split.train), spec.solver);
    const ObservationSet val = obs.subset(out.split.validation);
    std::size_t arg = 0;
    double best = 1e300;
    for (std::size_t i = 0; i < inner.size(); ++i) {
        double acc = 0.0;
        for (const auto& s : val.samples) {
            const double r = s.value - inner[i].b_hat(static_cast<Eigen::Index>(s.row), static_cast<Eigen::Index>(s.col));
            acc += r * r;
        }
        if (acc < best) {
            best = acc;
            arg = i;
        }
    }
    EXPECT_EQ(out.lambda, inner[arg].lambda);
    EXPECT_NEAR(out.validation_rmse, std::sqrt(best / static_cast<double>(val.size())), 1e-12);
    EXPECT_NEAR(out.test_rmse, test_rmse(out.b_hat, obs.subset(out.split.test)), 0.0);
}

TEST(Ols, WorkedExample) {
    // x = (0,1,2), y = (0,1,1): slope 1/2, intercept 1/6, se^2 = 1/12, t = sqrt(3).
    const FairnessResult r = ols_slope_test({0, 1, 2}, {0, 1, 1});
    EXPECT_NEAR(r.slope, 0.5, 1e-15);
    EXPECT_NEAR(r.intercept, 1.0 / 6.0, 1e-15);
    EXPECT_NEAR(r.slope_se, std::sqrt(1.0 / 12.0), 1e-15);
    EXPECT_NEAR(r.t_stat, std::sqrt(3.0), 1e-14);
    // Student t with one degree of freedom is Cauchy: p = 1 - (2/pi) atan|t| = 1/3.
    EXPECT_NEAR(r.p_value, 1.0 / 3.0, 1e-12);
    EXPECT_EQ(r.n_points, 3u);
}

TEST(Ols, PValueMatchesClosedFormsForOneAndTwoDof) {
    CounterRng rng(65);
    for (int t = 0; t < 50; ++t) {
        for (std::size_t m : {3u, 4u}) {
            std::vector<double> x(m), y(m);
            for (std::size_t i = 0; i < m; ++i) {
                x[i] = rng.normal();
                y[i] = 0.7 * x[i] + rng.normal();
            }
            const FairnessResult r = ols_slope_test(x, y);
            const double a = std::abs(r.t_stat);
            const double want = m == 3 ? 1.0 - 2.0 / std::numbers::pi * std::atan(a) : 1.0 - a / std::sqrt(2.0 + a * a);
            EXPECT_NEAR(r.p_value, want, 1e-10);
        }
    }
}

TEST(Ols, NormalEquationsHold) {
    CounterRng rng(66);
    std::vector<double> x(40), y(40);
    for (std::size_t i = 0; i < 40; ++i) {
        x[i] = rng.uniform();
        y[i] = 2.0 - 3.0 * x[i] + 0.1 * rng.normal();
    }
    const FairnessResult r = ols_slope_test(x, y);
    double s0 = 0.0, s1 = 0.0;
    for (std::size_t i = 0; i < 40; ++i) {
        const double e = y[i] - r.intercept - r.slope * x[i];
        s0 += e;
        s1 += e * x[i];
    }
    EXPECT_NEAR(s0, 0.0, 1e-12);
    EXPECT_NEAR(s1, 0.0, 1e-12);
    EXPECT_LT(r.slope, 0.0);
    EXPECT_LT(r.p_value, 1e-10);
}

TEST(Ols, DegenerateInputs) {
    const FairnessResult flat = ols_slope_test({1, 2, 3, 4}, {2, 2, 2, 2});
    EXPECT_EQ(flat.slope, 0.0);
    EXPECT_EQ(flat.p_value, 1.0);
    EXPECT_THROW(ols_slope_test({1, 1, 1}, {1, 2, 3}), ConfigError);
    EXPECT_THROW(ols_slope_test({1, 2}, {1, 2}), InsufficientDataError);
    EXPECT_THROW(ols_slope_test({1, 2, 3}, {1, 2}), DimensionError);
}

TEST(Fairness, PerAxisErrorsExample) {
    // Row 0 residuals (1, -1), row 1 residual 2, row 2 unobserved in test.
    const ObservationSet test{3, 2, {{0, 0, 1.0}, {0, 1, -1.0}, {1, 0, 2.0}}};
    SamplingEstimate s;
    s.row_margins = Vector(3);
    s.row_margins << 0.5, 0.3, 0.2;
    s.col_margins = Vector(2);
    s.col_margins << 0.6, 0.4;
    const auto [x, y] = per_axis_errors(DenseMatrix::Zero(3, 2), test, s, Axis::rows);
    ASSERT_EQ(x.size(), 2u);
    EXPECT_EQ(x[0], 0.5);
    EXPECT_EQ(x[1], 0.3);
    EXPECT_NEAR(y[0], 1.0, 1e-15);
    EXPECT_NEAR(y[1], 2.0, 1e-15);
    const auto [cx, cy] = per_axis_errors(DenseMatrix::Zero(3, 2), test, s, Axis::cols);
    EXPECT_EQ(cx, (std::vector<double>{0.6, 0.4}));
    EXPECT_NEAR(cy[0], std::sqrt(2.5), 1e-15);
    EXPECT_THROW(fairness_regression(DenseMatrix::Zero(3, 2), test, s, Axis::rows), InsufficientDataError);
}

TEST(Fairness, RegressionDetectsPlantedSlope) {
    // Errors shrink linearly with the margin.
    const std::size_t d = 30;
    SamplingEstimate s;
    s.row_margins = Vector(d);
    s.col_margins = Vector::Constant(1, 1.0);
    ObservationSet test{d, 1, {}};
    for (std::size_t j = 0; j < d; ++j) {
        const double m = 0.01 + 0.001 * static_cast<double>(j);
        s.row_margins(static_cast<Eigen::Index>(j)) = m;
        test.samples.push_back({j, 0, 1.0 - 10.0 * m + 0.001 * std::sin(static_cast<double>(j))});
    }
    const FairnessResult r = fairness_regression(DenseMatrix::Zero(d, 1), test, s, Axis::rows);
    EXPECT_NEAR(r.slope, -10.0, 0.1);
    EXPECT_LT(r.p_value, 0.05);
    EXPECT_EQ(r.axis, Axis::rows);
}

TEST(Fairness, FullGridObservations) {
    const ObservationSet g = full_grid_observations(mat2(1, 2, 3, 4));
    ASSERT_EQ(g.size(), 4u);
    EXPECT_EQ(test_rmse(mat2(1, 2, 3, 4), g), 0.0);
    EXPECT_EQ(g.samples[1], (Sample{0, 1, 2.0}));
}
