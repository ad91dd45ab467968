#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "nucomplete/error.hpp"
#include "nucomplete/estimators.hpp"
#include "nucomplete/metrics.hpp"
#include "nucomplete/parallel.hpp"
#include "nucomplete/random.hpp"
#include "nucomplete/sampling.hpp"

namespace nucomplete {

/// Repeated eval/test splitting with an inner train/validation split for lambda.
struct SplitPlan {
    double eval_fraction = 0.8;
    double inner_train_fraction = 0.8;
    std::size_t n_repeats = 20;
    std::uint64_t rng_seed = 0;

    double test_fraction() const { return 1.0 - eval_fraction; }

    void validate() const {
        if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw ConfigError("plan: eval_fraction must lie in (0, 1)");
        if (!(inner_train_fraction > 0.0 && inner_train_fraction < 1.0)) {
            throw ConfigError("plan: inner_train_fraction must lie in (0, 1)");
        }
        if (n_repeats == 0) throw ConfigError("plan: n_repeats must be positive");
    }
};

/// Sample indices of one repeat. Splits are over samples, not cells.
struct RepeatSplit {
    std::vector<std::size_t> eval;
    std::vector<std::size_t> test;
    std::vector<std::size_t> train; // subset of eval
    std::vector<std::size_t> validation; // subset of eval
};

/// Deterministic function of (plan seed, repeat index, sample count).
inline RepeatSplit make_split(const SplitPlan& plan, std::size_t repeat, std::size_t n_samples) {
    RepeatSplit s;
    auto [eval, test] = detail::split_indices(n_samples, plan.eval_fraction,
                                              CounterRng(plan.rng_seed, streams::split).substream(repeat));
    auto [tr, va] = detail::split_indices(eval.size(), plan.inner_train_fraction,
                                          CounterRng(plan.rng_seed, streams::inner_split).substream(repeat));
    for (std::size_t i : tr) s.train.push_back(eval[i]);
    for (std::size_t i : va) s.validation.push_back(eval[i]);
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    s.eval = std::move(eval);
    s.test = std::move(test);
    if (s.test.empty() || s.train.empty() || s.validation.empty()) {
        throw ConfigError("cross_validate: a split is empty (" + std::to_string(n_samples) + " samples)");
    }
    return s;
}

struct RepeatOutcome {
    std::size_t repeat = 0;
    double lambda = 0.0;
    double validation_rmse = 0.0;
    double test_rmse = 0.0;
    DenseMatrix b_hat;
    RepeatSplit split;
};

struct CrossValidationReport {
    Method method = Method::uniform;
    std::vector<RepeatOutcome> repeats; // ordered by repeat index
    double mean_rmse = 0.0;
    double two_se = 0.0;
};

/// Seed for the estimator's own randomness inside one repeat.
inline std::uint64_t repeat_seed(std::uint64_t plan_seed, std::size_t repeat) {
    return CounterRng(plan_seed, streams::replicate).substream(repeat).next();
}

/// One repeat: fit on train, choose lambda by validation RMSE, refit on the full
/// eval set along the path prefix ending at that lambda, score on test.
inline RepeatOutcome cross_validate_repeat(const ObservationSet& obs, EstimatorSpec spec, const SplitPlan& plan,
                                           std::size_t repeat) {
    RepeatOutcome out;
    out.repeat = repeat;
    out.split = make_split(plan, repeat, obs.size());
    spec.seed = repeat_seed(plan.rng_seed, repeat);
    const ObservationSet train = obs.subset(out.split.train);
    const ObservationSet val = obs.subset(out.split.validation);
    const ObservationSet eval = obs.subset(out.split.eval);
    const ObservationSet test = obs.subset(out.split.test);

    const MethodFit inner = fit_method(train, spec);
    const std::size_t best = select_by_validation(inner.path, val);
    out.validation_rmse = test_rmse(inner.path[best].b_hat, val);

    EstimatorSpec refit = spec;
    refit.solver.lambdas.clear();
    for (std::size_t i = 0; i <= best; ++i) refit.solver.lambdas.push_back(inner.path[i].lambda);
    const MethodFit full = fit_method(eval, refit);
    out.lambda = full.path.back().lambda;
    out.b_hat = full.path.back().b_hat;
    out.test_rmse = test_rmse(out.b_hat, test);
    return out;
}

inline CrossValidationReport cross_validate(const ObservationSet& obs, const EstimatorSpec& spec,
                                            const SplitPlan& plan, std::size_t parallelism = 1) {
    plan.validate();
    spec.validate();
    obs.require_nonempty("cross_validate");
    CrossValidationReport rep;
    rep.method = spec.method;
    rep.repeats.resize(plan.n_repeats);
    parallel_for(plan.n_repeats, parallelism,
                 [&](std::size_t r) { rep.repeats[r] = cross_validate_repeat(obs, spec, plan, r); });
    std::vector<double> errs;
    for (const auto& r : rep.repeats) errs.push_back(r.test_rmse);
    const MeanTwoSe m = mean_two_se(errs);
    rep.mean_rmse = m.mean;
    rep.two_se = m.two_se;
    return rep;
}

// ---------------------------------------------------------------------------
// Fairness regression: per-row (or per-column) test RMSE on the estimated margin.

enum class Axis { rows, cols };

inline const char* to_string(Axis a) { return a == Axis::rows ? "rows" : "cols"; }

struct FairnessResult {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
    double t_stat = 0.0;
    double p_value = 1.0;
    std::size_t n_points = 0;
    Axis axis = Axis::rows;
};

/// Ordinary least squares y = a + b x with a two-sided t-test on b (df = m - 2).
inline FairnessResult ols_slope_test(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DimensionError("ols: x and y lengths differ");
    const std::size_t m = x.size();
    if (m < 3) throw InsufficientDataError("ols: need at least 3 points, got " + std::to_string(m));
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(m);
    my /= static_cast<double>(m);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw ConfigError("ols: regressor has zero variance");
    FairnessResult r;
    r.n_points = m;
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    double ssr = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double e = y[i] - r.intercept - r.slope * x[i];
        ssr += e * e;
    }
    const double df = static_cast<double>(m - 2);
    r.slope_se = std::sqrt(ssr / df / sxx);
    if (r.slope_se > 0.0) {
        r.t_stat = r.slope / r.slope_se;
        const boost::math::students_t dist(df);
        r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t_stat)));
    } else {
        // Exact fit: the slope is known without error.
        r.t_stat = r.slope == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.slope);
        r.p_value = r.slope == 0.0 ? 1.0 : 0.0;
    }
    return r;
}

/// Per-axis RMSE of `b_hat` over the test observations of each row (column);
/// entities without test observations are dropped. Returns (margin, rmse) pairs.
inline std::pair<std::vector<double>, std::vector<double>>
per_axis_errors(const DenseMatrix& b_hat, const ObservationSet& test, const SamplingEstimate& sampling, Axis axis) {
    test.validate();
    if (static_cast<std::size_t>(b_hat.rows()) != test.n_rows || static_cast<std::size_t>(b_hat.cols()) != test.n_cols) {
        throw DimensionError("fairness: estimate shape does not match observation grid");
    }
    const std::size_t k = axis == Axis::rows ? test.n_rows : test.n_cols;
    const Vector& margins = axis == Axis::rows ? sampling.row_margins : sampling.col_margins;
    if (static_cast<std::size_t>(margins.size()) != k) throw DimensionError("fairness: margin length mismatch");
    std::vector<double> sq(k, 0.0);
    std::vector<std::size_t> cnt(k, 0);
    for (const auto& s : test.samples) {
        const double r = s.value - b_hat(static_cast<Eigen::Index>(s.row), static_cast<Eigen::Index>(s.col));
        const std::size_t e = axis == Axis::rows ? s.row : s.col;
        sq[e] += r * r;
        ++cnt[e];
    }
    std::vector<double> x, y;
    for (std::size_t e = 0; e < k; ++e) {
        if (cnt[e] == 0) continue;
        x.push_back(margins(static_cast<Eigen::Index>(e)));
        y.push_back(std::sqrt(sq[e] / static_cast<double>(cnt[e])));
    }
    return {std::move(x), std::move(y)};
}

inline FairnessResult fairness_regression(const DenseMatrix& b_hat, const ObservationSet& test,
                                          const SamplingEstimate& sampling, Axis axis) {
    auto [x, y] = per_axis_errors(b_hat, test, sampling, axis);
    if (x.size() < 3) {
        throw InsufficientDataError(std::string("fairness: fewer than 3 populated ") + to_string(axis));
    }
    FairnessResult r = ols_slope_test(x, y);
    r.axis = axis;
    return r;
}

/// Every cell of `truth` as one noiseless observation; the full-matrix test set
/// used when ground truth is available.
inline ObservationSet full_grid_observations(const DenseMatrix& truth) {
    ObservationSet obs{static_cast<std::size_t>(truth.rows()), static_cast<std::size_t>(truth.cols()), {}};
    obs.samples.reserve(static_cast<std::size_t>(truth.size()));
    for (Eigen::Index j = 0; j < truth.rows(); ++j) {
        for (Eigen::Index k = 0; k < truth.cols(); ++k) {
            obs.samples.push_back({static_cast<std::size_t>(j), static_cast<std::size_t>(k), truth(j, k)});
        }
    }
    return obs;
}

} // namespace nucomplete
