#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nucomplete/error.hpp"
#include "nucomplete/matrix.hpp"
#include "nucomplete/metrics.hpp"
#include "nucomplete/random.hpp"
#include "nucomplete/sampling.hpp"
#include "nucomplete/solver.hpp"
#include "nucomplete/weights.hpp"

namespace nucomplete {

enum class Method { uniform, margin, ipw_uniform, nu_recommend };

inline const char* to_string(Method m) {
    switch (m) {
    case Method::uniform: return "uniform";
    case Method::margin: return "margin";
    case Method::ipw_uniform: return "ipw_uniform";
    case Method::nu_recommend: return "nu_recommend";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    if (s == "uniform") return Method::uniform;
    if (s == "margin") return Method::margin;
    if (s == "ipw_uniform") return Method::ipw_uniform;
    if (s == "nu_recommend") return Method::nu_recommend;
    throw ConfigError("unknown method '" + std::string(s) + "'");
}

inline SamplingMethod parse_sampling_method(std::string_view s) {
    if (s == "rank1") return SamplingMethod::rank1;
    if (s == "pmlsvt") return SamplingMethod::pmlsvt;
    throw ConfigError("unknown sampling method '" + std::string(s) + "'");
}

/// One estimation pipeline and its hyper-parameters.
struct EstimatorSpec {
    Method method = Method::uniform;
    SolverConfig solver;
    WeightConstructionConfig weights;                      // nu_recommend
    SamplingMethod sampling_method = SamplingMethod::rank1; // nu_recommend, ipw_uniform
    Method raw_method = Method::margin;                     // nu_recommend: source of the raw estimate
    double inner_train_fraction = 0.8;                      // nu_recommend: raw lambda selection split
    std::uint64_t seed = 0;

    void validate() const {
        if (method == Method::nu_recommend && raw_method != Method::margin && raw_method != Method::uniform) {
            throw ConfigError("nu_recommend: raw estimator must be uniform or margin");
        }
        if (!(inner_train_fraction > 0.0 && inner_train_fraction < 1.0)) {
            throw ConfigError("nu_recommend: inner_train_fraction must lie in (0, 1)");
        }
        weights.validate();
    }
};

// ---------------------------------------------------------------------------
// Weight matrices of the benchmark pipelines.

/// All-ones matrix normalized to sum 1.
inline DenseMatrix uniform_weights(const ObservationSet& obs) {
    obs.validate();
    const auto r = static_cast<Eigen::Index>(obs.n_rows), c = static_cast<Eigen::Index>(obs.n_cols);
    return DenseMatrix::Constant(r, c, 1.0 / static_cast<double>(r * c));
}

/// Outer product of empirical margins; zero margins are floored at 1/(2n).
inline DenseMatrix margin_weights(const ObservationSet& obs) {
    obs.require_nonempty("margin_weights");
    SamplingEstimate est = estimate_rank1(obs);
    const double floor = 1.0 / (2.0 * static_cast<double>(obs.size()));
    Vector r = est.row_margins.cwiseMax(floor);
    Vector c = est.col_margins.cwiseMax(floor);
    return r * c.transpose();
}

/// Strictly positive copy of a sampling estimate for the weight program. Rank-1
/// estimates get the margin floor 1/(2n); other estimates floor each entry at
/// 1/(2n)^2. The result is renormalized to sum 1.
inline SamplingEstimate floor_sampling(SamplingEstimate est, std::size_t n) {
    const double floor = 1.0 / (2.0 * static_cast<double>(n));
    if (est.method == SamplingMethod::rank1 && est.row_margins.size() == est.p_hat.rows() &&
        est.col_margins.size() == est.p_hat.cols()) {
        est.p_hat = est.row_margins.cwiseMax(floor) * est.col_margins.cwiseMax(floor).transpose();
    } else {
        est.p_hat = est.p_hat.cwiseMax(floor * floor);
    }
    est.p_hat /= est.p_hat.sum();
    return est;
}

/// omega_i proportional to 1 / (rows * cols * P_{j_i k_i}), normalized to mean 1.
inline std::vector<double> ipw_sample_weights(const ObservationSet& obs, const SamplingEstimate& sampling) {
    obs.require_nonempty("ipw_sample_weights");
    if (static_cast<std::size_t>(sampling.p_hat.rows()) != obs.n_rows ||
        static_cast<std::size_t>(sampling.p_hat.cols()) != obs.n_cols) {
        throw DimensionError("ipw_sample_weights: sampling estimate shape does not match observation grid");
    }
    const double cells = static_cast<double>(obs.n_rows * obs.n_cols);
    std::vector<double> omega(obs.size());
    double total = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const auto& s = obs.samples[i];
        const double p = sampling.p_hat(static_cast<Eigen::Index>(s.row), static_cast<Eigen::Index>(s.col));
        if (!(p > 0.0)) {
            throw DomainError("ipw_sample_weights: zero propensity at observed entry (" + std::to_string(s.row) + "," +
                              std::to_string(s.col) + ")");
        }
        omega[i] = 1.0 / (cells * p);
        total += omega[i];
    }
    const double mean = total / static_cast<double>(obs.size());
    for (double& o : omega) o /= mean;
    return omega;
}

/// Copy of `cfg` with the automatic path filled in when no lambdas were given.
inline SolverConfig resolve_path(SolverConfig cfg, const ObservationSet& obs, const DenseMatrix& w,
                                 std::span<const double> sample_weights = {}) {
    if (cfg.lambdas.empty()) {
        cfg.lambdas = lambda_path(lambda_max(obs, w, sample_weights), cfg.path_length, cfg.path_ratio);
    }
    return cfg;
}

// ---------------------------------------------------------------------------

inline std::vector<FitResult> fit_uniform(const ObservationSet& obs, const SolverConfig& cfg) {
    const DenseMatrix w = uniform_weights(obs);
    return fit_path(obs, w, resolve_path(cfg, obs, w));
}

inline std::vector<FitResult> fit_margin(const ObservationSet& obs, const SolverConfig& cfg) {
    const DenseMatrix w = margin_weights(obs);
    return fit_path(obs, w, resolve_path(cfg, obs, w));
}

inline std::vector<FitResult> fit_ipw_uniform(const ObservationSet& obs, const SolverConfig& cfg,
                                              const SamplingEstimate& sampling) {
    const DenseMatrix w = uniform_weights(obs);
    const auto omega = ipw_sample_weights(obs, sampling);
    return fit_path(obs, w, resolve_path(cfg, obs, w, omega), omega);
}

/// Everything NU-Recommend produced on the way to its path.
struct NuRecommendFit {
    std::vector<FitResult> path;
    DenseMatrix weights;
    WeightConstruction construction;
    SamplingEstimate sampling;
    DenseMatrix b_raw;
    double raw_lambda = 0.0;
};

/// Weighted fit given an already chosen raw estimate and sampling estimate.
inline NuRecommendFit fit_nu_recommend_from_raw(const ObservationSet& obs, const DenseMatrix& b_raw,
                                                const SamplingEstimate& sampling, const SolverConfig& cfg,
                                                const WeightConstructionConfig& weight_cfg) {
    NuRecommendFit out;
    out.b_raw = b_raw;
    out.sampling = sampling;
    try {
        out.construction = construct_weights(b_raw, sampling.p_hat, weight_cfg);
    } catch (const InfeasibleError& e) {
        throw InfeasibleError(std::string("nu_recommend: ") + e.what());
    }
    out.weights = out.construction.weights;
    out.path = fit_path(obs, out.weights, resolve_path(cfg, obs, out.weights));
    return out;
}

namespace detail {

inline std::vector<FitResult> fit_raw(Method m, const ObservationSet& obs, const SolverConfig& cfg) {
    return m == Method::uniform ? fit_uniform(obs, cfg) : fit_margin(obs, cfg);
}

/// Split sample indices into (train, validation) with the first `fraction` of a shuffle.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
split_indices(std::size_t count, double fraction, CounterRng rng) {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i;
    shuffle(idx, rng);
    const auto n_first = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count)));
    std::vector<std::size_t> a(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_first));
    std::vector<std::size_t> b(idx.begin() + static_cast<std::ptrdiff_t>(n_first), idx.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return {std::move(a), std::move(b)};
}

} // namespace detail

/// Raw estimate feeding the weight program. With ground truth the raw path is
/// fitted on all observations and the lambda closest to the truth wins; otherwise
/// lambda is chosen on an internal train/validation split and refit on everything.
inline std::pair<DenseMatrix, double> raw_estimate(const ObservationSet& obs, const EstimatorSpec& spec,
                                                   const DenseMatrix* ground_truth) {
    if (ground_truth) {
        const auto path = detail::fit_raw(spec.raw_method, obs, spec.solver);
        const std::size_t best = select_by_truth(path, *ground_truth);
        return {path[best].b_hat, path[best].lambda};
    }
    auto [train_idx, val_idx] =
        detail::split_indices(obs.size(), spec.inner_train_fraction, CounterRng(spec.seed, streams::inner_split));
    if (train_idx.empty() || val_idx.empty()) {
        throw ConfigError("nu_recommend: too few observations for the internal validation split");
    }
    const ObservationSet train = obs.subset(train_idx);
    const ObservationSet val = obs.subset(val_idx);
    const auto path = detail::fit_raw(spec.raw_method, train, spec.solver);
    const std::size_t best = select_by_validation(path, val);
    SolverConfig refit = spec.solver;
    refit.lambdas.clear();
    for (std::size_t i = 0; i <= best; ++i) refit.lambdas.push_back(path[i].lambda);
    const auto full = detail::fit_raw(spec.raw_method, obs, refit);
    return {full.back().b_hat, full.back().lambda};
}

/// Full pipeline: raw estimate, sampling estimate, weight construction, weighted fit.
inline NuRecommendFit fit_nu_recommend(const ObservationSet& obs, const EstimatorSpec& spec,
                                       const DenseMatrix* ground_truth = nullptr) {
    spec.validate();
    obs.require_nonempty("fit_nu_recommend");
    auto [b_raw, raw_lambda] = raw_estimate(obs, spec, ground_truth);
    const SamplingEstimate sampling = floor_sampling(estimate_sampling(obs, spec.sampling_method, spec.seed), obs.size());
    NuRecommendFit out = fit_nu_recommend_from_raw(obs, b_raw, sampling, spec.solver, spec.weights);
    out.raw_lambda = raw_lambda;
    return out;
}

inline std::vector<FitResult> fit_nu_recommend(const ObservationSet& obs, const SolverConfig& cfg,
                                               const WeightConstructionConfig& weight_cfg) {
    EstimatorSpec spec;
    spec.method = Method::nu_recommend;
    spec.solver = cfg;
    spec.weights = weight_cfg;
    return fit_nu_recommend(obs, spec).path;
}

/// Result of running one estimator spec: its path plus the weight matrix used.
struct MethodFit {
    std::vector<FitResult> path;
    DenseMatrix weights;
};

/// Dispatch on spec.method. `ground_truth` only affects NU-Recommend's raw selection.
inline MethodFit fit_method(const ObservationSet& obs, const EstimatorSpec& spec,
                            const DenseMatrix* ground_truth = nullptr) {
    spec.validate();
    switch (spec.method) {
    case Method::uniform: return {fit_uniform(obs, spec.solver), uniform_weights(obs)};
    case Method::margin: return {fit_margin(obs, spec.solver), margin_weights(obs)};
    case Method::ipw_uniform: {
        const SamplingEstimate s = estimate_sampling(obs, spec.sampling_method, spec.seed);
        return {fit_ipw_uniform(obs, spec.solver, s), uniform_weights(obs)};
    }
    case Method::nu_recommend: {
        NuRecommendFit nu = fit_nu_recommend(obs, spec, ground_truth);
        return {std::move(nu.path), std::move(nu.weights)};
    }
    }
    throw ConfigError("unknown method");
}

} // namespace nucomplete
