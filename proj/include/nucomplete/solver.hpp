#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nucomplete/error.hpp"
#include "nucomplete/matrix.hpp"
#include "nucomplete/sampling.hpp"

namespace nucomplete {

/// Parameters of the proximal-gradient path solver.
struct SolverConfig {
    std::vector<double> lambdas; // strictly decreasing, solved in order with warm starts
    double beta = 0.5;           // line-search factor in (0, 1)
    double t_init = 1.0;         // step size tried first at every iteration
    double tol = 1e-8;           // stop when ||N_old - N||_F^2 <= tol
    std::size_t max_iter = 2000;
    std::size_t max_line_search = 200;
    // Automatic path used by the estimators when `lambdas` is empty.
    std::size_t path_length = 30;
    double path_ratio = 1e-3;

    void validate() const {
        if (lambdas.empty()) throw ConfigError("solver: lambda path is empty");
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
            if (!(lambdas[i] > 0.0) || !std::isfinite(lambdas[i])) {
                throw ConfigError("solver: lambdas must be positive and finite");
            }
            if (i > 0 && !(lambdas[i] < lambdas[i - 1])) {
                throw ConfigError("solver: lambdas must be strictly decreasing");
            }
        }
        if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("solver: beta must lie in (0, 1)");
        if (!(t_init > 0.0)) throw ConfigError("solver: t_init must be positive");
        if (!(tol > 0.0)) throw ConfigError("solver: tol must be positive");
        if (max_iter == 0) throw ConfigError("solver: max_iter must be positive");
    }
};

/// Solution for one lambda of the path.
struct FitResult {
    DenseMatrix b_hat;
    double lambda = 0.0;
    std::vector<double> objective_trace; // objective after every accepted step
    std::vector<double> step_sizes;      // accepted t per iteration
    std::size_t n_iterations = 0;
    bool converged = false;
};

// ---------------------------------------------------------------------------
// Sampling operator and its adjoint.

inline Vector apply_design(const DenseMatrix& b, const ObservationSet& obs) {
    obs.validate();
    if (static_cast<std::size_t>(b.rows()) != obs.n_rows || static_cast<std::size_t>(b.cols()) != obs.n_cols) {
        throw DimensionError("apply_design: matrix shape does not match observation grid");
    }
    Vector out(static_cast<Eigen::Index>(obs.size()));
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const auto& s = obs.samples[i];
        out(static_cast<Eigen::Index>(i)) = b(static_cast<Eigen::Index>(s.row), static_cast<Eigen::Index>(s.col));
    }
    return out;
}

inline DenseMatrix adjoint_design(const Vector& v, const ObservationSet& obs) {
    obs.validate();
    if (static_cast<std::size_t>(v.size()) != obs.size()) {
        throw DimensionError("adjoint_design: vector length does not match sample count");
    }
    DenseMatrix out = DenseMatrix::Zero(static_cast<Eigen::Index>(obs.n_rows), static_cast<Eigen::Index>(obs.n_cols));
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const auto& s = obs.samples[i];
        out(static_cast<Eigen::Index>(s.row), static_cast<Eigen::Index>(s.col)) += v(static_cast<Eigen::Index>(i));
    }
    return out;
}

namespace detail {

inline void require_positive_weights(const DenseMatrix& w, const ObservationSet& obs, const char* what) {
    if (static_cast<std::size_t>(w.rows()) != obs.n_rows || static_cast<std::size_t>(w.cols()) != obs.n_cols) {
        throw DimensionError(std::string(what) + ": weight shape " + shape_string(w.rows(), w.cols()) +
                             " does not match observation grid");
    }
    for (Eigen::Index j = 0; j < w.rows(); ++j) {
        for (Eigen::Index k = 0; k < w.cols(); ++k) {
            if (!(w(j, k) > 0.0) || !std::isfinite(w(j, k))) {
                throw DomainError(std::string(what) + ": weight must be positive at (" + std::to_string(j) + "," +
                                  std::to_string(k) + ")");
            }
        }
    }
}

inline std::vector<double> unit_sample_weights(std::size_t n) { return std::vector<double>(n, 1.0); }

/// Least-squares loss g(N) = (1/n) sum_i omega_i (y_i - N_{j_i k_i} / s_{j_i k_i})^2
/// in the transformed variable N = s o B, s = sqrt(W).
class TransformedLoss {
public:
    TransformedLoss(const ObservationSet& obs, const DenseMatrix& sqrt_w, std::span<const double> omega)
        : obs_(obs), sqrt_w_(sqrt_w), omega_(omega.begin(), omega.end()),
          n_(static_cast<double>(obs.size())) {
        const auto rows = sqrt_w.rows(), cols = sqrt_w.cols();
        curvature_ = DenseMatrix::Zero(rows, cols);
        linear_ = DenseMatrix::Zero(rows, cols);
        for (std::size_t i = 0; i < obs.size(); ++i) {
            const auto& s = obs.samples[i];
            const auto j = static_cast<Eigen::Index>(s.row), k = static_cast<Eigen::Index>(s.col);
            const double sw = sqrt_w(j, k);
            curvature_(j, k) += omega_[i] / (sw * sw);
            linear_(j, k) += omega_[i] * s.value / sw;
        }
    }

    double value(const DenseMatrix& n) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < obs_.size(); ++i) {
            const auto& s = obs_.samples[i];
            const auto j = static_cast<Eigen::Index>(s.row), k = static_cast<Eigen::Index>(s.col);
            const double r = s.value - n(j, k) / sqrt_w_(j, k);
            acc += omega_[i] * r * r;
        }
        return acc / n_;
    }

    /// (2/n) X~*(omega o (X~(N) - Y))
    DenseMatrix gradient(const DenseMatrix& n) const {
        return (2.0 / n_) * (curvature_.cwiseProduct(n) - linear_);
    }

    /// g(N + d) - g(N) - <grad g(N), d>; exact for this quadratic.
    double curvature_term(const DenseMatrix& d) const {
        return (curvature_.array() * d.array().square()).sum() / n_;
    }

private:
    const ObservationSet& obs_;
    const DenseMatrix& sqrt_w_;
    std::vector<double> omega_;
    double n_;
    DenseMatrix curvature_;
    DenseMatrix linear_;
};

inline std::vector<double> validated_sample_weights(const ObservationSet& obs, std::span<const double> omega) {
    if (omega.empty()) return unit_sample_weights(obs.size());
    if (omega.size() != obs.size()) throw DimensionError("sample weights length does not match sample count");
    for (double o : omega) {
        if (!(o > 0.0) || !std::isfinite(o)) throw DomainError("sample weights must be positive and finite");
    }
    return {omega.begin(), omega.end()};
}

} // namespace detail

/// (1/n) sum_i omega_i (y_i - B_{j_i k_i})^2 + lambda * ||sqrt(W) o B||_*.
/// With W all ones and omega all ones this is the plain trace-norm objective.
inline double weighted_objective(const DenseMatrix& b, const ObservationSet& obs, const DenseMatrix& w, double lambda,
                                 std::span<const double> sample_weights = {}) {
    obs.require_nonempty("weighted_objective");
    detail::require_positive_weights(w, obs, "weighted_objective");
    require_same_shape(b, w, "weighted_objective");
    const auto omega = detail::validated_sample_weights(obs, sample_weights);
    double loss = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const auto& s = obs.samples[i];
        const double r = s.value - b(static_cast<Eigen::Index>(s.row), static_cast<Eigen::Index>(s.col));
        loss += omega[i] * r * r;
    }
    return loss / static_cast<double>(obs.size()) + lambda * nuclear_norm(b.cwiseProduct(w.cwiseSqrt()));
}

/// Smallest lambda at which the zero matrix is optimal: (2/n) ||X~*(omega o Y)||_op.
inline double lambda_max(const ObservationSet& obs, const DenseMatrix& w, std::span<const double> sample_weights = {}) {
    obs.require_nonempty("lambda_max");
    detail::require_positive_weights(w, obs, "lambda_max");
    const auto omega = detail::validated_sample_weights(obs, sample_weights);
    const DenseMatrix sqrt_w = w.cwiseSqrt();
    DenseMatrix g = DenseMatrix::Zero(w.rows(), w.cols());
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const auto& s = obs.samples[i];
        const auto j = static_cast<Eigen::Index>(s.row), k = static_cast<Eigen::Index>(s.col);
        g(j, k) += omega[i] * s.value / sqrt_w(j, k);
    }
    return 2.0 / static_cast<double>(obs.size()) * operator_norm(g);
}

/// `count` log-spaced values from `top` down to `top * ratio`.
inline std::vector<double> lambda_path(double top, std::size_t count = 30, double ratio = 1e-3) {
    if (!(top > 0.0)) throw DegenerateInputError("lambda_path: lambda_max is zero (all observations zero?)");
    if (count == 0) throw ConfigError("lambda_path: count must be positive");
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("lambda_path: ratio must lie in (0, 1]");
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double frac = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
        out[i] = top * std::pow(ratio, frac);
    }
    return out;
}

/// Observer for accepted line-search steps; receives (N, grad g(N), N_next, t).
struct StepRecord {
    const DenseMatrix& n;
    const DenseMatrix& gradient;
    const DenseMatrix& next;
    double t;
};

/// Weighted trace-norm regression over a decreasing lambda path.
///
/// Works in N = sqrt(W) o B, where the penalty becomes the plain nuclear norm and
/// the prox is singular-value soft-thresholding at lambda * t. The step size is
/// chosen afresh at every iteration starting from t_init: shrink by beta until
/// the sufficient-decrease test
///
///     g(N - t G_t) <= g(N) - t <grad g, G_t> + (t/2) ||G_t||_F^2
///
/// holds, or, when it already holds at t_init, enlarge by 1/beta while it keeps
/// holding and keep the last passing t. Since g is quadratic the test is
/// evaluated as curvature_term(D) <= ||D||^2 / (2t), D = -t G_t, which is the
/// same inequality without the cancellation in g(.) - g(.).
///
/// `sample_weights` (optional) reweights each squared residual; empty means 1.
template <class Observer>
std::vector<FitResult> fit_path(const ObservationSet& obs, const DenseMatrix& w, const SolverConfig& cfg,
                                std::span<const double> sample_weights, Observer&& observer) {
    cfg.validate();
    obs.require_nonempty("fit_path");
    detail::require_positive_weights(w, obs, "fit_path");
    const auto omega = detail::validated_sample_weights(obs, sample_weights);
    const DenseMatrix sqrt_w = w.cwiseSqrt();
    const detail::TransformedLoss loss(obs, sqrt_w, omega);

    struct Trial {
        Shrinkage prox;
        DenseMatrix delta;
        double delta_sq = 0.0;
        bool passes = false;
    };

    std::vector<FitResult> results;
    results.reserve(cfg.lambdas.size());
    DenseMatrix n = DenseMatrix::Zero(w.rows(), w.cols());
    // Zero is optimal from lambda_max up; skip the iterations so it stays exactly zero.
    const double zero_above = lambda_max(obs, w, sample_weights);

    for (double lambda : cfg.lambdas) {
        FitResult res;
        res.lambda = lambda;
        if (lambda >= zero_above && n.isZero(0.0)) {
            res.b_hat = n;
            res.converged = true;
            results.push_back(std::move(res));
            continue;
        }
        for (std::size_t it = 0; it < cfg.max_iter; ++it) {
            const DenseMatrix grad = loss.gradient(n);
            auto trial = [&](double t) {
                Trial tr;
                tr.prox = shrink_singular_values(n - t * grad, lambda * t);
                tr.delta = tr.prox.matrix - n;
                tr.delta_sq = tr.delta.squaredNorm();
                tr.passes = loss.curvature_term(tr.delta) <= tr.delta_sq / (2.0 * t);
                return tr;
            };

            double t = cfg.t_init;
            Trial cur = trial(t);
            std::size_t searches = 0;
            if (!cur.passes) {
                while (!cur.passes) {
                    if (++searches > cfg.max_line_search) {
                        throw SolverFailure("fit_path: line search failed to find a decreasing step at lambda " +
                                            format_double(lambda));
                    }
                    t *= cfg.beta;
                    cur = trial(t);
                }
            } else {
                while (cur.delta_sq > 0.0 && searches++ < cfg.max_line_search) {
                    const double bigger = t / cfg.beta;
                    Trial nxt = trial(bigger);
                    if (!nxt.passes) break;
                    t = bigger;
                    cur = std::move(nxt);
                }
            }

            observer(StepRecord{n, grad, cur.prox.matrix, t});
            n = std::move(cur.prox.matrix);
            ++res.n_iterations;
            res.step_sizes.push_back(t);
            res.objective_trace.push_back(loss.value(n) + lambda * cur.prox.nuclear_norm);
            if (cur.delta_sq <= cfg.tol) {
                res.converged = true;
                break;
            }
        }
        res.b_hat = n.cwiseQuotient(sqrt_w);
        results.push_back(std::move(res));
    }
    return results;
}

inline std::vector<FitResult> fit_path(const ObservationSet& obs, const DenseMatrix& w, const SolverConfig& cfg,
                                       std::span<const double> sample_weights = {}) {
    return fit_path(obs, w, cfg, sample_weights, [](const StepRecord&) {});
}

} // namespace nucomplete
