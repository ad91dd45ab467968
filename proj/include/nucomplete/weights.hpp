#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "nucomplete/error.hpp"
#include "nucomplete/matrix.hpp"

namespace nucomplete {

/// Smallest l >= 1 with 1/l <= p_jk / w_jk <= l for every entry.
inline double closeness_l(const DenseMatrix& w, const DenseMatrix& p) {
    require_same_shape(w, p, "closeness_l");
    double l = 1.0;
    for (Eigen::Index j = 0; j < w.rows(); ++j) {
        for (Eigen::Index k = 0; k < w.cols(); ++k) {
            const double a = w(j, k), b = p(j, k);
            if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
                throw DomainError("closeness_l: entries must be positive, offending index (" + std::to_string(j) + "," +
                                  std::to_string(k) + ")");
            }
            l = std::max({l, a / b, b / a});
        }
    }
    return l;
}

enum class WeightSolver { admm, subgradient };

struct WeightConstructionConfig {
    double l_bound = 3.0;   // box 1/l <= Q / sqrt(P) <= l
    double gamma = 3.0;     // cap on ||Q o B||_inf
    double step_size = 0.05; // subgradient: step length relative to ||sqrt(P)||_F
    std::size_t max_iter = 2000;
    double tol = 1e-10;
    WeightSolver solver = WeightSolver::admm;
    double admm_threshold = 0.005; // admm: 1/rho relative to ||Q0 o B||_F

    void validate() const {
        if (!(l_bound >= 1.0)) throw ConfigError("weights: l_bound must be >= 1");
        if (!(gamma > 0.0)) throw ConfigError("weights: gamma must be positive");
        if (!(step_size > 0.0)) throw ConfigError("weights: step_size must be positive");
        if (max_iter == 0) throw ConfigError("weights: max_iter must be positive");
        if (!(tol > 0.0)) throw ConfigError("weights: tol must be positive");
        if (!(admm_threshold > 0.0)) throw ConfigError("weights: admm_threshold must be positive");
    }
};

struct WeightConstruction {
    DenseMatrix weights;            // Q^2 / sum(Q^2)
    DenseMatrix q;                  // best feasible iterate
    double objective = 0.0;         // ||Q o B||_* at q
    double initial_objective = 0.0; // at the starting point (sqrt(P) clipped into the box)
    std::vector<double> best_trace; // best objective seen after each iteration
    std::size_t iterations = 0;
};

/// Bounds of the feasible box for Q.
struct WeightBox {
    DenseMatrix lower;
    DenseMatrix upper;
};

inline WeightBox weight_box(const DenseMatrix& b_raw, const DenseMatrix& p_hat, const WeightConstructionConfig& cfg) {
    cfg.validate();
    require_same_shape(b_raw, p_hat, "construct_weights");
    require_finite(b_raw, "construct_weights");
    for (Eigen::Index i = 0; i < p_hat.size(); ++i) {
        if (!(p_hat.data()[i] > 0.0)) {
            throw DomainError("construct_weights: sampling estimate must be positive, flat index " + std::to_string(i));
        }
    }
    const DenseMatrix sqrt_p = p_hat.cwiseSqrt();
    WeightBox box{sqrt_p / cfg.l_bound, sqrt_p * cfg.l_bound};
    std::vector<std::string> bad;
    std::size_t n_bad = 0;
    for (Eigen::Index j = 0; j < b_raw.rows(); ++j) {
        for (Eigen::Index k = 0; k < b_raw.cols(); ++k) {
            const double mag = std::abs(b_raw(j, k));
            if (mag == 0.0) continue; // cap is vacuous
            box.upper(j, k) = std::min(box.upper(j, k), cfg.gamma / mag);
            if (box.lower(j, k) > box.upper(j, k)) {
                if (bad.size() < 10) bad.push_back("(" + std::to_string(j) + "," + std::to_string(k) + ")");
                ++n_bad;
            }
        }
    }
    if (n_bad) {
        std::string list;
        for (const auto& s : bad) list += (list.empty() ? "" : " ") + s;
        throw InfeasibleError("construct_weights: " + std::to_string(n_bad) +
                              " entries violate the spikiness cap at the lower box bound: " + list +
                              (n_bad > bad.size() ? " ..." : "") + "; raise gamma or l_bound");
    }
    return box;
}

namespace detail {

inline void finish_weights(WeightConstruction& out) {
    const DenseMatrix q2 = out.q.cwiseProduct(out.q);
    out.weights = q2 / q2.sum();
}

inline void track_best(WeightConstruction& out, const DenseMatrix& q, double obj) {
    if (obj < out.objective) {
        out.objective = obj;
        out.q = q;
    }
    out.best_trace.push_back(out.objective);
}

/// Projected subgradient descent. Subgradient (U V^T) o B from the SVD of Q o B
/// (singular vectors above the rank cutoff); normalized steps of length
/// step_size * ||sqrt(P)||_F / sqrt(t), then clipping into the box.
inline void weights_subgradient(const DenseMatrix& b_raw, const WeightBox& box, double scale,
                                const WeightConstructionConfig& cfg, DenseMatrix q, WeightConstruction& out) {
    for (std::size_t t = 1; t <= cfg.max_iter; ++t) {
        const SvdFactors f = svd(q.cwiseProduct(b_raw));
        track_best(out, q, f.singular_values.sum());
        out.iterations = t;

        Eigen::Index keep = 0;
        const double cut = f.singular_values.size() ? rank_tolerance * f.singular_values(0) : 0.0;
        while (keep < f.singular_values.size() && f.singular_values(keep) > cut) ++keep;
        if (keep == 0) break;
        const DenseMatrix g = (f.left.leftCols(keep) * f.right.leftCols(keep).transpose()).cwiseProduct(b_raw);
        const double gnorm = g.norm();
        if (!(gnorm > 0.0)) break;

        const double step = cfg.step_size * scale / std::sqrt(static_cast<double>(t));
        DenseMatrix next = (q - (step / gnorm) * g).cwiseMax(box.lower).cwiseMin(box.upper);
        const double moved = (next - q).norm();
        q = std::move(next);
        if (moved <= cfg.tol * scale) {
            track_best(out, q, nuclear_norm(q.cwiseProduct(b_raw)));
            break;
        }
    }
}

/// ADMM on  min ||Z||_*  s.t.  Z = Q o B, Q in box.
///   Z <- shrink(Q o B + U, 1/rho)
///   Q <- clip((Z - U) / B, box)      (entrywise exact; Q unchanged where B = 0)
///   U <- U + Q o B - Z
/// Every Q iterate is feasible; the best one is kept.
inline void weights_admm(const DenseMatrix& b_raw, const WeightBox& box, const WeightConstructionConfig& cfg,
                         DenseMatrix q, WeightConstruction& out) {
    const double zscale = q.cwiseProduct(b_raw).norm();
    if (!(zscale > 0.0)) {
        track_best(out, q, 0.0);
        out.iterations = 1;
        return;
    }
    const double tau = cfg.admm_threshold * zscale;
    DenseMatrix z = q.cwiseProduct(b_raw);
    DenseMatrix u = DenseMatrix::Zero(q.rows(), q.cols());
    track_best(out, q, nuclear_norm(z));
    for (std::size_t t = 1; t <= cfg.max_iter; ++t) {
        out.iterations = t;
        const DenseMatrix z_prev = z;
        z = soft_threshold_svd(q.cwiseProduct(b_raw) + u, tau);
        const DenseMatrix target = z - u;
        for (Eigen::Index i = 0; i < q.size(); ++i) {
            const double b = b_raw.data()[i];
            if (b != 0.0) {
                q.data()[i] = std::clamp(target.data()[i] / b, box.lower.data()[i], box.upper.data()[i]);
            }
        }
        const DenseMatrix qb = q.cwiseProduct(b_raw);
        const double primal = (qb - z).norm();
        const double dual = (z - z_prev).norm();
        u += qb - z;
        track_best(out, q, nuclear_norm(qb));
        if (primal <= cfg.tol * zscale && dual <= cfg.tol * zscale) break;
    }
}

} // namespace detail

/// Minimize ||Q o B||_* over the box sqrt(P)/l <= Q <= min(l sqrt(P), gamma / |B|),
/// starting from sqrt(P) clipped into the box; W is the normalized elementwise
/// square of the best iterate.
inline WeightConstruction construct_weights(const DenseMatrix& b_raw, const DenseMatrix& p_hat,
                                            const WeightConstructionConfig& cfg) {
    const WeightBox box = weight_box(b_raw, p_hat, cfg);
    const DenseMatrix q0 = p_hat.cwiseSqrt().cwiseMax(box.lower).cwiseMin(box.upper);

    WeightConstruction out;
    out.q = q0;
    out.objective = std::numeric_limits<double>::infinity();
    out.initial_objective = nuclear_norm(q0.cwiseProduct(b_raw));
    if (cfg.solver == WeightSolver::admm) {
        detail::weights_admm(b_raw, box, cfg, q0, out);
    } else {
        detail::weights_subgradient(b_raw, box, p_hat.cwiseSqrt().norm(), cfg, q0, out);
    }
    detail::finish_weights(out);
    return out;
}

// ---------------------------------------------------------------------------
// Error-bound diagnostics.

struct BoundDiagnostics {
    double l = 1.0;
    double p_min = 0.0;
    double n_star = 0.0;
    std::size_t r_tilde = 0;
    double bound_value = 0.0;
};

/// (sigma^2 v n*^2) * d * rho * l^4 * r / (n * p_min), leading constant set to 1.
inline double theorem_bound(double l, double n_star, double r_tilde, double sigma, double d, double rho, double n,
                            double p_min) {
    if (!(p_min > 0.0) || !(n > 0.0)) throw DomainError("theorem_bound: n and p_min must be positive");
    const double scale = std::max(sigma * sigma, n_star * n_star);
    return scale * d * rho * std::pow(l, 4) * r_tilde / (n * p_min);
}

/// Quantities of the recovery bound for weight w, matrix b and sampling matrix p.
/// d is max(rows, cols); n* uses rows * cols in place of d^2.
inline BoundDiagnostics bound_diagnostics(const DenseMatrix& b, const DenseMatrix& w, const DenseMatrix& p,
                                          std::size_t n, double sigma, double rho) {
    require_same_shape(b, w, "bound_diagnostics");
    require_same_shape(w, p, "bound_diagnostics");
    if (n == 0) throw DomainError("bound_diagnostics: n must be >= 1");
    const double d = static_cast<double>(std::max(b.rows(), b.cols()));
    if (!(rho >= std::log(d))) throw DomainError("bound_diagnostics: rho must be >= log d");
    BoundDiagnostics out;
    out.l = closeness_l(w, p);
    out.p_min = p.minCoeff();
    const DenseMatrix nw = w.cwiseSqrt().cwiseProduct(b);
    out.n_star = static_cast<double>(b.rows() * b.cols()) * (nw.size() ? nw.cwiseAbs().maxCoeff() : 0.0);
    out.r_tilde = numerical_rank(nw);
    out.bound_value = theorem_bound(out.l, out.n_star, static_cast<double>(out.r_tilde), sigma, d, rho,
                                    static_cast<double>(n), out.p_min);
    return out;
}

} // namespace nucomplete
