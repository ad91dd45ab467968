#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "nucomplete/error.hpp"
#include "nucomplete/matrix.hpp"
#include "nucomplete/sampling.hpp"
#include "nucomplete/solver.hpp"

namespace nucomplete {

inline double relative_frobenius(const DenseMatrix& b_hat, const DenseMatrix& b_star) {
    require_same_shape(b_hat, b_star, "relative_frobenius");
    const double denom = b_star.norm();
    if (!(denom > 0.0)) throw DomainError("relative_frobenius: ground truth is zero");
    return (b_star - b_hat).norm() / denom;
}

inline double relative_l2pi(const DenseMatrix& b_hat, const DenseMatrix& b_star, const DenseMatrix& p) {
    require_same_shape(b_hat, b_star, "relative_l2pi");
    const double denom = l2_pi_norm(b_star, p);
    if (!(denom > 0.0)) throw DomainError("relative_l2pi: ground truth vanishes on the support of p");
    return l2_pi_norm(b_star - b_hat, p) / denom;
}

inline double test_rmse(const DenseMatrix& b_hat, const ObservationSet& test) {
    test.require_nonempty("test_rmse");
    if (static_cast<std::size_t>(b_hat.rows()) != test.n_rows || static_cast<std::size_t>(b_hat.cols()) != test.n_cols) {
        throw DimensionError("test_rmse: estimate shape does not match observation grid");
    }
    double acc = 0.0;
    for (const auto& s : test.samples) {
        const double r = s.value - b_hat(static_cast<Eigen::Index>(s.row), static_cast<Eigen::Index>(s.col));
        acc += r * r;
    }
    return std::sqrt(acc / static_cast<double>(test.size()));
}

/// Index of the path entry with the smallest RMSE on `validation` (first on ties).
inline std::size_t select_by_validation(const std::vector<FitResult>& path, const ObservationSet& validation) {
    if (path.empty()) throw ConfigError("select_by_validation: empty path");
    std::size_t best = 0;
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < path.size(); ++i) {
        const double e = test_rmse(path[i].b_hat, validation);
        if (e < best_err) {
            best_err = e;
            best = i;
        }
    }
    return best;
}

/// Index of the path entry closest to the ground truth in relative Frobenius error.
inline std::size_t select_by_truth(const std::vector<FitResult>& path, const DenseMatrix& b_star) {
    if (path.empty()) throw ConfigError("select_by_truth: empty path");
    std::size_t best = 0;
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < path.size(); ++i) {
        const double e = relative_frobenius(path[i].b_hat, b_star);
        if (e < best_err) {
            best_err = e;
            best = i;
        }
    }
    return best;
}

/// Mean and two standard errors (sample sd / sqrt(count)); two_se is 0 for one value.
struct MeanTwoSe {
    double mean = 0.0;
    double two_se = 0.0;
};

inline MeanTwoSe mean_two_se(const std::vector<double>& v) {
    MeanTwoSe out;
    if (v.empty()) return out;
    double s = 0.0;
    for (double x : v) s += x;
    out.mean = s / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - out.mean) * (x - out.mean);
        const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
        out.two_se = 2.0 * sd / std::sqrt(static_cast<double>(v.size()));
    }
    return out;
}

} // namespace nucomplete
