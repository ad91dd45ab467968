#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "nucomplete/error.hpp"

namespace nucomplete {

/// Row-major dense real matrix. Carries preference, sampling, weight and count matrices.
using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Thin SVD: m = left * diag(singular_values) * right^T.
struct SvdFactors {
    Eigen::MatrixXd left;
    Vector singular_values;
    Eigen::MatrixXd right;
};

struct MatrixNorms {
    double frobenius = 0.0;
    double operator_norm = 0.0;
    double infinity = 0.0;
};

/// Relative cutoff for numerical rank: sigma_i > eps * sigma_1.
inline constexpr double rank_tolerance = 1e-9;

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

inline void require_finite(const DenseMatrix& m, std::string_view what) {
    for (Eigen::Index j = 0; j < m.rows(); ++j) {
        for (Eigen::Index k = 0; k < m.cols(); ++k) {
            if (!std::isfinite(m(j, k))) {
                throw DomainError(std::string(what) + ": non-finite entry at (" + std::to_string(j) +
                                  "," + std::to_string(k) + ")");
            }
        }
    }
}

inline void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, std::string_view what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.rows(), a.cols()) +
                             " vs " + shape_string(b.rows(), b.cols()));
    }
}

namespace detail {

inline SvdFactors compute_svd(const DenseMatrix& m, bool with_vectors) {
    const unsigned options = with_vectors ? (Eigen::ComputeThinU | Eigen::ComputeThinV) : 0u;
    Eigen::BDCSVD<Eigen::MatrixXd> solver(m, options);
    if (solver.info() != Eigen::Success) {
        throw SolverFailure("svd did not converge on " + shape_string(m.rows(), m.cols()) + " matrix");
    }
    SvdFactors f;
    f.singular_values = solver.singularValues();
    if (!with_vectors) {
        return f;
    }
    f.left = solver.matrixU();
    f.right = solver.matrixV();
    // Fix signs: the largest-magnitude entry of each left vector is positive
    // (lowest index wins ties).
    for (Eigen::Index c = 0; c < f.left.cols(); ++c) {
        Eigen::Index best = 0;
        double best_abs = -1.0;
        for (Eigen::Index r = 0; r < f.left.rows(); ++r) {
            const double a = std::abs(f.left(r, c));
            if (a > best_abs) {
                best_abs = a;
                best = r;
            }
        }
        if (f.left(best, c) < 0.0) {
            f.left.col(c) *= -1.0;
            f.right.col(c) *= -1.0;
        }
    }
    return f;
}

} // namespace detail

/// Thin SVD with k = min(rows, cols), singular values non-increasing.
inline SvdFactors svd(const DenseMatrix& m) {
    require_finite(m, "svd");
    return detail::compute_svd(m, true);
}

inline Vector singular_values(const DenseMatrix& m) {
    require_finite(m, "singular_values");
    return detail::compute_svd(m, false).singular_values;
}

inline double nuclear_norm(const DenseMatrix& m) { return singular_values(m).sum(); }

inline MatrixNorms norms(const DenseMatrix& m) {
    require_finite(m, "norms");
    MatrixNorms out;
    out.frobenius = m.norm();
    out.infinity = m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
    const Vector s = detail::compute_svd(m, false).singular_values;
    out.operator_norm = s.size() ? s(0) : 0.0;
    return out;
}

inline double frobenius_norm(const DenseMatrix& m) { return m.norm(); }

inline double operator_norm(const DenseMatrix& m) {
    const Vector s = singular_values(m);
    return s.size() ? s(0) : 0.0;
}

/// Number of singular values above eps * sigma_1 (0 for the zero matrix).
inline std::size_t numerical_rank(const DenseMatrix& m, double eps = rank_tolerance) {
    const Vector s = singular_values(m);
    if (s.size() == 0 || s(0) <= 0.0) {
        return 0;
    }
    const double cut = eps * s(0);
    return static_cast<std::size_t>((s.array() > cut).count());
}

/// sqrt(sum_jk p_jk * m_jk^2): the root-mean-square of m under sampling distribution p.
inline double l2_pi_norm(const DenseMatrix& m, const DenseMatrix& p) {
    require_same_shape(m, p, "l2_pi_norm");
    if ((p.array() < 0.0).any()) {
        throw DomainError("l2_pi_norm: negative sampling probability");
    }
    return std::sqrt((p.array() * m.array().square()).sum());
}

inline DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
    require_same_shape(a, b, "hadamard");
    return a.cwiseProduct(b);
}

inline DenseMatrix hadamard_div(const DenseMatrix& a, const DenseMatrix& b) {
    require_same_shape(a, b, "hadamard_div");
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
        for (Eigen::Index k = 0; k < b.cols(); ++k) {
            if (b(j, k) == 0.0) {
                throw DomainError("hadamard_div: zero divisor at (" + std::to_string(j) + "," +
                                  std::to_string(k) + ")");
            }
        }
    }
    return a.cwiseQuotient(b);
}

inline DenseMatrix elementwise_sqrt(const DenseMatrix& a) {
    for (Eigen::Index j = 0; j < a.rows(); ++j) {
        for (Eigen::Index k = 0; k < a.cols(); ++k) {
            if (!(a(j, k) >= 0.0)) {
                throw DomainError("elementwise_sqrt: negative entry at (" + std::to_string(j) + "," +
                                  std::to_string(k) + ")");
            }
        }
    }
    return a.cwiseSqrt();
}

/// Result of singular-value soft-thresholding, with the nuclear norm of the output.
struct Shrinkage {
    DenseMatrix matrix;
    double nuclear_norm = 0.0;
    std::size_t rank = 0;
};

/// U * diag(max(sigma - tau, 0)) * V^T, the proximal map of tau * ||.||_*.
inline Shrinkage shrink_singular_values(const DenseMatrix& m, double tau) {
    if (!(tau >= 0.0)) {
        throw DomainError("soft_threshold_svd: tau must be non-negative");
    }
    Shrinkage out;
    out.matrix = DenseMatrix::Zero(m.rows(), m.cols());
    if (m.size() == 0) {
        return out;
    }
    const SvdFactors f = svd(m);
    const Eigen::Index k = f.singular_values.size();
    Eigen::Index keep = 0;
    while (keep < k && f.singular_values(keep) > tau) {
        ++keep;
    }
    if (keep == 0) {
        return out;
    }
    const Vector shrunk = f.singular_values.head(keep).array() - tau;
    out.matrix.noalias() =
        f.left.leftCols(keep) * shrunk.asDiagonal() * f.right.leftCols(keep).transpose();
    out.nuclear_norm = shrunk.sum();
    out.rank = static_cast<std::size_t>(keep);
    return out;
}

inline DenseMatrix soft_threshold_svd(const DenseMatrix& m, double tau) {
    return shrink_singular_values(m, tau).matrix;
}

// ---------------------------------------------------------------------------
// Headerless CSV: one row per line, comma separated, shortest round-trip decimal.

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text, std::size_t line) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
        text.remove_suffix(1);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
        throw ParseError("not a number: '" + std::string(text) + "'", line);
    }
    return v;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline void write_matrix_csv(std::ostream& os, const DenseMatrix& m) {
    for (Eigen::Index j = 0; j < m.rows(); ++j) {
        for (Eigen::Index k = 0; k < m.cols(); ++k) {
            if (k) os << ',';
            os << format_double(m(j, k));
        }
        os << '\n';
    }
}

inline DenseMatrix read_matrix_csv(std::istream& is) {
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        for (auto field : split_fields(line, ',')) {
            row.push_back(parse_double(field, lineno));
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw ParseError("ragged matrix row", lineno);
        }
        rows.push_back(std::move(row));
    }
    DenseMatrix m(static_cast<Eigen::Index>(rows.size()),
                  rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t j = 0; j < rows.size(); ++j) {
        for (std::size_t k = 0; k < rows[j].size(); ++k) {
            m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = rows[j][k];
        }
    }
    return m;
}

} // namespace nucomplete
