#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nucomplete/error.hpp"
#include "nucomplete/matrix.hpp"
#include "nucomplete/random.hpp"

namespace nucomplete {

struct Sample {
    std::size_t row = 0;
    std::size_t col = 0;
    double value = 0.0;

    friend bool operator==(const Sample&, const Sample&) = default;
};

/// Observed (row, col, value) triples on a rows x cols grid. Repeats are allowed.
struct ObservationSet {
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<Sample> samples;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }

    void validate() const {
        if (n_rows == 0 || n_cols == 0) {
            throw DimensionError("observation set has an empty grid");
        }
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (samples[i].row >= n_rows || samples[i].col >= n_cols) {
                throw DimensionError("sample " + std::to_string(i) + " at (" +
                                     std::to_string(samples[i].row) + "," +
                                     std::to_string(samples[i].col) + ") outside " +
                                     shape_string(static_cast<Eigen::Index>(n_rows),
                                                  static_cast<Eigen::Index>(n_cols)));
            }
        }
    }

    void require_nonempty(const char* what) const {
        validate();
        if (samples.empty()) {
            throw DegenerateInputError(std::string(what) + ": no observations");
        }
    }

    ObservationSet subset(std::span<const std::size_t> indices) const {
        ObservationSet out{n_rows, n_cols, {}};
        out.samples.reserve(indices.size());
        for (std::size_t i : indices) out.samples.push_back(samples.at(i));
        return out;
    }
};

enum class SamplingMethod { rank1, pmlsvt };

inline const char* to_string(SamplingMethod m) { return m == SamplingMethod::rank1 ? "rank1" : "pmlsvt"; }

/// Estimated sampling distribution with its margins.
struct SamplingEstimate {
    DenseMatrix p_hat;
    Vector row_margins;
    Vector col_margins;
    SamplingMethod method = SamplingMethod::rank1;
    double lambda = 0.0;                 // pmlsvt only
    DenseMatrix intensity;               // pmlsvt: final iterate before normalization
    std::vector<double> objective_trace; // pmlsvt: penalized objective at accepted iterates
    std::size_t iterations = 0;
    bool converged = true;
};

// ---------------------------------------------------------------------------

inline DenseMatrix counting_matrix(const ObservationSet& obs) {
    obs.validate();
    DenseMatrix m = DenseMatrix::Zero(static_cast<Eigen::Index>(obs.n_rows),
                                      static_cast<Eigen::Index>(obs.n_cols));
    for (const auto& s : obs.samples) {
        m(static_cast<Eigen::Index>(s.row), static_cast<Eigen::Index>(s.col)) += 1.0;
    }
    return m;
}

/// Margins R_j = sum_k M_jk / n and C_k = sum_j M_jk / n; P = R C^T.
inline SamplingEstimate estimate_rank1(const DenseMatrix& counts) {
    const double n = counts.sum();
    if (!(n > 0.0)) {
        throw DegenerateInputError("estimate_rank1: counting matrix is all zero");
    }
    SamplingEstimate est;
    est.method = SamplingMethod::rank1;
    est.row_margins = counts.rowwise().sum() / n;
    est.col_margins = counts.colwise().sum().transpose() / n;
    est.p_hat = est.row_margins * est.col_margins.transpose();
    return est;
}

inline SamplingEstimate estimate_rank1(const ObservationSet& obs) {
    obs.require_nonempty("estimate_rank1");
    return estimate_rank1(counting_matrix(obs));
}

// ---------------------------------------------------------------------------
// Poisson low-rank recovery (PMLSVT).

struct PmlsvtConfig {
    std::vector<double> lambdas;  // processed in the given order, warm-started
    double eta = 2.0;             // backtracking factor for t, > 1
    double t0 = 1.0;              // initial inverse step size
    std::size_t max_iter = 500;
    double tol = 1e-5;            // |F(X) - F(X')| stopping threshold
    std::size_t max_backtracks = 60;
    bool project = true;          // rescale the positive part to total count n

    void validate() const {
        if (lambdas.empty()) throw ConfigError("pmlsvt: lambda grid is empty");
        for (double l : lambdas) {
            if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("pmlsvt: lambdas must be finite and >= 0");
        }
        if (!(eta > 1.0)) throw ConfigError("pmlsvt: eta must exceed 1");
        if (!(t0 > 0.0)) throw ConfigError("pmlsvt: t0 must be positive");
        if (max_iter == 0) throw ConfigError("pmlsvt: max_iter must be positive");
        if (!(tol > 0.0)) throw ConfigError("pmlsvt: tol must be positive");
    }
};

namespace detail {

inline constexpr double log_floor = 1e-12;

/// Poisson negative log-likelihood sum_{M>0} X - M log X (constant terms dropped).
inline double poisson_cost(const DenseMatrix& x, const DenseMatrix& counts) {
    double f = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double m = counts.data()[i];
        if (m > 0.0) {
            const double v = std::max(x.data()[i], log_floor);
            f += v - m * std::log(v);
        }
    }
    return f;
}

inline DenseMatrix poisson_gradient(const DenseMatrix& x, const DenseMatrix& counts) {
    DenseMatrix g = DenseMatrix::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double m = counts.data()[i];
        if (m > 0.0) {
            g.data()[i] = 1.0 - m / std::max(x.data()[i], log_floor);
        }
    }
    return g;
}

/// (n / sum(Z+)) Z+, or the uniform matrix n / (rows * cols) when Z+ vanishes.
inline DenseMatrix project_to_total(const DenseMatrix& z, double n) {
    DenseMatrix pos = z.cwiseMax(0.0);
    const double s = pos.sum();
    if (!(s > 0.0)) {
        return DenseMatrix::Constant(z.rows(), z.cols(), n / static_cast<double>(z.size()));
    }
    return pos * (n / s);
}

inline SamplingEstimate normalize_intensity(const DenseMatrix& x) {
    SamplingEstimate est;
    const double s = x.cwiseMax(0.0).sum();
    if (s > 0.0) {
        est.p_hat = x.cwiseMax(0.0) / s;
    } else {
        est.p_hat = DenseMatrix::Constant(x.rows(), x.cols(), 1.0 / static_cast<double>(x.size()));
    }
    est.row_margins = est.p_hat.rowwise().sum();
    est.col_margins = est.p_hat.colwise().sum().transpose();
    est.intensity = x;
    return est;
}

} // namespace detail

/// Default grid top * {2^0, ..., 2^-8}, decreasing, where top is the operator norm
/// of the Poisson gradient at the rank-1 intensity n R C^T. Above top the penalty
/// removes every direction beyond the leading one, so the grid starts where
/// structure beyond the margins can appear.
inline std::vector<double> default_pmlsvt_lambdas(const DenseMatrix& counts) {
    const double n = counts.sum();
    if (!(n > 0.0)) throw DegenerateInputError("default_pmlsvt_lambdas: counting matrix is all zero");
    double top = operator_norm(detail::poisson_gradient(n * estimate_rank1(counts).p_hat, counts));
    if (!(top > 1e-12)) top = 1.0; // counts of product form; the gradient is dimensionless
    std::vector<double> out;
    for (int k = 0; k <= 8; ++k) out.push_back(std::ldexp(top, -k));
    return out;
}

/// Nuclear-norm penalized Poisson maximum likelihood on the counting matrix, one
/// estimate per lambda. Each iteration takes a gradient step of length 1/t on the
/// Poisson cost, shrinks singular values by lambda/t, and (when enabled) rescales
/// the positive part to total mass n. A step that raises the penalized objective
/// is rejected and retried with t <- eta * t.
inline std::vector<SamplingEstimate> estimate_pmlsvt(const DenseMatrix& counts, const PmlsvtConfig& cfg) {
    cfg.validate();
    require_finite(counts, "estimate_pmlsvt");
    if ((counts.array() < 0.0).any()) {
        throw DomainError("estimate_pmlsvt: negative count");
    }
    const double n = counts.sum();
    if (!(n > 0.0)) {
        throw DegenerateInputError("estimate_pmlsvt: counting matrix is all zero");
    }

    std::vector<SamplingEstimate> out;
    out.reserve(cfg.lambdas.size());
    DenseMatrix x = counts;

    for (double lambda : cfg.lambdas) {
        double t = cfg.t0;
        auto objective = [&](const DenseMatrix& m, double nuc) {
            const double f = detail::poisson_cost(m, counts) + lambda * nuc;
            if (!std::isfinite(f)) {
                throw SolverFailure("pmlsvt: objective became non-finite at lambda " + format_double(lambda));
            }
            return f;
        };
        double f_cur = objective(x, nuclear_norm(x));
        std::vector<double> trace{f_cur};
        std::size_t iters = 0;
        bool converged = false;

        for (std::size_t k = 0; k < cfg.max_iter; ++k) {
            const DenseMatrix grad = detail::poisson_gradient(x, counts);
            DenseMatrix next;
            double f_next = 0.0;
            bool accepted = false;
            for (std::size_t bt = 0; bt <= cfg.max_backtracks; ++bt) {
                const DenseMatrix c = x - grad / t;
                Shrinkage z = shrink_singular_values(c, lambda / t);
                if (cfg.project) {
                    next = detail::project_to_total(z.matrix, n);
                    f_next = objective(next, nuclear_norm(next));
                } else {
                    next = std::move(z.matrix);
                    f_next = objective(next, z.nuclear_norm);
                }
                if (f_next <= f_cur) {
                    accepted = true;
                    break;
                }
                t *= cfg.eta;
            }
            if (!accepted) {
                // No step of any admissible length decreases the objective.
                converged = true;
                break;
            }
            ++iters;
            const double change = std::abs(f_next - f_cur);
            x = std::move(next);
            f_cur = f_next;
            trace.push_back(f_cur);
            if (change < cfg.tol) {
                converged = true;
                break;
            }
        }

        SamplingEstimate est = detail::normalize_intensity(x);
        est.method = SamplingMethod::pmlsvt;
        est.lambda = lambda;
        est.objective_trace = std::move(trace);
        est.iterations = iters;
        est.converged = converged;
        out.push_back(std::move(est));
    }
    return out;
}

inline std::vector<SamplingEstimate> estimate_pmlsvt(const ObservationSet& obs, const PmlsvtConfig& cfg) {
    obs.require_nonempty("estimate_pmlsvt");
    return estimate_pmlsvt(counting_matrix(obs), cfg);
}

/// Poisson log-likelihood (up to constants) of counts at the masked entries under
/// rate total * p.
inline double heldout_poisson_loglik(const DenseMatrix& p, const DenseMatrix& counts,
                                     std::span<const Eigen::Index> cells, double total) {
    double ll = 0.0;
    for (Eigen::Index i : cells) {
        const double rate = std::max(total * p.data()[i], detail::log_floor);
        ll += counts.data()[i] * std::log(rate) - rate;
    }
    return ll;
}

/// Pick lambda by held-out Poisson likelihood: a `holdout_fraction` share of the
/// observed cells is hidden, the grid is fitted on the rest, and the winner is refit
/// on the full counts. An empty lambda grid means the default grid.
inline SamplingEstimate select_pmlsvt(const DenseMatrix& counts, PmlsvtConfig cfg, std::uint64_t seed,
                                      double holdout_fraction = 0.1) {
    const double n = counts.sum();
    if (!(n > 0.0)) throw DegenerateInputError("select_pmlsvt: counting matrix is all zero");
    if (cfg.lambdas.empty()) cfg.lambdas = default_pmlsvt_lambdas(counts);
    std::sort(cfg.lambdas.begin(), cfg.lambdas.end(), std::greater<>());

    std::vector<Eigen::Index> observed;
    for (Eigen::Index i = 0; i < counts.size(); ++i) {
        if (counts.data()[i] > 0.0) observed.push_back(i);
    }
    CounterRng rng(seed, streams::holdout);
    shuffle(observed, rng);
    const auto n_hold = static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(observed.size())));

    std::size_t best = 0;
    if (n_hold > 0 && cfg.lambdas.size() > 1) {
        std::vector<Eigen::Index> held(observed.begin(), observed.begin() + static_cast<std::ptrdiff_t>(n_hold));
        std::sort(held.begin(), held.end());
        DenseMatrix train = counts;
        for (Eigen::Index i : held) train.data()[i] = 0.0;
        if (train.sum() > 0.0) {
            const auto fits = estimate_pmlsvt(train, cfg);
            double best_ll = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < fits.size(); ++i) {
                const double ll = heldout_poisson_loglik(fits[i].p_hat, counts, held, n);
                if (ll > best_ll) {
                    best_ll = ll;
                    best = i;
                }
            }
        }
    }
    PmlsvtConfig refit = cfg;
    refit.lambdas.assign(cfg.lambdas.begin(), cfg.lambdas.begin() + static_cast<std::ptrdiff_t>(best) + 1);
    auto path = estimate_pmlsvt(counts, refit);
    return std::move(path.back());
}

/// Sampling estimate by the requested method (pmlsvt uses held-out lambda selection).
inline SamplingEstimate estimate_sampling(const ObservationSet& obs, SamplingMethod method,
                                          std::uint64_t seed = 0) {
    obs.require_nonempty("estimate_sampling");
    const DenseMatrix counts = counting_matrix(obs);
    if (method == SamplingMethod::rank1) return estimate_rank1(counts);
    return select_pmlsvt(counts, PmlsvtConfig{}, seed);
}

// ---------------------------------------------------------------------------

/// n i.i.d. categorical draws from p (with replacement); each value is the true
/// entry plus N(0, noise_sd^2) noise. Positions and noise use separate streams.
inline ObservationSet draw_observations(const DenseMatrix& p, const DenseMatrix& ground_truth, std::size_t n,
                                        double noise_sd, std::uint64_t seed) {
    require_same_shape(p, ground_truth, "draw_observations");
    require_finite(p, "draw_observations");
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p.data()[i] < 0.0) {
            throw DomainError("draw_observations: negative probability at flat index " + std::to_string(i));
        }
    }
    const double total = p.sum();
    if (std::abs(total - 1.0) > 1e-9) {
        throw DomainError("draw_observations: probabilities sum to " + format_double(total) + ", expected 1");
    }
    if (!(noise_sd >= 0.0)) throw DomainError("draw_observations: noise_sd must be non-negative");

    std::vector<double> cdf(static_cast<std::size_t>(p.size()));
    std::partial_sum(p.data(), p.data() + p.size(), cdf.begin());

    CounterRng pos_rng(seed, streams::positions);
    CounterRng noise_rng(seed, streams::noise);
    ObservationSet obs{static_cast<std::size_t>(p.rows()), static_cast<std::size_t>(p.cols()), {}};
    obs.samples.reserve(n);
    const auto cols = static_cast<std::size_t>(p.cols());
    for (std::size_t i = 0; i < n; ++i) {
        const double u = pos_rng.uniform() * cdf.back();
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        auto flat = static_cast<std::size_t>(it - cdf.begin());
        if (flat >= cdf.size()) flat = cdf.size() - 1;
        // Skip zero-probability cells that share a cdf value with their predecessor.
        while (p.data()[flat] == 0.0 && flat + 1 < cdf.size()) ++flat;
        const std::size_t row = flat / cols;
        const std::size_t col = flat % cols;
        const double eps = noise_sd > 0.0 ? noise_sd * noise_rng.normal() : 0.0;
        obs.samples.push_back({row, col, ground_truth(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)) + eps});
    }
    return obs;
}

// ---------------------------------------------------------------------------
// CSV with header `row,col,value`. Grid dimensions are not part of the format;
// the reader takes them from the caller or from the largest index seen.

inline void write_observations_csv(std::ostream& os, const ObservationSet& obs) {
    os << "row,col,value\n";
    for (const auto& s : obs.samples) {
        os << s.row << ',' << s.col << ',' << format_double(s.value) << '\n';
    }
}

inline ObservationSet read_observations_csv(std::istream& is, std::size_t n_rows = 0, std::size_t n_cols = 0) {
    ObservationSet obs;
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    std::size_t max_row = 0, max_col = 0;
    auto parse_index = [](std::string_view f, std::size_t ln) {
        const double v = parse_double(f, ln);
        if (v < 0.0 || v != std::floor(v)) throw ParseError("index must be a non-negative integer", ln);
        return static_cast<std::size_t>(v);
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header_seen) {
            header_seen = true;
            if (line != "row,col,value") throw ParseError("expected header 'row,col,value'", lineno);
            continue;
        }
        const auto fields = split_fields(line, ',');
        if (fields.size() != 3) throw ParseError("expected 3 fields", lineno);
        Sample s{parse_index(fields[0], lineno), parse_index(fields[1], lineno), parse_double(fields[2], lineno)};
        max_row = std::max(max_row, s.row);
        max_col = std::max(max_col, s.col);
        obs.samples.push_back(s);
    }
    obs.n_rows = n_rows ? n_rows : (obs.samples.empty() ? 0 : max_row + 1);
    obs.n_cols = n_cols ? n_cols : (obs.samples.empty() ? 0 : max_col + 1);
    if (!obs.samples.empty()) obs.validate();
    return obs;
}

} // namespace nucomplete
