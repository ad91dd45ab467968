#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "nucomplete/error.hpp"
#include "nucomplete/matrix.hpp"
#include "nucomplete/random.hpp"
#include "nucomplete/sampling.hpp"

namespace nucomplete {

// ---------------------------------------------------------------------------
// Synthetic low-rank data.

struct SyntheticSpec {
    std::size_t d = 100;
    std::size_t rank_b = 20;
    std::size_t rank_p = 20;
    double noise_sd = 1.0;
    std::size_t n = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        if (d == 0 || n == 0) throw ConfigError("synthetic: d and n must be positive");
        if (rank_b == 0 || rank_p == 0 || rank_b > d || rank_p > d) {
            throw ConfigError("synthetic: ranks must lie in [1, d]");
        }
        if (!(noise_sd >= 0.0)) throw ConfigError("synthetic: noise_sd must be non-negative");
    }
};

struct SyntheticData {
    DenseMatrix b_star;
    DenseMatrix p_star;
    ObservationSet obs;
};

/// Matrix with Uniform[0,1) entries drawn row by row from the given stream.
inline DenseMatrix uniform_factor(std::size_t rows, std::size_t cols, std::uint64_t seed, std::uint64_t stream) {
    CounterRng rng(seed, stream);
    DenseMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
    return m;
}

/// B* = U_B V_B^T, P* = U_P V_P^T / sum, observations drawn from P*.
inline SyntheticData generate_from_factors(const DenseMatrix& ub, const DenseMatrix& vb, const DenseMatrix& up,
                                           const DenseMatrix& vp, std::size_t n, double noise_sd,
                                           std::uint64_t seed) {
    SyntheticData out;
    out.b_star = ub * vb.transpose();
    DenseMatrix p = up * vp.transpose();
    const double total = p.sum();
    if (!(total > 0.0) || (p.array() <= 0.0).any()) {
        throw DegenerateInputError("generate_synthetic: sampling factors produce a non-positive entry");
    }
    out.p_star = p / total;
    out.obs = draw_observations(out.p_star, out.b_star, n, noise_sd, seed);
    return out;
}

/// Each factor uses its own stream, so B* and P* depend on the seed but not on n.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const auto ub = uniform_factor(spec.d, spec.rank_b, spec.seed, streams::factor_ub);
    const auto vb = uniform_factor(spec.d, spec.rank_b, spec.seed, streams::factor_vb);
    const auto up = uniform_factor(spec.d, spec.rank_p, spec.seed, streams::factor_up);
    const auto vp = uniform_factor(spec.d, spec.rank_p, spec.seed, streams::factor_vp);
    return generate_from_factors(ub, vb, up, vp, spec.n, spec.noise_sd, spec.seed);
}

// ---------------------------------------------------------------------------
// MovieLens-style ratings.

struct Rating {
    std::int64_t user = 0;
    std::int64_t item = 0;
    double value = 0.0;
    std::int64_t timestamp = 0;
};

struct RatingsTable {
    std::vector<Rating> ratings;
    std::vector<std::string> warnings;
};

/// Tab-separated `user item rating timestamp` lines (the u.data layout).
inline RatingsTable parse_movielens(std::istream& is) {
    RatingsTable table;
    std::string line;
    std::size_t lineno = 0;
    auto parse_int = [](std::string_view f, std::size_t ln) {
        const double v = parse_double(f, ln);
        if (v != std::floor(v)) throw ParseError("expected an integer, got '" + std::string(f) + "'", ln);
        return static_cast<std::int64_t>(v);
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_fields(line, '\t');
        if (fields.size() != 4) throw ParseError("expected 4 tab-separated fields", lineno);
        Rating r;
        r.user = parse_int(fields[0], lineno);
        r.item = parse_int(fields[1], lineno);
        r.value = parse_double(fields[2], lineno);
        r.timestamp = parse_int(fields[3], lineno);
        table.ratings.push_back(r);
    }
    if (table.ratings.empty()) table.warnings.push_back("ratings file contains no ratings");
    return table;
}

inline RatingsTable load_movielens(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open ratings file '" + path + "'");
    return parse_movielens(in);
}

/// Observations plus the original ids of each dense row and column.
struct IndexedObservations {
    ObservationSet obs;
    std::vector<std::int64_t> row_ids;
    std::vector<std::int64_t> col_ids;
};

namespace detail {

/// Count threshold at the given quantile of per-entity counts: the value at
/// position floor(q * m) of the ascending counts (q = 0 keeps everyone).
inline std::size_t count_threshold(std::vector<std::size_t> counts, double q) {
    std::sort(counts.begin(), counts.end());
    auto pos = static_cast<std::size_t>(std::floor(q * static_cast<double>(counts.size())));
    pos = std::min(pos, counts.size() - 1);
    return counts[pos];
}

} // namespace detail

/// Keep users and items whose rating counts reach the quantile thresholds of the
/// full table (everyone tied at the threshold stays), then keep ratings whose
/// user and item both survive. Ids are re-indexed densely in ascending order.
inline IndexedObservations dense_submatrix(const RatingsTable& table, double user_quantile = 0.75,
                                           double item_quantile = 0.75) {
    if (table.ratings.empty()) throw ConfigError("dense_submatrix: empty ratings table");
    if (!(user_quantile >= 0.0 && user_quantile < 1.0) || !(item_quantile >= 0.0 && item_quantile < 1.0)) {
        throw ConfigError("dense_submatrix: quantiles must lie in [0, 1)");
    }
    std::map<std::int64_t, std::size_t> user_counts, item_counts;
    for (const auto& r : table.ratings) {
        ++user_counts[r.user];
        ++item_counts[r.item];
    }
    auto values = [](const std::map<std::int64_t, std::size_t>& m) {
        std::vector<std::size_t> v;
        for (const auto& [id, c] : m) v.push_back(c);
        return v;
    };
    const std::size_t user_cut = detail::count_threshold(values(user_counts), user_quantile);
    const std::size_t item_cut = detail::count_threshold(values(item_counts), item_quantile);

    IndexedObservations out;
    std::unordered_map<std::int64_t, std::size_t> row_of, col_of;
    for (const auto& [id, c] : user_counts) {
        if (c >= user_cut) {
            row_of[id] = out.row_ids.size();
            out.row_ids.push_back(id);
        }
    }
    for (const auto& [id, c] : item_counts) {
        if (c >= item_cut) {
            col_of[id] = out.col_ids.size();
            out.col_ids.push_back(id);
        }
    }
    for (const auto& r : table.ratings) {
        auto ri = row_of.find(r.user);
        auto ci = col_of.find(r.item);
        if (ri != row_of.end() && ci != col_of.end()) {
            out.obs.samples.push_back({ri->second, ci->second, r.value});
        }
    }
    if (out.obs.samples.empty()) throw ConfigError("dense_submatrix: no ratings survive the thresholds");
    // Rows or columns whose ratings all fell outside the kept set would be empty;
    // re-index once more over the surviving ratings.
    std::vector<bool> row_used(out.row_ids.size()), col_used(out.col_ids.size());
    for (const auto& s : out.obs.samples) {
        row_used[s.row] = true;
        col_used[s.col] = true;
    }
    std::vector<std::size_t> row_map(out.row_ids.size()), col_map(out.col_ids.size());
    std::vector<std::int64_t> rows, cols;
    for (std::size_t i = 0; i < out.row_ids.size(); ++i) {
        if (row_used[i]) {
            row_map[i] = rows.size();
            rows.push_back(out.row_ids[i]);
        }
    }
    for (std::size_t i = 0; i < out.col_ids.size(); ++i) {
        if (col_used[i]) {
            col_map[i] = cols.size();
            cols.push_back(out.col_ids[i]);
        }
    }
    for (auto& s : out.obs.samples) {
        s.row = row_map[s.row];
        s.col = col_map[s.col];
    }
    out.row_ids = std::move(rows);
    out.col_ids = std::move(cols);
    out.obs.n_rows = out.row_ids.size();
    out.obs.n_cols = out.col_ids.size();
    return out;
}

// ---------------------------------------------------------------------------
// Lab-style preprocessing: log(1 + x), then per-column standardization.

struct ColumnStats {
    std::vector<double> mean;
    std::vector<double> sd;
};

inline constexpr double sd_floor = 1e-12;

/// Average repeated observations of the same cell into one.
inline ObservationSet average_duplicates(const ObservationSet& obs) {
    obs.validate();
    std::map<std::pair<std::size_t, std::size_t>, std::pair<double, std::size_t>> cells;
    for (const auto& s : obs.samples) {
        auto& c = cells[{s.row, s.col}];
        c.first += s.value;
        ++c.second;
    }
    ObservationSet out{obs.n_rows, obs.n_cols, {}};
    for (const auto& [key, acc] : cells) {
        out.samples.push_back({key.first, key.second, acc.first / static_cast<double>(acc.second)});
    }
    return out;
}

inline double log1p_checked(double v) {
    if (!(v > -1.0)) throw DomainError("preprocess_labstyle: value " + format_double(v) + " is <= -1");
    return std::log1p(v);
}

/// Column means and standard deviations of log(1 + value) over `train`.
/// Columns without training data get mean 0 and sd 1.
inline ColumnStats fit_column_stats(const ObservationSet& train) {
    train.validate();
    ColumnStats st;
    st.mean.assign(train.n_cols, 0.0);
    st.sd.assign(train.n_cols, 1.0);
    std::vector<double> sum(train.n_cols, 0.0), sumsq(train.n_cols, 0.0);
    std::vector<std::size_t> cnt(train.n_cols, 0);
    for (const auto& s : train.samples) {
        const double v = log1p_checked(s.value);
        sum[s.col] += v;
        ++cnt[s.col];
    }
    for (std::size_t c = 0; c < train.n_cols; ++c) {
        if (cnt[c]) st.mean[c] = sum[c] / static_cast<double>(cnt[c]);
    }
    for (const auto& s : train.samples) {
        const double dv = log1p_checked(s.value) - st.mean[s.col];
        sumsq[s.col] += dv * dv;
    }
    for (std::size_t c = 0; c < train.n_cols; ++c) {
        if (cnt[c]) st.sd[c] = std::max(std::sqrt(sumsq[c] / static_cast<double>(cnt[c])), sd_floor);
    }
    return st;
}

inline ObservationSet apply_column_stats(const ObservationSet& obs, const ColumnStats& st) {
    obs.validate();
    if (st.mean.size() != obs.n_cols) throw DimensionError("column stats do not match observation columns");
    ObservationSet out = obs;
    for (auto& s : out.samples) s.value = (log1p_checked(s.value) - st.mean[s.col]) / st.sd[s.col];
    return out;
}

/// Map a standardized prediction for column `col` back to the raw scale.
inline double invert_column_stats(double z, std::size_t col, const ColumnStats& st) {
    return std::expm1(z * st.sd.at(col) + st.mean.at(col));
}

inline DenseMatrix invert_column_stats(const DenseMatrix& z, const ColumnStats& st) {
    DenseMatrix out(z.rows(), z.cols());
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
        for (Eigen::Index k = 0; k < z.cols(); ++k) {
            out(j, k) = invert_column_stats(z(j, k), static_cast<std::size_t>(k), st);
        }
    }
    return out;
}

struct Preprocessed {
    ObservationSet obs;
    ColumnStats stats;
};

/// Fit the transform on `train` and apply it to `obs`.
inline Preprocessed preprocess_labstyle(const ObservationSet& obs, const ObservationSet& train) {
    Preprocessed out;
    out.stats = fit_column_stats(train);
    out.obs = apply_column_stats(obs, out.stats);
    return out;
}

inline Preprocessed preprocess_labstyle(const ObservationSet& obs) { return preprocess_labstyle(obs, obs); }

} // namespace nucomplete
