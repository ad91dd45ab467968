#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#include "nucomplete/config.hpp"
#include "nucomplete/dataio.hpp"
#include "nucomplete/error.hpp"
#include "nucomplete/estimators.hpp"
#include "nucomplete/evaluation.hpp"
#include "nucomplete/metrics.hpp"
#include "nucomplete/parallel.hpp"
#include "nucomplete/weights.hpp"

namespace nucomplete {

using Json = nlohmann::ordered_json;
using Logger = std::function<void(const std::string&)>;

/// Files written by one command, relative to the output directory, in write order.
struct RunOutput {
    std::filesystem::path dir;
    std::vector<std::string> files;
    std::size_t n_cells = 0;
    std::size_t n_failed = 0;

    bool ok() const { return n_failed == 0; }
};

namespace detail {

inline void log_to(const Logger& log, const std::string& msg) {
    if (log) log(msg);
}

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw IoError("sha256 failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(RunOutput& out, const std::string& rel, const std::string& bytes) {
    const std::filesystem::path p = out.dir / rel;
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + p.parent_path().string() + "': " + ec.message());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write '" + p.string() + "'");
    f << bytes;
    if (!f) throw IoError("write failed for '" + p.string() + "'");
    out.files.push_back(rel);
}

inline std::string matrix_text(const DenseMatrix& m) {
    std::ostringstream ss;
    write_matrix_csv(ss, m);
    return ss.str();
}

inline std::string observations_text(const ObservationSet& obs) {
    std::ostringstream ss;
    write_observations_csv(ss, obs);
    return ss.str();
}

inline DenseMatrix load_matrix(const std::filesystem::path& p) {
    std::istringstream ss(read_file(p));
    try {
        return read_matrix_csv(ss);
    } catch (const ParseError& e) {
        throw IoError(p.string() + ": " + e.what());
    }
}

inline ObservationSet load_observations(const std::filesystem::path& p, std::size_t rows = 0, std::size_t cols = 0) {
    std::istringstream ss(read_file(p));
    try {
        return read_observations_csv(ss, rows, cols);
    } catch (const ParseError& e) {
        throw IoError(p.string() + ": " + e.what());
    }
}

inline std::string json_text(const Json& j) { return j.dump(2) + "\n"; }

/// Manifest listing every file written so far with its SHA-256.
inline void write_manifest(RunOutput& out, const std::string& command, const Json& extra) {
    Json m;
    m["command"] = command;
    m["cells"] = out.n_cells;
    m["failed_cells"] = out.n_failed;
    for (const auto& [k, v] : extra.items()) m[k] = v;
    Json files = Json::array();
    for (const auto& rel : out.files) {
        files.push_back({{"path", rel}, {"sha256", sha256_hex(read_file(out.dir / rel))}});
    }
    m["files"] = files;
    write_file(out, "manifest.json", json_text(m));
}

inline Json solver_json(const SolverConfig& s) {
    return {{"beta", s.beta},         {"t_init", s.t_init},          {"tol", s.tol},
            {"max_iter", s.max_iter}, {"path_length", s.path_length}, {"path_ratio", s.path_ratio},
            {"lambdas", s.lambdas}};
}

inline Json method_json(const EstimatorSpec& e) {
    Json j{{"method", to_string(e.method)}, {"solver", solver_json(e.solver)}};
    if (e.method == Method::nu_recommend) {
        j["weights"] = {{"l_bound", e.weights.l_bound},
                        {"gamma", e.weights.gamma},
                        {"solver", e.weights.solver == WeightSolver::admm ? "admm" : "subgradient"},
                        {"max_iter", e.weights.max_iter},
                        {"tol", e.weights.tol},
                        {"step_size", e.weights.step_size},
                        {"admm_threshold", e.weights.admm_threshold}};
        j["raw_method"] = to_string(e.raw_method);
    }
    if (e.method == Method::nu_recommend || e.method == Method::ipw_uniform) {
        j["sampling_method"] = to_string(e.sampling_method);
    }
    return j;
}

/// Resolved configuration echoed into the manifest. Parallelism is left out so
/// that the manifest does not depend on it.
inline Json config_json(const ExperimentConfig& c) {
    static const char* kinds[] = {"synthetic", "movielens", "labstyle", "observations"};
    Json j;
    j["dataset"] = kinds[static_cast<int>(c.dataset)];
    if (c.dataset == DatasetKind::synthetic) {
        j["synthetic"] = {{"d", c.synthetic.d},
                          {"rank_b", c.synthetic.rank_b},
                          {"rank_p", c.synthetic.rank_p},
                          {"noise_sd", c.synthetic.noise_sd},
                          {"n", c.sample_sizes},
                          {"seed", c.synthetic.seed}};
    } else {
        j["path"] = c.dataset_path;
        if (c.dataset == DatasetKind::movielens) {
            j["user_quantile"] = c.user_quantile;
            j["item_quantile"] = c.item_quantile;
        }
    }
    j["plan"] = {{"n_repeats", c.plan.n_repeats},
                 {"seed", c.plan.rng_seed},
                 {"eval_fraction", c.plan.eval_fraction},
                 {"inner_train_fraction", c.plan.inner_train_fraction}};
    Json methods = Json::array();
    for (const auto& m : c.methods) methods.push_back(method_json(m));
    j["methods"] = methods;
    return j;
}

inline Json fairness_json(const std::optional<FairnessResult>& f, const std::string& error) {
    if (!f) return {{"error", error}};
    return {{"slope", f->slope},     {"intercept", f->intercept}, {"slope_se", f->slope_se},
            {"t_stat", f->t_stat},   {"p_value", f->p_value},     {"n_points", f->n_points}};
}

struct AxisFairness {
    std::optional<FairnessResult> result;
    std::string error;
};

inline AxisFairness try_fairness(const DenseMatrix& b_hat, const ObservationSet& test, const SamplingEstimate& s,
                                 Axis axis) {
    AxisFairness out;
    try {
        out.result = fairness_regression(b_hat, test, s, axis);
    } catch (const Error& e) {
        out.error = e.what();
    }
    return out;
}

/// One (method, sample size, repeat) unit of work.
struct Cell {
    std::size_t method = 0;
    std::size_t n_index = 0; // synthetic only
    std::size_t repeat = 0;
};

struct CellOutcome {
    bool ok = false;
    std::string error;
    double lambda = 0.0;
    double relative_frobenius = 0.0; // synthetic
    double relative_l2pi = 0.0;      // synthetic
    double test_rmse = 0.0;          // real data
    DenseMatrix b_hat;
    AxisFairness rows, cols;
};

inline std::string cell_tag(const ExperimentConfig& c, const Cell& cell) {
    std::string tag = to_string(c.methods[cell.method].method);
    if (c.dataset == DatasetKind::synthetic) tag += "_n" + std::to_string(c.sample_sizes[cell.n_index]);
    return tag + "_r" + std::to_string(cell.repeat);
}

inline SyntheticSpec synthetic_spec(const ExperimentConfig& c, std::size_t n_index, std::size_t repeat) {
    SyntheticSpec s = c.synthetic;
    s.n = c.sample_sizes[n_index];
    s.seed = c.synthetic.seed + repeat;
    return s;
}

/// Real-data observations in the space the models are fitted in, for one repeat.
struct RepeatData {
    ObservationSet obs;
    std::optional<ColumnStats> stats;
};

inline RepeatData repeat_data(const ExperimentConfig& c, const ObservationSet& base, std::size_t repeat) {
    RepeatData r;
    if (c.dataset == DatasetKind::labstyle) {
        const RepeatSplit split = make_split(c.plan, repeat, base.size());
        Preprocessed p = preprocess_labstyle(base, base.subset(split.eval));
        r.obs = std::move(p.obs);
        r.stats = std::move(p.stats);
    } else {
        r.obs = base;
    }
    return r;
}

inline Json stats_json(const ColumnStats& s) { return {{"mean", s.mean}, {"sd", s.sd}}; }

inline Json aggregate_fairness(const std::vector<const AxisFairness*>& cells) {
    std::vector<double> slopes, ps;
    std::size_t neg_sig = 0, non_sig = 0;
    for (const auto* a : cells) {
        if (!a->result) continue;
        slopes.push_back(a->result->slope);
        ps.push_back(a->result->p_value);
        if (a->result->slope < 0.0 && a->result->p_value < 0.05) ++neg_sig;
        if (a->result->p_value > 0.05) ++non_sig;
    }
    if (slopes.empty()) return {{"error", "no cell had enough data"}};
    double mean_slope = 0.0;
    for (double s : slopes) mean_slope += s;
    mean_slope /= static_cast<double>(slopes.size());
    std::sort(ps.begin(), ps.end());
    const std::size_t m = ps.size();
    const double median_p = m % 2 ? ps[m / 2] : 0.5 * (ps[m / 2 - 1] + ps[m / 2]);
    return {{"slope", mean_slope},
            {"p_value", median_p},
            {"cells", m},
            {"negative_significant", neg_sig},
            {"not_significant", non_sig}};
}

} // namespace detail

// ---------------------------------------------------------------------------
// generate

/// Writes B*, P* and one observation file per configured sample size.
inline RunOutput cmd_generate(const ExperimentConfig& c, const Logger& log = {}) {
    if (c.dataset != DatasetKind::synthetic) throw ConfigError("generate: dataset.kind must be synthetic");
    RunOutput out{c.output_dir, {}, 0, 0};
    bool first = true;
    for (std::size_t i = 0; i < c.sample_sizes.size(); ++i) {
        const SyntheticSpec spec = detail::synthetic_spec(c, i, 0);
        spec.validate();
        const SyntheticData data = generate_synthetic(spec);
        if (first) {
            detail::write_file(out, "b_star.csv", detail::matrix_text(data.b_star));
            detail::write_file(out, "p_star.csv", detail::matrix_text(data.p_star));
            first = false;
        }
        const std::string name =
            c.sample_sizes.size() == 1 ? "observations.csv" : "observations_n" + std::to_string(spec.n) + ".csv";
        detail::write_file(out, name, detail::observations_text(data.obs));
        detail::log_to(log, "generated " + name);
    }
    detail::write_manifest(out, "generate", {{"config", detail::config_json(c)}});
    return out;
}

// ---------------------------------------------------------------------------
// experiment

/// Loads a non-synthetic dataset into observations.
inline ObservationSet load_dataset(const ExperimentConfig& c, Json* info = nullptr) {
    switch (c.dataset) {
    case DatasetKind::movielens: {
        const RatingsTable table = load_movielens(c.dataset_path);
        IndexedObservations sub = dense_submatrix(table, c.user_quantile, c.item_quantile);
        if (info) {
            (*info)["ratings"] = table.ratings.size();
            (*info)["rows"] = sub.obs.n_rows;
            (*info)["cols"] = sub.obs.n_cols;
            (*info)["observations"] = sub.obs.size();
        }
        return std::move(sub.obs);
    }
    case DatasetKind::labstyle: {
        ObservationSet obs = average_duplicates(detail::load_observations(c.dataset_path, c.input_rows, c.input_cols));
        if (info) {
            (*info)["rows"] = obs.n_rows;
            (*info)["cols"] = obs.n_cols;
            (*info)["observations"] = obs.size();
        }
        return obs;
    }
    case DatasetKind::observations: {
        ObservationSet obs = detail::load_observations(c.dataset_path, c.input_rows, c.input_cols);
        if (info) {
            (*info)["rows"] = obs.n_rows;
            (*info)["cols"] = obs.n_cols;
            (*info)["observations"] = obs.size();
        }
        return obs;
    }
    case DatasetKind::synthetic: break;
    }
    throw ConfigError("load_dataset: synthetic data is generated, not loaded");
}

/// Runs every (method x sample size x repeat) cell on `parallelism` workers and
/// writes the merged reports. Failed cells are recorded and skipped.
///
/// Synthetic data: lambda is chosen per cell by distance to B*; errors are the
/// relative Frobenius and relative L2(P*) distances; fairness regresses per-row
/// (per-column) RMSE over the full grid on the margins estimated from the cell's
/// observations.
///
/// Real data: each repeat is an eval/test split with lambda chosen on an inner
/// validation split; fairness uses the test observations and the eval margins.
inline RunOutput cmd_experiment(const ExperimentConfig& c, const Logger& log = {}) {
    c.validate();
    const bool synthetic = c.dataset == DatasetKind::synthetic;
    RunOutput out{c.output_dir, {}, 0, 0};

    Json dataset_info = Json::object();
    ObservationSet base;
    if (!synthetic) base = load_dataset(c, &dataset_info);

    std::vector<detail::Cell> cells;
    const std::size_t n_sizes = synthetic ? c.sample_sizes.size() : 1;
    for (std::size_t m = 0; m < c.methods.size(); ++m) {
        for (std::size_t i = 0; i < n_sizes; ++i) {
            for (std::size_t r = 0; r < c.plan.n_repeats; ++r) cells.push_back({m, i, r});
        }
    }
    out.n_cells = cells.size();
    std::vector<detail::CellOutcome> results(cells.size());

    parallel_for(cells.size(), c.parallelism, [&](std::size_t k) {
        const detail::Cell& cell = cells[k];
        detail::CellOutcome& res = results[k];
        try {
            EstimatorSpec spec = c.methods[cell.method];
            if (synthetic) {
                const SyntheticData data = generate_synthetic(detail::synthetic_spec(c, cell.n_index, cell.repeat));
                spec.seed = repeat_seed(c.plan.rng_seed, cell.repeat);
                const MethodFit fit = fit_method(data.obs, spec, &data.b_star);
                const std::size_t best = select_by_truth(fit.path, data.b_star);
                res.lambda = fit.path[best].lambda;
                res.b_hat = fit.path[best].b_hat;
                res.relative_frobenius = relative_frobenius(res.b_hat, data.b_star);
                res.relative_l2pi = relative_l2pi(res.b_hat, data.b_star, data.p_star);
                const ObservationSet grid = full_grid_observations(data.b_star);
                const SamplingEstimate margins = estimate_rank1(data.obs);
                res.rows = detail::try_fairness(res.b_hat, grid, margins, Axis::rows);
                res.cols = detail::try_fairness(res.b_hat, grid, margins, Axis::cols);
            } else {
                const detail::RepeatData rd = detail::repeat_data(c, base, cell.repeat);
                const RepeatOutcome o = cross_validate_repeat(rd.obs, spec, c.plan, cell.repeat);
                res.lambda = o.lambda;
                res.b_hat = o.b_hat;
                res.test_rmse = o.test_rmse;
                const ObservationSet test = rd.obs.subset(o.split.test);
                const SamplingEstimate margins = estimate_rank1(rd.obs.subset(o.split.eval));
                res.rows = detail::try_fairness(res.b_hat, test, margins, Axis::rows);
                res.cols = detail::try_fairness(res.b_hat, test, margins, Axis::cols);
            }
            res.ok = true;
        } catch (const std::exception& e) {
            res.ok = false;
            res.error = e.what();
        }
        detail::log_to(log, "cell " + detail::cell_tag(c, cell) + (res.ok ? " done" : " failed: " + res.error));
    });

    // Single writer from here on, in cell order.
    std::ostringstream csv;
    csv << (synthetic ? "method,n,repeat,lambda,relative_frobenius,relative_l2pi\n" : "method,repeat,lambda,test_rmse\n");
    Json cell_index = Json::array();
    Json fairness_cells = Json::array();
    Json failures = Json::array();
    for (std::size_t k = 0; k < cells.size(); ++k) {
        const auto& cell = cells[k];
        const auto& res = results[k];
        const char* mname = to_string(c.methods[cell.method].method);
        Json entry{{"method", mname}, {"repeat", cell.repeat}};
        if (synthetic) entry["n"] = c.sample_sizes[cell.n_index];
        if (!res.ok) {
            ++out.n_failed;
            entry["status"] = "failed";
            entry["error"] = res.error;
            failures.push_back(entry);
            cell_index.push_back(entry);
            continue;
        }
        csv << mname << ',';
        if (synthetic) csv << c.sample_sizes[cell.n_index] << ',';
        csv << cell.repeat << ',' << format_double(res.lambda) << ',';
        if (synthetic) {
            csv << format_double(res.relative_frobenius) << ',' << format_double(res.relative_l2pi) << '\n';
        } else {
            csv << format_double(res.test_rmse) << '\n';
        }
        const std::string pred = "predictions/" + detail::cell_tag(c, cell) + ".csv";
        detail::write_file(out, pred, detail::matrix_text(res.b_hat));
        entry["status"] = "ok";
        entry["prediction"] = pred;
        if (synthetic) {
            const std::string r = std::to_string(cell.repeat);
            entry["truth"] = "data/r" + r + "_b_star.csv";
            entry["observations"] = "data/n" + std::to_string(c.sample_sizes[cell.n_index]) + "_r" + r + "_observations.csv";
        } else {
            entry["eval"] = "data/r" + std::to_string(cell.repeat) + "_eval.csv";
            entry["test"] = "data/r" + std::to_string(cell.repeat) + "_test.csv";
        }
        cell_index.push_back(entry);
        Json fc{{"method", mname}, {"repeat", cell.repeat}};
        if (synthetic) fc["n"] = c.sample_sizes[cell.n_index];
        fc["rows"] = detail::fairness_json(res.rows.result, res.rows.error);
        fc["cols"] = detail::fairness_json(res.cols.result, res.cols.error);
        fairness_cells.push_back(fc);
    }

    // Inputs needed to replay the fairness regressions.
    if (synthetic) {
        for (std::size_t r = 0; r < c.plan.n_repeats; ++r) {
            for (std::size_t i = 0; i < c.sample_sizes.size(); ++i) {
                const SyntheticData data = generate_synthetic(detail::synthetic_spec(c, i, r));
                if (i == 0) {
                    detail::write_file(out, "data/r" + std::to_string(r) + "_b_star.csv",
                                       detail::matrix_text(data.b_star));
                    detail::write_file(out, "data/r" + std::to_string(r) + "_p_star.csv",
                                       detail::matrix_text(data.p_star));
                }
                detail::write_file(out,
                                   "data/n" + std::to_string(c.sample_sizes[i]) + "_r" + std::to_string(r) +
                                       "_observations.csv",
                                   detail::observations_text(data.obs));
            }
        }
    } else {
        for (std::size_t r = 0; r < c.plan.n_repeats; ++r) {
            const detail::RepeatData rd = detail::repeat_data(c, base, r);
            const RepeatSplit split = make_split(c.plan, r, rd.obs.size());
            const std::string p = "data/r" + std::to_string(r);
            detail::write_file(out, p + "_eval.csv", detail::observations_text(rd.obs.subset(split.eval)));
            detail::write_file(out, p + "_test.csv", detail::observations_text(rd.obs.subset(split.test)));
            if (rd.stats) detail::write_file(out, p + "_preprocessing.json", detail::json_text(detail::stats_json(*rd.stats)));
        }
    }

    detail::write_file(out, "results.csv", csv.str());

    // Summary and plot data, per method (and sample size).
    Json summary;
    summary["dataset"] = detail::config_json(c)["dataset"];
    if (!synthetic) summary["data"] = dataset_info;
    Json groups = Json::array();
    std::ostringstream plot;
    plot << "x,method,mean,two_se\n";
    for (std::size_t m = 0; m < c.methods.size(); ++m) {
        for (std::size_t i = 0; i < n_sizes; ++i) {
            std::vector<double> err, err2;
            std::vector<const detail::AxisFairness*> rows, cols;
            for (std::size_t k = 0; k < cells.size(); ++k) {
                if (cells[k].method != m || cells[k].n_index != i || !results[k].ok) continue;
                err.push_back(synthetic ? results[k].relative_frobenius : results[k].test_rmse);
                err2.push_back(results[k].relative_l2pi);
                rows.push_back(&results[k].rows);
                cols.push_back(&results[k].cols);
            }
            const char* mname = to_string(c.methods[m].method);
            Json g{{"method", mname}};
            if (synthetic) g["n"] = c.sample_sizes[i];
            g["repeats"] = err.size();
            if (err.empty()) {
                g["error"] = "all cells failed";
                groups.push_back(g);
                continue;
            }
            const MeanTwoSe a = mean_two_se(err);
            if (synthetic) {
                const MeanTwoSe b = mean_two_se(err2);
                g["mean_relative_frobenius"] = a.mean;
                g["two_se"] = a.two_se;
                g["mean_relative_l2pi"] = b.mean;
                g["two_se_l2pi"] = b.two_se;
            } else {
                g["mean_rmse"] = a.mean;
                g["two_se"] = a.two_se;
            }
            g["fairness"] = {{"rows", detail::aggregate_fairness(rows)}, {"cols", detail::aggregate_fairness(cols)}};
            groups.push_back(g);
            plot << (synthetic ? std::to_string(c.sample_sizes[i]) : std::string(mname)) << ',' << mname << ','
                 << format_double(a.mean) << ',' << format_double(a.two_se) << '\n';
        }
    }
    summary["methods"] = groups;
    summary["failed"] = failures;
    detail::write_file(out, "summary.json", detail::json_text(summary));
    detail::write_file(out, "plot_data.csv", plot.str());
    detail::write_file(out, "fairness_run.json", detail::json_text(fairness_cells));
    detail::write_file(out, "cells.json", detail::json_text(cell_index));
    detail::write_manifest(out, "experiment", {{"config", detail::config_json(c)}});
    return out;
}

// ---------------------------------------------------------------------------
// fairness

/// Recomputes the row and column fairness regressions of a finished experiment
/// from its persisted predictions, after checking the manifest hashes.
inline RunOutput cmd_fairness(const ExperimentConfig& c, const Logger& log = {}) {
    const std::filesystem::path dir = c.output_dir;
    const Json manifest = Json::parse(detail::read_file(dir / "manifest.json"));
    std::map<std::string, std::string> hashes;
    for (const auto& f : manifest.at("files")) hashes[f.at("path").get<std::string>()] = f.at("sha256");
    auto checked = [&](const std::string& rel) {
        const auto it = hashes.find(rel);
        if (it == hashes.end()) throw IoError("fairness: '" + rel + "' is not listed in the manifest");
        if (detail::sha256_hex(detail::read_file(dir / rel)) != it->second) {
            throw IoError("fairness: '" + rel + "' does not match its manifest hash");
        }
        return dir / rel;
    };

    const Json index = Json::parse(detail::read_file(checked("cells.json")));
    RunOutput out{dir, {}, 0, 0};
    Json cells_out = Json::array();
    std::map<std::string, std::vector<detail::AxisFairness>> rows_by, cols_by;
    std::vector<std::string> order;
    for (const auto& e : index) {
        if (e.at("status") != "ok") continue;
        ++out.n_cells;
        const DenseMatrix b_hat = detail::load_matrix(checked(e.at("prediction")));
        ObservationSet test;
        SamplingEstimate margins;
        if (e.contains("truth")) {
            const DenseMatrix truth = detail::load_matrix(checked(e.at("truth")));
            test = full_grid_observations(truth);
            margins = estimate_rank1(detail::load_observations(checked(e.at("observations")),
                                                               static_cast<std::size_t>(truth.rows()),
                                                               static_cast<std::size_t>(truth.cols())));
        } else {
            const auto rows = static_cast<std::size_t>(b_hat.rows()), cols = static_cast<std::size_t>(b_hat.cols());
            test = detail::load_observations(checked(e.at("test")), rows, cols);
            margins = estimate_rank1(detail::load_observations(checked(e.at("eval")), rows, cols));
        }
        const auto fr = detail::try_fairness(b_hat, test, margins, Axis::rows);
        const auto fc = detail::try_fairness(b_hat, test, margins, Axis::cols);
        Json j{{"method", e.at("method")}, {"repeat", e.at("repeat")}};
        std::string group = e.at("method").get<std::string>();
        if (e.contains("n")) {
            j["n"] = e.at("n");
            group += " n=" + std::to_string(e.at("n").get<std::size_t>());
        }
        j["rows"] = detail::fairness_json(fr.result, fr.error);
        j["cols"] = detail::fairness_json(fc.result, fc.error);
        cells_out.push_back(j);
        if (!rows_by.count(group)) order.push_back(group);
        rows_by[group].push_back(fr);
        cols_by[group].push_back(fc);
        if (!fr.result || !fc.result) ++out.n_failed;
    }

    Json groups = Json::array();
    for (const auto& g : order) {
        std::vector<const detail::AxisFairness*> r, cc;
        for (const auto& a : rows_by[g]) r.push_back(&a);
        for (const auto& a : cols_by[g]) cc.push_back(&a);
        groups.push_back({{"group", g}, {"rows", detail::aggregate_fairness(r)}, {"cols", detail::aggregate_fairness(cc)}});
        detail::log_to(log, "fairness " + g);
    }
    detail::write_file(out, "fairness.json", detail::json_text({{"groups", groups}, {"cells", cells_out}}));
    // Cells with an axis that could not be regressed count as failed.
    Json m{{"command", "fairness"}, {"cells", out.n_cells}, {"failed_cells", out.n_failed}};
    Json files = Json::array();
    files.push_back({{"path", "fairness.json"}, {"sha256", detail::sha256_hex(detail::read_file(dir / "fairness.json"))}});
    m["files"] = files;
    detail::write_file(out, "fairness_manifest.json", detail::json_text(m));
    return out;
}

// ---------------------------------------------------------------------------
// Single-step commands.

inline ObservationSet input_observations(const ExperimentConfig& c) {
    if (c.input_observations.empty()) throw ConfigError("input.observations is required");
    ObservationSet obs = detail::load_observations(c.input_observations, c.input_rows, c.input_cols);
    obs.require_nonempty("input.observations");
    return obs;
}

/// Sampling estimate of the configured method (first entry of `methods` decides
/// nothing here; sampling.method does).
inline RunOutput cmd_estimate_sampling(const ExperimentConfig& c, const Logger& log = {}) {
    const ObservationSet obs = input_observations(c);
    const SamplingMethod method = c.methods.empty() ? SamplingMethod::rank1 : c.methods.front().sampling_method;
    const std::uint64_t seed = repeat_seed(c.plan.rng_seed, 0);
    const SamplingEstimate s = estimate_sampling(obs, method, seed);
    RunOutput out{c.output_dir, {}, 1, 0};
    detail::write_file(out, "p_hat.csv", detail::matrix_text(s.p_hat));
    std::vector<double> rm(s.row_margins.data(), s.row_margins.data() + s.row_margins.size());
    std::vector<double> cm(s.col_margins.data(), s.col_margins.data() + s.col_margins.size());
    Json j{{"method", to_string(s.method)}, {"row_margins", rm}, {"col_margins", cm}};
    if (s.method == SamplingMethod::pmlsvt) {
        j["lambda"] = s.lambda;
        j["iterations"] = s.iterations;
        j["converged"] = s.converged;
    }
    detail::write_file(out, "sampling.json", detail::json_text(j));
    detail::log_to(log, std::string("sampling estimate: ") + to_string(s.method));
    detail::write_manifest(out, "estimate-sampling", {});
    return out;
}

inline Json diagnostics_json(const BoundDiagnostics& d) {
    return {{"l", d.l}, {"p_min", d.p_min}, {"n_star", d.n_star}, {"r_tilde", d.r_tilde}, {"bound_value", d.bound_value}};
}

/// Weight program on input.b_raw and input.p_hat. Bound diagnostics are added
/// when input.observations supplies n.
inline RunOutput cmd_construct_weights(const ExperimentConfig& c, const Logger& log = {}) {
    if (c.input_b_raw.empty() || c.input_p_hat.empty()) {
        throw ConfigError("construct-weights: input.b_raw and input.p_hat are required");
    }
    const DenseMatrix b_raw = detail::load_matrix(c.input_b_raw);
    const DenseMatrix p_hat = detail::load_matrix(c.input_p_hat);
    const WeightConstructionConfig wcfg =
        c.methods.empty() ? WeightConstructionConfig{} : c.methods.front().weights;
    const WeightConstruction wc = construct_weights(b_raw, p_hat, wcfg);
    RunOutput out{c.output_dir, {}, 1, 0};
    detail::write_file(out, "weights.csv", detail::matrix_text(wc.weights));
    Json j{{"objective", wc.objective}, {"initial_objective", wc.initial_objective}, {"iterations", wc.iterations}};
    if (!c.input_observations.empty()) {
        const ObservationSet obs = input_observations(c);
        const double d = static_cast<double>(std::max(b_raw.rows(), b_raw.cols()));
        const double rho = c.diag_rho > 0.0 ? c.diag_rho : std::log(d);
        j["diagnostics"] = diagnostics_json(bound_diagnostics(b_raw, wc.weights, p_hat, obs.size(), c.diag_sigma, rho));
    }
    detail::write_file(out, "weights.json", detail::json_text(j));
    detail::log_to(log, "weights: objective " + format_double(wc.objective));
    detail::write_manifest(out, "construct-weights", {});
    return out;
}

/// Regularization path of the first configured method on input.observations, or
/// of the weighted solver with input.weights when that is given.
inline RunOutput cmd_fit(const ExperimentConfig& c, const Logger& log = {}) {
    const ObservationSet obs = input_observations(c);
    if (c.methods.empty()) throw ConfigError("fit: no method configured");
    EstimatorSpec spec = c.methods.front();
    spec.seed = repeat_seed(c.plan.rng_seed, 0);
    std::vector<FitResult> path;
    DenseMatrix w;
    if (!c.input_weights.empty()) {
        w = detail::load_matrix(c.input_weights);
        path = fit_path(obs, w, resolve_path(spec.solver, obs, w));
    } else {
        MethodFit f = fit_method(obs, spec);
        path = std::move(f.path);
        w = std::move(f.weights);
    }
    RunOutput out{c.output_dir, {}, path.size(), 0};
    Json fits = Json::array();
    for (std::size_t i = 0; i < path.size(); ++i) {
        const FitResult& f = path[i];
        const std::string name = "fits/lambda_" + std::to_string(i);
        detail::write_file(out, name + ".csv", detail::matrix_text(f.b_hat));
        const double final_objective = f.objective_trace.empty() ? weighted_objective(f.b_hat, obs, w, f.lambda)
                                                                 : f.objective_trace.back();
        const Json meta{{"lambda", f.lambda},
                        {"iterations", f.n_iterations},
                        {"converged", f.converged},
                        {"final_objective", final_objective}};
        detail::write_file(out, name + ".json", detail::json_text(meta));
        Json row = meta;
        row["b_hat"] = name + ".csv";
        fits.push_back(row);
    }
    detail::write_file(out, "weights.csv", detail::matrix_text(w));
    detail::write_file(out, "path.json", detail::json_text({{"method", detail::method_json(spec)}, {"fits", fits}}));
    detail::log_to(log, "fit: " + std::to_string(path.size()) + " lambdas");
    detail::write_manifest(out, "fit", {});
    return out;
}

} // namespace nucomplete
