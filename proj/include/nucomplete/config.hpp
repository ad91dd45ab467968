#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nucomplete/dataio.hpp"
#include "nucomplete/error.hpp"
#include "nucomplete/estimators.hpp"
#include "nucomplete/evaluation.hpp"
#include "nucomplete/matrix.hpp"

namespace nucomplete {

// Flat key-value configuration:
//
//   # comment
//   dataset.kind = synthetic
//   synthetic.n  = 1000, 1200, 1400
//   methods      = uniform, margin, nu_recommend
//
// Keys are dotted names from a fixed schema; unknown keys, duplicate keys and
// values of the wrong type are rejected with the offending line number.

enum class ValueType { integer, real, text, real_list, text_list };

inline const std::map<std::string, ValueType, std::less<>>& config_schema() {
    static const std::map<std::string, ValueType, std::less<>> schema = {
        {"dataset.kind", ValueType::text},
        {"dataset.path", ValueType::text},
        {"synthetic.d", ValueType::integer},
        {"synthetic.rank_b", ValueType::integer},
        {"synthetic.rank_p", ValueType::integer},
        {"synthetic.noise_sd", ValueType::real},
        {"synthetic.n", ValueType::real_list},
        {"synthetic.seed", ValueType::integer},
        {"movielens.user_quantile", ValueType::real},
        {"movielens.item_quantile", ValueType::real},
        {"methods", ValueType::text_list},
        {"solver.beta", ValueType::real},
        {"solver.t_init", ValueType::real},
        {"solver.tol", ValueType::real},
        {"solver.max_iter", ValueType::integer},
        {"solver.path_length", ValueType::integer},
        {"solver.path_ratio", ValueType::real},
        {"solver.lambdas", ValueType::real_list},
        {"weights.l_bound", ValueType::real},
        {"weights.gamma", ValueType::real},
        {"weights.step_size", ValueType::real},
        {"weights.max_iter", ValueType::integer},
        {"weights.tol", ValueType::real},
        {"weights.solver", ValueType::text},
        {"weights.admm_threshold", ValueType::real},
        {"sampling.method", ValueType::text},
        {"nu.raw_method", ValueType::text},
        {"nu.inner_train_fraction", ValueType::real},
        {"plan.n_repeats", ValueType::integer},
        {"plan.seed", ValueType::integer},
        {"plan.eval_fraction", ValueType::real},
        {"plan.inner_train_fraction", ValueType::real},
        {"input.observations", ValueType::text},
        {"input.rows", ValueType::integer},
        {"input.cols", ValueType::integer},
        {"input.b_raw", ValueType::text},
        {"input.p_hat", ValueType::text},
        {"input.weights", ValueType::text},
        {"diagnostics.sigma", ValueType::real},
        {"diagnostics.rho", ValueType::real},
        {"output.dir", ValueType::text},
        {"run.parallelism", ValueType::integer},
    };
    return schema;
}

/// Parsed key-value file; values are kept as text and converted on access.
class ConfigFile {
public:
    static ConfigFile parse(std::istream& is) {
        ConfigFile cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const std::string text = trim(line);
            if (text.empty()) continue;
            const auto eq = text.find('=');
            if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
            const std::string key = trim(text.substr(0, eq));
            const std::string value = trim(text.substr(eq + 1));
            const auto it = config_schema().find(key);
            if (it == config_schema().end()) throw ParseError("unknown key '" + key + "'", lineno);
            if (cfg.values_.count(key)) throw ParseError("duplicate key '" + key + "'", lineno);
            check_type(value, it->second, lineno);
            cfg.values_[key] = {value, lineno};
        }
        return cfg;
    }

    static ConfigFile load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file '" + path + "'");
        return parse(in);
    }

    bool has(std::string_view key) const { return values_.find(key) != values_.end(); }

    /// Override or add a value (command-line flags).
    void set(const std::string& key, const std::string& value) {
        const auto it = config_schema().find(key);
        if (it == config_schema().end()) throw ConfigError("unknown key '" + key + "'");
        check_type(value, it->second, 0);
        values_[key] = {value, 0};
    }

    std::string text(std::string_view key, std::string fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second.value;
    }

    double real(std::string_view key, double fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : parse_double(it->second.value, it->second.line);
    }

    std::int64_t integer(std::string_view key, std::int64_t fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : parse_integer(it->second.value, it->second.line);
    }

    std::size_t count(std::string_view key, std::size_t fallback) const {
        const std::int64_t v = integer(key, static_cast<std::int64_t>(fallback));
        if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
        return static_cast<std::size_t>(v);
    }

    std::vector<double> reals(std::string_view key, std::vector<double> fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        for (const auto& f : list_items(it->second.value)) out.push_back(parse_double(f, it->second.line));
        return out;
    }

    std::vector<std::string> texts(std::string_view key, std::vector<std::string> fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : list_items(it->second.value);
    }

private:
    struct Entry {
        std::string value;
        std::size_t line = 0;
    };
    std::map<std::string, Entry, std::less<>> values_;

    static std::string trim(std::string_view s) {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
        return std::string(s);
    }

    static std::vector<std::string> list_items(const std::string& v) {
        std::vector<std::string> out;
        for (auto f : split_fields(v, ',')) {
            std::string t = trim(f);
            if (!t.empty()) out.push_back(std::move(t));
        }
        return out;
    }

    static std::int64_t parse_integer(std::string_view v, std::size_t line) {
        const double d = parse_double(v, line);
        if (d != std::floor(d) || std::abs(d) > 9.0e15) throw ParseError("expected an integer", line);
        return static_cast<std::int64_t>(d);
    }

    static void check_type(const std::string& value, ValueType type, std::size_t line) {
        if (value.empty()) throw ParseError("empty value", line);
        switch (type) {
        case ValueType::integer: parse_integer(value, line); break;
        case ValueType::real: parse_double(value, line); break;
        case ValueType::real_list:
            for (const auto& f : list_items(value)) parse_double(f, line);
            break;
        case ValueType::text:
        case ValueType::text_list: break;
        }
    }
};

// ---------------------------------------------------------------------------

enum class DatasetKind { synthetic, movielens, labstyle, observations };

inline DatasetKind parse_dataset_kind(std::string_view s) {
    if (s == "synthetic") return DatasetKind::synthetic;
    if (s == "movielens") return DatasetKind::movielens;
    if (s == "labstyle") return DatasetKind::labstyle;
    if (s == "observations") return DatasetKind::observations;
    throw ConfigError("unknown dataset.kind '" + std::string(s) + "'");
}

/// Typed view of a configuration file.
struct ExperimentConfig {
    DatasetKind dataset = DatasetKind::synthetic;
    std::string dataset_path;
    SyntheticSpec synthetic;
    std::vector<std::size_t> sample_sizes{1000};
    double user_quantile = 0.75;
    double item_quantile = 0.75;
    std::vector<EstimatorSpec> methods;
    SplitPlan plan;
    std::string output_dir = "out";
    std::size_t parallelism = 1;

    // Single-step subcommands.
    std::string input_observations;
    std::size_t input_rows = 0;
    std::size_t input_cols = 0;
    std::string input_b_raw;
    std::string input_p_hat;
    std::string input_weights;
    double diag_sigma = 1.0;
    double diag_rho = 0.0; // 0: use log(d)

    void validate() const {
        if (methods.empty()) throw ConfigError("config: at least one method is required");
        if (parallelism == 0) throw ConfigError("config: run.parallelism must be positive");
        if (output_dir.empty()) throw ConfigError("config: output.dir is empty");
        plan.validate();
        for (const auto& m : methods) m.validate();
        if (dataset == DatasetKind::synthetic) {
            if (sample_sizes.empty()) throw ConfigError("config: synthetic.n is empty");
            for (std::size_t n : sample_sizes) {
                SyntheticSpec s = synthetic;
                s.n = n;
                s.validate();
            }
        } else if (dataset_path.empty()) {
            throw ConfigError("config: dataset.path is required for non-synthetic datasets");
        }
    }
};

inline ExperimentConfig experiment_config(const ConfigFile& f) {
    ExperimentConfig c;
    c.dataset = parse_dataset_kind(f.text("dataset.kind", "synthetic"));
    c.dataset_path = f.text("dataset.path", "");
    c.synthetic.d = f.count("synthetic.d", 100);
    c.synthetic.rank_b = f.count("synthetic.rank_b", 20);
    c.synthetic.rank_p = f.count("synthetic.rank_p", 20);
    c.synthetic.noise_sd = f.real("synthetic.noise_sd", 1.0);
    c.synthetic.seed = static_cast<std::uint64_t>(f.integer("synthetic.seed", 0));
    c.sample_sizes.clear();
    for (double n : f.reals("synthetic.n", {1000, 1200, 1400, 1600, 1800, 2000})) {
        if (!(n >= 1.0) || n != std::floor(n)) throw ConfigError("synthetic.n entries must be positive integers");
        c.sample_sizes.push_back(static_cast<std::size_t>(n));
    }
    c.synthetic.n = c.sample_sizes.empty() ? 0 : c.sample_sizes.front();
    c.user_quantile = f.real("movielens.user_quantile", 0.75);
    c.item_quantile = f.real("movielens.item_quantile", 0.75);

    EstimatorSpec base;
    base.solver.beta = f.real("solver.beta", base.solver.beta);
    base.solver.t_init = f.real("solver.t_init", base.solver.t_init);
    base.solver.tol = f.real("solver.tol", base.solver.tol);
    base.solver.max_iter = f.count("solver.max_iter", base.solver.max_iter);
    base.solver.path_length = f.count("solver.path_length", base.solver.path_length);
    base.solver.path_ratio = f.real("solver.path_ratio", base.solver.path_ratio);
    base.solver.lambdas = f.reals("solver.lambdas", {});
    base.weights.l_bound = f.real("weights.l_bound", base.weights.l_bound);
    base.weights.gamma = f.real("weights.gamma", base.weights.gamma);
    base.weights.step_size = f.real("weights.step_size", base.weights.step_size);
    base.weights.max_iter = f.count("weights.max_iter", base.weights.max_iter);
    base.weights.tol = f.real("weights.tol", base.weights.tol);
    base.weights.admm_threshold = f.real("weights.admm_threshold", base.weights.admm_threshold);
    const std::string wsolver = f.text("weights.solver", "admm");
    if (wsolver == "admm") base.weights.solver = WeightSolver::admm;
    else if (wsolver == "subgradient") base.weights.solver = WeightSolver::subgradient;
    else throw ConfigError("unknown weights.solver '" + wsolver + "'");
    base.sampling_method = parse_sampling_method(f.text("sampling.method", "rank1"));
    base.raw_method = parse_method(f.text("nu.raw_method", "margin"));
    base.inner_train_fraction = f.real("nu.inner_train_fraction", base.inner_train_fraction);
    for (const auto& name : f.texts("methods", {"uniform", "margin", "ipw_uniform", "nu_recommend"})) {
        EstimatorSpec s = base;
        s.method = parse_method(name);
        c.methods.push_back(s);
    }

    c.plan.n_repeats = f.count("plan.n_repeats", c.plan.n_repeats);
    c.plan.rng_seed = static_cast<std::uint64_t>(f.integer("plan.seed", 0));
    c.plan.eval_fraction = f.real("plan.eval_fraction", c.plan.eval_fraction);
    c.plan.inner_train_fraction = f.real("plan.inner_train_fraction", c.plan.inner_train_fraction);
    c.output_dir = f.text("output.dir", c.output_dir);
    c.parallelism = f.count("run.parallelism", 1);

    c.input_observations = f.text("input.observations", "");
    c.input_rows = f.count("input.rows", 0);
    c.input_cols = f.count("input.cols", 0);
    c.input_b_raw = f.text("input.b_raw", "");
    c.input_p_hat = f.text("input.p_hat", "");
    c.input_weights = f.text("input.weights", "");
    c.diag_sigma = f.real("diagnostics.sigma", 1.0);
    c.diag_rho = f.real("diagnostics.rho", 0.0);
    return c;
}

} // namespace nucomplete
