#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "nucomplete/config.hpp"
#include "nucomplete/experiment.hpp"

namespace {

struct Options {
    std::string config;
    std::optional<long long> seed;
    std::optional<std::size_t> parallelism;
    std::optional<std::string> output_dir;
};

nucomplete::ExperimentConfig load(const Options& o) {
    nucomplete::ConfigFile f;
    if (!o.config.empty()) f = nucomplete::ConfigFile::load(o.config);
    if (o.seed) {
        f.set("synthetic.seed", std::to_string(*o.seed));
        f.set("plan.seed", std::to_string(*o.seed));
    }
    if (o.parallelism) f.set("run.parallelism", std::to_string(*o.parallelism));
    if (o.output_dir) f.set("output.dir", *o.output_dir);
    return nucomplete::experiment_config(f);
}

void configure_logging() {
    auto logger = spdlog::stderr_color_mt("nucomplete");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("NUCOMPLETE_LOG")) {
        const auto level = spdlog::level::from_str(env);
        if (level == spdlog::level::off && std::string(env) != "off") {
            spdlog::warn("unknown NUCOMPLETE_LOG level '{}', keeping info", env);
        } else {
            spdlog::set_level(level);
        }
    }
}

} // namespace

int main(int argc, char** argv) {
    configure_logging();
    CLI::App app{"Matrix completion with nonuniform sampling: weighted trace-norm estimators and experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    Options opts;
    app.add_option("--config", opts.config, "Key-value configuration file");
    app.add_option("--seed", opts.seed, "Overrides synthetic.seed and plan.seed");
    app.add_option("--parallelism", opts.parallelism, "Worker threads for experiment cells")->check(CLI::PositiveNumber);
    app.add_option("--output-dir", opts.output_dir, "Output directory");

    using Command = nucomplete::RunOutput (*)(const nucomplete::ExperimentConfig&, const nucomplete::Logger&);
    struct Entry {
        const char* name;
        const char* help;
        Command run;
    };
    const Entry commands[] = {
        {"generate", "Write B*, P* and observation CSVs for the synthetic spec", nucomplete::cmd_generate},
        {"estimate-sampling", "Estimate the sampling distribution of input.observations", nucomplete::cmd_estimate_sampling},
        {"construct-weights", "Solve the weight program for input.b_raw and input.p_hat", nucomplete::cmd_construct_weights},
        {"fit", "Fit the regularization path of the first method on input.observations", nucomplete::cmd_fit},
        {"experiment", "Run every method x repeat cell and write reports", nucomplete::cmd_experiment},
        {"fairness", "Replay fairness regressions from a finished experiment", nucomplete::cmd_fairness},
    };
    for (const auto& c : commands) app.add_subcommand(c.name, c.help);

    CLI11_PARSE(app, argc, argv);

    const nucomplete::Logger log = [](const std::string& msg) { spdlog::debug("{}", msg); };
    try {
        const nucomplete::ExperimentConfig cfg = load(opts);
        for (const auto& c : commands) {
            if (!app.got_subcommand(c.name)) continue;
            const nucomplete::RunOutput out = c.run(cfg, log);
            spdlog::info("{}: {} files written to {}", c.name, out.files.size(), out.dir.string());
            if (!out.ok()) {
                spdlog::error("{}: {} of {} cells failed", c.name, out.n_failed, out.n_cells);
                return 1;
            }
        }
    } catch (const nucomplete::Error& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("unexpected error: {}", e.what());
        return 3;
    }
    return 0;
}
