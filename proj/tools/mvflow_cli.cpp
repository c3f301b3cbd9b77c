// Command line front end: scenario simulation, filter runs, convergence
// studies and stability reports over the measure-valued filtering library.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mvflow/config.hpp"
#include "mvflow/harness.hpp"

int main(int argc, char** argv) {
    CLI::App app{"mvflow: measure-valued filtering flows and their particle approximations"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    bool seed_given = false;
    int threads = 1;
    app.add_option("--config", config_path, "configuration file")->required();
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "master seed override")->each([&](const std::string&) {
        seed_given = true;
    });
    app.add_option("--threads", threads, "worker threads (affects wall time only)");

    auto* simulate = app.add_subcommand("simulate", "generate ground truth and observations");
    auto* run_filter = app.add_subcommand("run-filter", "run the configured filter algorithm");
    auto* convergence =
        app.add_subcommand("convergence-study", "Monte Carlo error sweep against the exact oracle");
    auto* stability = app.add_subcommand("stability-report", "contraction constants and decay fit");
    auto* compare = app.add_subcommand("compare-exact", "particle run against the exact oracle");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = mvflow::config::Config::load(config_path);
        mvflow::harness::Options opts;
        opts.out_dir = out_dir;
        opts.threads = threads;
        if (seed_given) opts.seed_override = seed;

        if (simulate->parsed()) mvflow::harness::cmd_simulate(cfg, opts);
        if (run_filter->parsed()) mvflow::harness::cmd_run_filter(cfg, opts);
        if (convergence->parsed()) mvflow::harness::cmd_convergence_study(cfg, opts);
        if (stability->parsed()) mvflow::harness::cmd_stability_report(cfg, opts);
        if (compare->parsed()) mvflow::harness::cmd_compare_exact(cfg, opts);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}
