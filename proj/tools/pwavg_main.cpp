#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pwavg/cli.hpp"
#include "pwavg/version.hpp"

namespace {

// "lo:hi:n" -> (lo, hi, n)
bool parse_sweep(const std::string& s, double& lo, double& hi, int& n) {
    const auto p1 = s.find(':');
    const auto p2 = s.find(':', p1 == std::string::npos ? p1 : p1 + 1);
    if (p1 == std::string::npos || p2 == std::string::npos) return false;
    try {
        lo = std::stod(s.substr(0, p1));
        hi = std::stod(s.substr(p1 + 1, p2 - p1 - 1));
        n = std::stoi(s.substr(p2 + 1));
    } catch (...) {
        return false;
    }
    return n >= 2 && hi > lo;
}

}  // namespace

int main(int argc, char** argv) try {
    CLI::App app{"detection and certification of periodic solutions of "
                 "time-switched piecewise-smooth perturbed systems"};
    app.set_version_flag("--version", std::string("pwavg ") + pwavg::kVersion);
    app.require_subcommand(1);

    // analyze
    pwavg::cli::AnalyzeArgs aargs;
    CLI::App* analyze = app.add_subcommand(
        "analyze", "run hypothesis checks, bifurcation functions, and zero certification");
    analyze->add_option("config", aargs.config_path, "model config (TOML)")->required();
    analyze->add_option("--order", aargs.order, "highest order to consider (default: config k)");
    analyze->add_option("--grid", aargs.grid, "grid resolution per axis");
    analyze->add_flag("--verify", aargs.verify, "eps-sweep verification of certified zeros");
    analyze->add_flag("--expect-zeros", aargs.expect_zeros,
                      "treat an empty zero set as a failure in the summary");
    analyze->add_option("--out", aargs.out_path, "write the report to a file");
    analyze->add_option("--format", aargs.format, "table | json | csv")
        ->check(CLI::IsMember({"table", "json", "csv"}));
    analyze->add_option("--jobs", aargs.jobs, "parallel workers for grid evaluation");
    analyze->add_option("--debug-dump", aargs.debug_dump,
                        "directory for augmented-path CSV dumps at located zeros");

    // oracle
    std::string oracle_name, sweep;
    int oracle_jobs = 1;
    CLI::App* oracle =
        app.add_subcommand("oracle", "compare the engine against a bundled closed-form oracle");
    oracle->add_option("name", oracle_name, "bundled example name")->required();
    oracle->add_option("--sweep", sweep, "lo:hi:n sweep over the box (default: config V)");
    oracle->add_option("--jobs", oracle_jobs, "parallel workers");

    // expand
    std::string expand_config;
    int check_points = 0;
    CLI::App* expand =
        app.add_subcommand("expand", "print the derived per-order fields of rhs_full zones");
    expand->add_option("config", expand_config, "model config (TOML)")->required();
    expand->add_option("--check", check_points,
                       "evaluate the truncation residual at N random points");

    // examples
    std::string emit_name;
    CLI::App* ex = app.add_subcommand("examples", "list bundled examples or emit a config");
    ex->add_option("--emit", emit_name, "print the named example's config");

    CLI11_PARSE(app, argc, argv);

    try {
        if (analyze->parsed()) return pwavg::cli::run_analyze(aargs, std::cout, std::cerr);
        if (oracle->parsed()) {
            double lo = 0.0, hi = 0.0;
            int n = 0;
            if (!sweep.empty() && !parse_sweep(sweep, lo, hi, n)) {
                std::cerr << "error: --sweep must be lo:hi:n with n >= 2\n";
                return 1;
            }
            return pwavg::cli::run_oracle(oracle_name, lo, hi, n, oracle_jobs, std::cout,
                                          std::cerr);
        }
        if (expand->parsed())
            return pwavg::cli::run_expand(expand_config, check_points, std::cout, std::cerr);
        if (ex->parsed()) return pwavg::cli::run_examples(emit_name, std::cout, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
} catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
}
