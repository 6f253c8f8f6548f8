// Command-line front end: load a scenario config, run it, emit the report.
//
// Exit codes: 0 success, 2 config validation failure, 3 runtime invariant
// breach, 1 anything else (I/O and unexpected errors).

#include "stacksim/config.hpp"
#include "stacksim/metrics.hpp"
#include "stacksim/scenarios.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"stacksim - shared multi-tenant TCP dataplane simulator"};

    std::string config_path;
    std::string scenario_override;
    std::string out_path = "-";
    std::string format = "json";
    std::uint64_t seed = 0;
    bool seed_set = false;
    double duration_ms = 0.0;
    bool duration_set = false;
    bool ablate_no_budget = false;

    app.add_option("--config", config_path, "Path to the scenario config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--scenario", scenario_override, "Override the scenario name in the config");
    app.add_option("--seed", seed, "Override the random seed")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--out", out_path, "Output path ('-' for stdout)");
    app.add_option("--format", format, "Output format")
        ->check(CLI::IsMember({"json", "csv"}));
    app.add_option("--duration-ms", duration_ms, "Override the virtual run duration (ms)")
        ->each([&](const std::string&) { duration_set = true; });
    app.add_flag("--ablate-no-budget", ablate_no_budget,
                 "Disable budget gating (isolation ablation)");

    CLI11_PARSE(app, argc, argv);

    try {
        stacksim::SimConfig cfg = stacksim::load_config_file(config_path);
        if (!scenario_override.empty()) {
            cfg.scenario = scenario_override;
        }
        if (seed_set) {
            cfg.seed = seed;
        }
        if (duration_set) {
            cfg.duration_ms = duration_ms;
        }
        stacksim::validate_config(cfg);

        const stacksim::MetricsReport report = stacksim::run_scenario(cfg, ablate_no_budget);

        if (out_path == "-") {
            if (format == "json") {
                std::cout << stacksim::report_to_json(report).dump(2) << "\n";
            } else {
                std::cout << stacksim::report_to_csv(report);
            }
        } else {
            stacksim::emit_report(report, format, out_path);
        }
        return 0;
    } catch (const stacksim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const stacksim::InvariantViolation& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
