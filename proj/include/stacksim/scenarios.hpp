#pragma once

#include "stacksim/metrics.hpp"
#include "stacksim/sim.hpp"

#include <string>
#include <vector>

namespace stacksim {

namespace detail {

inline RunRow run_once(const SimConfig& cfg, bool ablate, const std::string& sweep_label,
                       double sweep_value) {
    Simulation sim(cfg, ablate);
    RunRow row = sim.run();
    row.sweep_label = sweep_label;
    row.sweep_value = sweep_value;
    return row;
}

inline std::vector<double> sweep_values(const Json& params, const char* key,
                                        std::vector<double> fallback) {
    if (params.is_object() && params.contains(key)) {
        return params.at(key).get<std::vector<double>>();
    }
    return fallback;
}

inline SimConfig with_guest_count(const SimConfig& base, std::size_t count) {
    SimConfig cfg = base;
    cfg.guests.clear();
    for (std::size_t g = 0; g < count; ++g) {
        GuestConfig gc = base.guests[g < base.guests.size() ? g : base.guests.size() - 1];
        gc.id = static_cast<GuestId>(g);
        cfg.guests.push_back(gc);
    }
    return cfg;
}

} // namespace detail

// Single-configuration run: one row.
inline MetricsReport scenario_echo(const SimConfig& cfg, bool ablate) {
    MetricsReport report;
    report.scenario = "echo";
    report.config_echo = config_to_json(cfg);
    report.rows.push_back(detail::run_once(cfg, ablate, "run", 0.0));
    return report;
}

// Victim (guest 0) vs aggressor (guest 1): sweeps either the aggressor's
// connection count or its message size; one row per sweep point. A zero
// sweep point degenerates to a victim-solo run.
inline MetricsReport scenario_isolation(const SimConfig& cfg, bool ablate) {
    if (cfg.guests.size() != 2) {
        throw ConfigError("guests", "isolation scenario requires exactly two guests");
    }
    const std::string mode =
        cfg.scenario_params.is_object()
            ? cfg.scenario_params.value("sweep", std::string("connections"))
            : "connections";
    std::vector<double> values;
    if (mode == "connections") {
        values = detail::sweep_values(cfg.scenario_params, "values", {0, 16, 64, 256});
    } else if (mode == "message_size") {
        values = detail::sweep_values(cfg.scenario_params, "values", {64, 256, 1024});
    } else {
        throw ConfigError("scenario.sweep", "must be 'connections' or 'message_size'");
    }
    MetricsReport report;
    report.scenario = "isolation";
    report.config_echo = config_to_json(cfg);
    for (double v : values) {
        SimConfig point = cfg;
        if (mode == "connections") {
            point.guests[1].workload.connections = static_cast<std::uint32_t>(v);
            if (v == 0) {
                point.guests[1].workload.type = "idle";
            }
        } else {
            point.guests[1].workload.message_size = static_cast<std::uint32_t>(v);
        }
        const std::string label = mode == "connections" ? "aggressor_connections"
                                                        : "aggressor_message_size";
        report.rows.push_back(detail::run_once(point, ablate, label, v));
    }
    return report;
}

// Guests added stepwise; per-core aggregate throughput is the shared-stack
// pooling signal (core count stays fixed across points).
inline MetricsReport scenario_efficiency(const SimConfig& cfg, bool ablate) {
    const auto counts = detail::sweep_values(cfg.scenario_params, "guest_counts", {1, 2, 3, 4});
    MetricsReport report;
    report.scenario = "efficiency";
    report.config_echo = config_to_json(cfg);
    for (double c : counts) {
        const SimConfig point = detail::with_guest_count(cfg, static_cast<std::size_t>(c));
        report.rows.push_back(detail::run_once(point, ablate, "guests", c));
    }
    return report;
}

inline MetricsReport scenario_scalability(const SimConfig& cfg, bool ablate) {
    const auto counts = detail::sweep_values(cfg.scenario_params, "guest_counts", {1, 2, 4, 8});
    MetricsReport report;
    report.scenario = "scalability";
    report.config_echo = config_to_json(cfg);
    for (double c : counts) {
        const SimConfig point = detail::with_guest_count(cfg, static_cast<std::size_t>(c));
        report.rows.push_back(detail::run_once(point, ablate, "guests", c));
    }
    return report;
}

// Allocator parameter sensitivity, two families of rows:
//   update_period_us = {...} with the guests as configured, and
//   cap in {configured, unbounded} with the aggressor switched to bursts.
inline MetricsReport scenario_sensitivity(const SimConfig& cfg, bool ablate) {
    if (cfg.guests.size() != 2) {
        throw ConfigError("guests", "sensitivity scenario requires exactly two guests");
    }
    const auto periods =
        detail::sweep_values(cfg.scenario_params, "update_periods_us", {50, 100, 400, 1600});
    MetricsReport report;
    report.scenario = "sensitivity";
    report.config_echo = config_to_json(cfg);
    for (double p : periods) {
        SimConfig point = cfg;
        point.update_period_us = p;
        report.rows.push_back(detail::run_once(point, ablate, "update_period_us", p));
    }
    const double on_ms = cfg.scenario_params.is_object()
                             ? cfg.scenario_params.value("burst_on_ms", 2.0)
                             : 2.0;
    const double off_ms = cfg.scenario_params.is_object()
                              ? cfg.scenario_params.value("burst_off_ms", 2.0)
                              : 2.0;
    for (int unbounded = 0; unbounded <= 1; ++unbounded) {
        SimConfig point = cfg;
        point.guests[1].workload.mode = "burst";
        point.guests[1].workload.burst_on_ms = on_ms;
        point.guests[1].workload.burst_off_ms = off_ms;
        if (unbounded) {
            point.cap_cycles = -1;
        }
        report.rows.push_back(detail::run_once(point, ablate, "cap",
                                               unbounded ? -1.0
                                                         : static_cast<double>(cfg.cap_cycles)));
    }
    return report;
}

// Connection-per-batch-of-RPCs: stresses the slow-path setup/teardown cost.
inline MetricsReport scenario_short_lived(const SimConfig& cfg, bool ablate) {
    const auto messages =
        detail::sweep_values(cfg.scenario_params, "messages_per_connection", {1, 4, 16});
    MetricsReport report;
    report.scenario = "short_lived";
    report.config_echo = config_to_json(cfg);
    for (double m : messages) {
        SimConfig point = cfg;
        for (auto& g : point.guests) {
            if (g.workload.type != "idle") {
                g.workload.type = "short_lived";
                g.workload.messages_per_connection = static_cast<std::uint32_t>(m);
            }
        }
        report.rows.push_back(detail::run_once(point, ablate, "messages_per_connection", m));
    }
    return report;
}

inline MetricsReport run_scenario(const SimConfig& cfg, bool ablate_no_budget = false) {
    validate_config(cfg);
    if (cfg.scenario == "echo") {
        return scenario_echo(cfg, ablate_no_budget);
    }
    if (cfg.scenario == "isolation") {
        return scenario_isolation(cfg, ablate_no_budget);
    }
    if (cfg.scenario == "efficiency") {
        return scenario_efficiency(cfg, ablate_no_budget);
    }
    if (cfg.scenario == "scalability") {
        return scenario_scalability(cfg, ablate_no_budget);
    }
    if (cfg.scenario == "sensitivity") {
        return scenario_sensitivity(cfg, ablate_no_budget);
    }
    if (cfg.scenario == "short_lived") {
        return scenario_short_lived(cfg, ablate_no_budget);
    }
    throw ConfigError("scenario.name", "unknown scenario '" + cfg.scenario + "'");
}

} // namespace stacksim
