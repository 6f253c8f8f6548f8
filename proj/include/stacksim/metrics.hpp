#pragma once

#include "stacksim/config.hpp"
#include "stacksim/types.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace stacksim {

// Nearest-rank percentile over an unsorted sample set; 0 when empty.
inline double percentile(std::vector<std::uint64_t>& samples, double q) {
    if (samples.empty()) {
        return 0.0;
    }
    std::sort(samples.begin(), samples.end());
    const std::size_t rank = static_cast<std::size_t>(
        std::max<double>(1.0, std::ceil(q * static_cast<double>(samples.size()))));
    return static_cast<double>(samples[std::min(rank, samples.size()) - 1]);
}

struct GuestMetrics {
    GuestId id = 0;
    std::uint64_t requests_issued = 0;
    std::uint64_t responses_completed = 0;
    double throughput_rps = 0.0;
    double goodput_bps = 0.0;
    double p50_us = 0.0;
    double p99_us = 0.0;
    double p999_us = 0.0;
    std::uint64_t samples = 0;
    std::uint64_t rx_drops = 0;
    std::uint64_t slowpath_events = 0;
    std::uint64_t connects_completed = 0;
};

struct GlobalMetrics {
    std::vector<double> core_utilization;
    double accounted_fraction = 0.0;
    std::uint64_t cycles_consumed = 0;
    std::uint64_t cycles_charged = 0;
    std::uint64_t cycles_unaccounted = 0;
    bool ledger_ok = false;
    std::uint64_t slowpath_items = 0;
    std::uint64_t rto_fires = 0;
    std::uint64_t link_losses = 0;
};

struct RunRow {
    std::string sweep_label; // e.g. "aggressor_connections"
    double sweep_value = 0.0;
    std::vector<GuestMetrics> guests;
    GlobalMetrics global;
};

struct MetricsReport {
    Json config_echo;
    std::string scenario;
    std::vector<RunRow> rows;
};

inline void check_metrics_invariants(const RunRow& row) {
    for (const auto& g : row.guests) {
        if (!(g.p50_us <= g.p99_us && g.p99_us <= g.p999_us)) {
            throw InvariantViolation("latency percentiles out of order for guest " +
                                     std::to_string(g.id));
        }
    }
    if (!row.global.ledger_ok) {
        throw InvariantViolation("cycle ledger does not balance");
    }
}

inline Json guest_metrics_to_json(const GuestMetrics& g) {
    Json j;
    j["id"] = g.id;
    j["requests_issued"] = g.requests_issued;
    j["responses_completed"] = g.responses_completed;
    j["throughput_rps"] = g.throughput_rps;
    j["goodput_bps"] = g.goodput_bps;
    j["p50_us"] = g.p50_us;
    j["p99_us"] = g.p99_us;
    j["p999_us"] = g.p999_us;
    j["samples"] = g.samples;
    j["rx_drops"] = g.rx_drops;
    j["slowpath_events"] = g.slowpath_events;
    j["connects_completed"] = g.connects_completed;
    return j;
}

inline GuestMetrics guest_metrics_from_json(const Json& j) {
    GuestMetrics g;
    g.id = j.at("id").get<GuestId>();
    g.requests_issued = j.at("requests_issued").get<std::uint64_t>();
    g.responses_completed = j.at("responses_completed").get<std::uint64_t>();
    g.throughput_rps = j.at("throughput_rps").get<double>();
    g.goodput_bps = j.at("goodput_bps").get<double>();
    g.p50_us = j.at("p50_us").get<double>();
    g.p99_us = j.at("p99_us").get<double>();
    g.p999_us = j.at("p999_us").get<double>();
    g.samples = j.at("samples").get<std::uint64_t>();
    g.rx_drops = j.at("rx_drops").get<std::uint64_t>();
    g.slowpath_events = j.at("slowpath_events").get<std::uint64_t>();
    g.connects_completed = j.at("connects_completed").get<std::uint64_t>();
    return g;
}

inline Json report_to_json(const MetricsReport& r) {
    Json j;
    j["scenario"] = r.scenario;
    j["config"] = r.config_echo;
    Json rows = Json::array();
    for (const auto& row : r.rows) {
        Json rj;
        rj["sweep"] = row.sweep_label;
        rj["value"] = row.sweep_value;
        Json guests = Json::array();
        for (const auto& g : row.guests) {
            guests.push_back(guest_metrics_to_json(g));
        }
        rj["guests"] = guests;
        rj["global"] = {{"core_utilization", row.global.core_utilization},
                        {"accounted_fraction", row.global.accounted_fraction},
                        {"cycles_consumed", row.global.cycles_consumed},
                        {"cycles_charged", row.global.cycles_charged},
                        {"cycles_unaccounted", row.global.cycles_unaccounted},
                        {"ledger_ok", row.global.ledger_ok},
                        {"slowpath_items", row.global.slowpath_items},
                        {"rto_fires", row.global.rto_fires},
                        {"link_losses", row.global.link_losses}};
        rows.push_back(rj);
    }
    j["rows"] = rows;
    return j;
}

inline MetricsReport report_from_json(const Json& j) {
    MetricsReport r;
    r.scenario = j.at("scenario").get<std::string>();
    r.config_echo = j.at("config");
    for (const Json& rj : j.at("rows")) {
        RunRow row;
        row.sweep_label = rj.at("sweep").get<std::string>();
        row.sweep_value = rj.at("value").get<double>();
        for (const Json& gj : rj.at("guests")) {
            row.guests.push_back(guest_metrics_from_json(gj));
        }
        const Json& gl = rj.at("global");
        row.global.core_utilization = gl.at("core_utilization").get<std::vector<double>>();
        row.global.accounted_fraction = gl.at("accounted_fraction").get<double>();
        row.global.cycles_consumed = gl.at("cycles_consumed").get<std::uint64_t>();
        row.global.cycles_charged = gl.at("cycles_charged").get<std::uint64_t>();
        row.global.cycles_unaccounted = gl.at("cycles_unaccounted").get<std::uint64_t>();
        row.global.ledger_ok = gl.at("ledger_ok").get<bool>();
        row.global.slowpath_items = gl.at("slowpath_items").get<std::uint64_t>();
        row.global.rto_fires = gl.at("rto_fires").get<std::uint64_t>();
        row.global.link_losses = gl.at("link_losses").get<std::uint64_t>();
        r.rows.push_back(std::move(row));
    }
    return r;
}

// Column order is part of the output contract (documented in the README).
inline constexpr const char* kCsvHeader =
    "scenario,sweep,value,guest,throughput_rps,goodput_bps,p50_us,p99_us,p999_us,"
    "rx_drops,slowpath_events,responses_completed,samples";

inline std::string report_to_csv(const MetricsReport& r) {
    std::ostringstream out;
    out << kCsvHeader << "\n";
    for (const auto& row : r.rows) {
        for (const auto& g : row.guests) {
            out << r.scenario << ',' << row.sweep_label << ',' << row.sweep_value << ',' << g.id
                << ',' << g.throughput_rps << ',' << g.goodput_bps << ',' << g.p50_us << ','
                << g.p99_us << ',' << g.p999_us << ',' << g.rx_drops << ',' << g.slowpath_events
                << ',' << g.responses_completed << ',' << g.samples << "\n";
        }
    }
    return out.str();
}

// Writes the report; "-" means stdout (handled by the CLI).
inline void emit_report(const MetricsReport& r, const std::string& format,
                        const std::string& path) {
    std::string payload;
    if (format == "json") {
        payload = report_to_json(r).dump(2);
        payload.push_back('\n');
    } else if (format == "csv") {
        payload = report_to_csv(r);
    } else {
        throw ConfigError("format", "unknown output format '" + format + "'");
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open output file: " + path);
    }
    out << payload;
    if (!out) {
        throw std::runtime_error("write failed: " + path);
    }
}

} // namespace stacksim
