#pragma once

#include "stacksim/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace stacksim {

using Json = nlohmann::ordered_json;

struct WorkloadConfig {
    std::string type = "echo";          // "echo" | "short_lived" | "idle"
    std::uint32_t connections = 1;
    std::uint32_t message_size = 64;
    std::string mode = "closed_loop";   // "closed_loop" | "burst"
    double burst_on_ms = 0.0;
    double burst_off_ms = 0.0;
    std::uint32_t messages_per_connection = 1; // short_lived only
};

struct GuestConfig {
    GuestId id = 0;
    double weight = 1.0;
    WorkloadConfig workload;
};

struct TunnelEntryConfig {
    std::uint32_t tenant = 0;
    std::uint32_t virtual_ip = 0;
    std::uint32_t outer_ip = 0;
    std::uint16_t outer_port = 0;
    std::uint32_t gre_key = 0;
    std::uint64_t mac = 0;
    std::optional<GuestId> local_guest;
};

struct SimConfig {
    std::uint32_t num_fastpath_cores = 2;
    double cpu_ghz = 2.1;

    // allocator
    double boost = 0.94;
    std::int64_t cap_cycles = 210000;   // -1 = unbounded
    double update_period_us = 100.0;

    // cost model
    Cycles base_cycles_per_task = 200;
    double cycles_per_payload_byte = 0.3;
    Cycles poll_empty_cycles = 50;
    std::uint32_t cost_jitter_pct = 0;

    // scheduling
    std::uint32_t batch_size = 16;
    std::uint32_t mss = 1460;
    double drop_cost_fraction = 0.25;
    double initial_rate_gbps = 10.0;
    std::string rate_policy = "aimd";   // "aimd" | "constant"

    // link
    double link_bandwidth_gbps = 40.0;
    double link_propagation_us = 2.0;
    double link_loss_rate = 0.0;

    // remote peer
    double remote_delay_us = 0.5;
    double remote_rto_us = 200.0;

    // slow path
    double resolution_latency_us = 1.0;
    double slowpath_rto_us = 200.0;
    double slowpath_service_delay_us = 1.0;
    bool slowpath_charge_guests = false;

    std::uint32_t flow_buffer_bytes = 64 * 1024;

    std::vector<GuestConfig> guests;
    std::vector<TunnelEntryConfig> tunnels; // optional; scenarios synthesize defaults

    std::string scenario = "echo";
    Json scenario_params = Json::object();
    double duration_ms = 50.0;
    double warmup_ms = 2.0;
    std::uint64_t seed = 1;
};

namespace detail {

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
    if (!j.contains(key)) {
        return fallback;
    }
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError(key, "wrong type");
    }
}

} // namespace detail

inline WorkloadConfig workload_from_json(const Json& j) {
    WorkloadConfig w;
    w.type = detail::get_or<std::string>(j, "type", w.type);
    w.connections = detail::get_or<std::uint32_t>(j, "connections", w.connections);
    w.message_size = detail::get_or<std::uint32_t>(j, "message_size", w.message_size);
    w.mode = detail::get_or<std::string>(j, "mode", w.mode);
    w.burst_on_ms = detail::get_or<double>(j, "burst_on_ms", w.burst_on_ms);
    w.burst_off_ms = detail::get_or<double>(j, "burst_off_ms", w.burst_off_ms);
    w.messages_per_connection =
        detail::get_or<std::uint32_t>(j, "messages_per_connection", w.messages_per_connection);
    return w;
}

inline Json workload_to_json(const WorkloadConfig& w) {
    Json j;
    j["type"] = w.type;
    j["connections"] = w.connections;
    j["message_size"] = w.message_size;
    j["mode"] = w.mode;
    if (w.mode == "burst") {
        j["burst_on_ms"] = w.burst_on_ms;
        j["burst_off_ms"] = w.burst_off_ms;
    }
    if (w.type == "short_lived") {
        j["messages_per_connection"] = w.messages_per_connection;
    }
    return j;
}

inline SimConfig config_from_json(const Json& j) {
    SimConfig c;
    c.num_fastpath_cores = detail::get_or<std::uint32_t>(j, "cores", c.num_fastpath_cores);
    c.cpu_ghz = detail::get_or<double>(j, "cpu_ghz", c.cpu_ghz);

    if (j.contains("allocator")) {
        const Json& a = j.at("allocator");
        c.boost = detail::get_or<double>(a, "boost", c.boost);
        c.cap_cycles = detail::get_or<std::int64_t>(a, "cap_cycles", c.cap_cycles);
        c.update_period_us = detail::get_or<double>(a, "update_period_us", c.update_period_us);
    }
    if (j.contains("cost_model")) {
        const Json& m = j.at("cost_model");
        c.base_cycles_per_task =
            detail::get_or<Cycles>(m, "base_cycles_per_task", c.base_cycles_per_task);
        c.cycles_per_payload_byte =
            detail::get_or<double>(m, "cycles_per_payload_byte", c.cycles_per_payload_byte);
        c.poll_empty_cycles = detail::get_or<Cycles>(m, "poll_empty_cycles", c.poll_empty_cycles);
        c.cost_jitter_pct = detail::get_or<std::uint32_t>(m, "jitter_pct", c.cost_jitter_pct);
    }
    c.batch_size = detail::get_or<std::uint32_t>(j, "batch_size", c.batch_size);
    c.mss = detail::get_or<std::uint32_t>(j, "mss", c.mss);
    c.drop_cost_fraction = detail::get_or<double>(j, "drop_cost_fraction", c.drop_cost_fraction);
    c.initial_rate_gbps = detail::get_or<double>(j, "initial_rate_gbps", c.initial_rate_gbps);
    c.rate_policy = detail::get_or<std::string>(j, "rate_policy", c.rate_policy);

    if (j.contains("link")) {
        const Json& l = j.at("link");
        c.link_bandwidth_gbps = detail::get_or<double>(l, "bandwidth_gbps", c.link_bandwidth_gbps);
        c.link_propagation_us = detail::get_or<double>(l, "propagation_us", c.link_propagation_us);
        c.link_loss_rate = detail::get_or<double>(l, "loss_rate", c.link_loss_rate);
    }
    if (j.contains("remote")) {
        const Json& r = j.at("remote");
        c.remote_delay_us = detail::get_or<double>(r, "delay_us", c.remote_delay_us);
        c.remote_rto_us = detail::get_or<double>(r, "rto_us", c.remote_rto_us);
    }
    if (j.contains("slowpath")) {
        const Json& s = j.at("slowpath");
        c.resolution_latency_us =
            detail::get_or<double>(s, "resolution_latency_us", c.resolution_latency_us);
        c.slowpath_rto_us = detail::get_or<double>(s, "rto_us", c.slowpath_rto_us);
        c.slowpath_service_delay_us =
            detail::get_or<double>(s, "service_delay_us", c.slowpath_service_delay_us);
        c.slowpath_charge_guests = detail::get_or<bool>(s, "charge_guests", c.slowpath_charge_guests);
    }
    c.flow_buffer_bytes = detail::get_or<std::uint32_t>(j, "flow_buffer_bytes", c.flow_buffer_bytes);

    if (j.contains("guests")) {
        for (const Json& gj : j.at("guests")) {
            GuestConfig g;
            g.id = detail::get_or<GuestId>(gj, "id", static_cast<GuestId>(c.guests.size()));
            g.weight = detail::get_or<double>(gj, "weight", 1.0);
            if (gj.contains("workload")) {
                g.workload = workload_from_json(gj.at("workload"));
            }
            c.guests.push_back(g);
        }
    }
    if (j.contains("tunnels")) {
        for (const Json& tj : j.at("tunnels")) {
            TunnelEntryConfig t;
            t.tenant = detail::get_or<std::uint32_t>(tj, "tenant", 0);
            t.virtual_ip = detail::get_or<std::uint32_t>(tj, "virtual_ip", 0);
            t.outer_ip = detail::get_or<std::uint32_t>(tj, "outer_ip", 0);
            t.outer_port = detail::get_or<std::uint16_t>(tj, "outer_port", 0);
            t.gre_key = detail::get_or<std::uint32_t>(tj, "gre_key", 0);
            t.mac = detail::get_or<std::uint64_t>(tj, "mac", 0);
            if (tj.contains("local_guest")) {
                t.local_guest = tj.at("local_guest").get<GuestId>();
            }
            c.tunnels.push_back(t);
        }
    }
    if (j.contains("scenario")) {
        const Json& s = j.at("scenario");
        if (s.is_string()) {
            c.scenario = s.get<std::string>();
        } else {
            c.scenario = detail::get_or<std::string>(s, "name", c.scenario);
            c.scenario_params = s;
        }
    }
    c.duration_ms = detail::get_or<double>(j, "duration_ms", c.duration_ms);
    c.warmup_ms = detail::get_or<double>(j, "warmup_ms", c.warmup_ms);
    c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed);
    return c;
}

inline Json config_to_json(const SimConfig& c) {
    Json j;
    j["cores"] = c.num_fastpath_cores;
    j["cpu_ghz"] = c.cpu_ghz;
    j["allocator"] = {{"boost", c.boost},
                      {"cap_cycles", c.cap_cycles},
                      {"update_period_us", c.update_period_us}};
    j["cost_model"] = {{"base_cycles_per_task", c.base_cycles_per_task},
                       {"cycles_per_payload_byte", c.cycles_per_payload_byte},
                       {"poll_empty_cycles", c.poll_empty_cycles},
                       {"jitter_pct", c.cost_jitter_pct}};
    j["batch_size"] = c.batch_size;
    j["mss"] = c.mss;
    j["drop_cost_fraction"] = c.drop_cost_fraction;
    j["initial_rate_gbps"] = c.initial_rate_gbps;
    j["rate_policy"] = c.rate_policy;
    j["link"] = {{"bandwidth_gbps", c.link_bandwidth_gbps},
                 {"propagation_us", c.link_propagation_us},
                 {"loss_rate", c.link_loss_rate}};
    j["remote"] = {{"delay_us", c.remote_delay_us}, {"rto_us", c.remote_rto_us}};
    j["slowpath"] = {{"resolution_latency_us", c.resolution_latency_us},
                     {"rto_us", c.slowpath_rto_us},
                     {"service_delay_us", c.slowpath_service_delay_us},
                     {"charge_guests", c.slowpath_charge_guests}};
    j["flow_buffer_bytes"] = c.flow_buffer_bytes;
    Json guests = Json::array();
    for (const auto& g : c.guests) {
        Json gj;
        gj["id"] = g.id;
        gj["weight"] = g.weight;
        gj["workload"] = workload_to_json(g.workload);
        guests.push_back(gj);
    }
    j["guests"] = guests;
    j["scenario"] = c.scenario_params.is_object() && !c.scenario_params.empty()
                        ? c.scenario_params
                        : Json{{"name", c.scenario}};
    j["duration_ms"] = c.duration_ms;
    j["warmup_ms"] = c.warmup_ms;
    j["seed"] = c.seed;
    return j;
}

inline const std::vector<std::string>& known_scenarios() {
    static const std::vector<std::string> names = {"echo",        "isolation",  "efficiency",
                                                   "scalability", "sensitivity", "short_lived"};
    return names;
}

inline void validate_config(const SimConfig& c) {
    if (c.num_fastpath_cores == 0) {
        throw ConfigError("cores", "must be positive");
    }
    if (c.cpu_ghz <= 0.0) {
        throw ConfigError("cpu_ghz", "must be positive");
    }
    if (c.boost <= 0.0 || c.boost > 1.0) {
        throw ConfigError("allocator.boost", "must be in (0, 1]");
    }
    if (c.cap_cycles <= 0 && c.cap_cycles != -1) {
        throw ConfigError("allocator.cap_cycles", "must be positive (or -1 for unbounded)");
    }
    if (c.update_period_us <= 0.0) {
        throw ConfigError("allocator.update_period_us", "must be positive");
    }
    if (c.batch_size == 0) {
        throw ConfigError("batch_size", "must be positive");
    }
    if (c.mss == 0) {
        throw ConfigError("mss", "must be positive");
    }
    if (c.drop_cost_fraction < 0.0 || c.drop_cost_fraction > 1.0) {
        throw ConfigError("drop_cost_fraction", "must be in [0, 1]");
    }
    if (c.link_bandwidth_gbps <= 0.0) {
        throw ConfigError("link.bandwidth_gbps", "must be positive");
    }
    if (c.link_loss_rate < 0.0 || c.link_loss_rate >= 1.0) {
        throw ConfigError("link.loss_rate", "must be in [0, 1)");
    }
    if (c.initial_rate_gbps <= 0.0) {
        throw ConfigError("initial_rate_gbps", "must be positive");
    }
    if (c.rate_policy != "aimd" && c.rate_policy != "constant") {
        throw ConfigError("rate_policy", "unknown policy '" + c.rate_policy + "'");
    }
    if (c.guests.empty()) {
        throw ConfigError("guests", "at least one guest required");
    }
    for (std::size_t i = 0; i < c.guests.size(); ++i) {
        if (c.guests[i].weight <= 0.0) {
            throw ConfigError("guests[" + std::to_string(i) + "].weight", "must be positive");
        }
        if (c.guests[i].id != i) {
            throw ConfigError("guests[" + std::to_string(i) + "].id",
                              "guest ids must be dense and in order (expected " +
                                  std::to_string(i) + ")");
        }
        const auto& w = c.guests[i].workload;
        if (w.type != "echo" && w.type != "short_lived" && w.type != "idle") {
            throw ConfigError("guests[" + std::to_string(i) + "].workload.type",
                              "unknown workload '" + w.type + "'");
        }
        if (w.type != "idle" && w.connections == 0) {
            throw ConfigError("guests[" + std::to_string(i) + "].workload.connections",
                              "must be at least 1");
        }
        if (w.type != "idle" && w.message_size == 0) {
            throw ConfigError("guests[" + std::to_string(i) + "].workload.message_size",
                              "must be at least 1");
        }
        if (w.mode != "closed_loop" && w.mode != "burst") {
            throw ConfigError("guests[" + std::to_string(i) + "].workload.mode",
                              "unknown mode '" + w.mode + "'");
        }
        if (w.mode == "burst" && (w.burst_on_ms <= 0.0 || w.burst_off_ms <= 0.0)) {
            throw ConfigError("guests[" + std::to_string(i) + "].workload.burst_on_ms",
                              "burst mode needs positive on/off durations");
        }
    }
    bool known = false;
    for (const auto& name : known_scenarios()) {
        known |= (name == c.scenario);
    }
    if (!known) {
        throw ConfigError("scenario.name", "unknown scenario '" + c.scenario + "'");
    }
    if (c.duration_ms < 0.0) {
        throw ConfigError("duration_ms", "must be nonnegative");
    }
    if (c.warmup_ms < 0.0) {
        throw ConfigError("warmup_ms", "must be nonnegative");
    }
}

inline SimConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config", "cannot open file: " + path);
    }
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw ConfigError("config", "JSON parse error in " + path + ": " + e.what());
    }
    SimConfig c = config_from_json(j);
    validate_config(c);
    return c;
}

} // namespace stacksim
