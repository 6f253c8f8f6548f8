#pragma once

#include "stacksim/allocator.hpp"
#include "stacksim/config.hpp"
#include "stacksim/event_queue.hpp"
#include "stacksim/fastpath.hpp"
#include "stacksim/flow_table.hpp"
#include "stacksim/link.hpp"
#include "stacksim/metrics.hpp"
#include "stacksim/remote.hpp"
#include "stacksim/slowpath.hpp"
#include "stacksim/workload.hpp"

#include <memory>
#include <string>
#include <vector>

namespace stacksim {

// Address plan for the simulated topology (one stack host, one remote peer).
namespace addrplan {

inline constexpr std::uint32_t kStackOuterIp = 0x0a000001;  // 10.0.0.1
inline constexpr std::uint32_t kRemoteOuterIp = 0x0a000002; // 10.0.0.2
inline constexpr std::uint64_t kStackMac = 0x020000000001ULL;
inline constexpr std::uint64_t kRemoteMac = 0x020000000002ULL;
inline constexpr std::uint16_t kRemoteOuterPort = 4754;
inline constexpr std::uint16_t kEchoPort = 7;

inline std::uint32_t guest_vip(GuestId g) {
    return (192u << 24) | (168u << 16) | (g << 8) | 2u;
}

inline std::uint32_t remote_vip(GuestId g) {
    return (192u << 24) | (168u << 16) | (g << 8) | 1u;
}

inline std::uint16_t local_port(std::uint32_t conn, std::uint32_t attempt,
                                std::uint32_t connections) {
    const std::uint32_t offset =
        (conn + attempt * std::max<std::uint32_t>(1, connections)) % 55000u;
    return static_cast<std::uint16_t>(10000u + offset);
}

} // namespace addrplan

// One deterministic virtual-time run: wires the fast-path cores, slow path,
// link, remote peer, and guest applications together and drives them through
// the event queue until the configured duration elapses.
class Simulation {
public:
    explicit Simulation(const SimConfig& cfg, bool ablate_no_budget = false)
        : cfg_(cfg), cycles_per_sec_(cfg.cpu_ghz * 1e9),
          duration_(cycles_from_us(cfg.duration_ms * 1000.0, cfg.cpu_ghz)),
          warmup_(cycles_from_us(cfg.warmup_ms * 1000.0, cfg.cpu_ghz)),
          table_(cfg.guests.size()),
          budgets_(cfg.num_fastpath_cores, cfg.guests.size(),
                   cfg.cap_cycles == -1 ? kUnboundedCap : cfg.cap_cycles,
                   cfg.cap_cycles == -1 ? 0 : cfg.cap_cycles),
          guest_stats_(cfg.guests.size()),
          link_(static_cast<std::uint64_t>(cfg.link_bandwidth_gbps * 1e9),
                cycles_from_us(cfg.link_propagation_us, cfg.cpu_ghz), cycles_per_sec_,
                cfg.link_loss_rate, cfg.seed ^ 0x9e3779b97f4a7c15ULL) {
        costs_.base_cycles_per_task = cfg.base_cycles_per_task;
        costs_.milli_cycles_per_payload_byte =
            static_cast<std::uint32_t>(cfg.cycles_per_payload_byte * 1000.0 + 0.5);
        costs_.poll_empty_cycles = cfg.poll_empty_cycles;
        costs_.jitter_pct = cfg.cost_jitter_pct;
        costs_.seed_jitter(cfg.seed ^ 0x51ed270692a2e4f3ULL);

        alloc_cfg_.boost = cfg.boost;
        alloc_cfg_.cap = cfg.cap_cycles == -1 ? kUnboundedCap : cfg.cap_cycles;
        alloc_cfg_.update_period = cycles_from_us(cfg.update_period_us, cfg.cpu_ghz);
        for (const auto& g : cfg.guests) {
            alloc_cfg_.weights.push_back(g.weight);
        }

        for (const auto& g : cfg.guests) {
            guests_.push_back(std::make_unique<GuestContext>(g.id, g.weight, 1));
        }
        std::vector<GuestContext*> guest_ptrs;
        for (auto& g : guests_) {
            guest_ptrs.push_back(g.get());
        }

        RemoteHost::Config rcfg;
        rcfg.processing_delay = cycles_from_us(cfg.remote_delay_us, cfg.cpu_ghz);
        rcfg.rto = cycles_from_us(cfg.remote_rto_us, cfg.cpu_ghz);
        rcfg.mss = cfg.mss;
        remote_rto_ = rcfg.rto;
        remote_ = std::make_unique<RemoteHost>(rcfg, [this](const Packet& p, Cycles at) {
            if (auto arrival = link_.transmit(p, at, LinkDirection::ToStack)) {
                events_.push(*arrival, EventKind::PacketToStack, 0, p);
            }
        });

        SlowPathConfig scfg;
        scfg.resolution_latency = cycles_from_us(cfg.resolution_latency_us, cfg.cpu_ghz);
        scfg.rto = cycles_from_us(cfg.slowpath_rto_us, cfg.cpu_ghz);
        scfg.service_delay = cycles_from_us(cfg.slowpath_service_delay_us, cfg.cpu_ghz);
        scfg.flow_buffer_bytes = cfg.flow_buffer_bytes;
        scfg.charge_guests = cfg.slowpath_charge_guests;
        slowpath_ = std::make_unique<SlowPath>(
            scfg, alloc_cfg_, table_, budgets_, guest_ptrs,
            [this](const Packet& p, Cycles at) {
                if (auto arrival = link_.transmit(p, at, LinkDirection::ToRemote)) {
                    events_.push(*arrival, EventKind::PacketToRemote, 0, p);
                }
            },
            [this](Cycles at, std::uint32_t kind) {
                events_.push(at, kind == SlowPath::kEvStep ? EventKind::SlowPathStep
                                                           : EventKind::ResolutionDone);
            });
        const double initial_rate = cfg.initial_rate_gbps / (8.0 * cfg.cpu_ghz);
        if (cfg.rate_policy == "constant") {
            slowpath_->set_rate_policy(std::make_unique<ConstantRatePolicy>(initial_rate));
        } else {
            slowpath_->set_rate_policy(std::make_unique<AimdRatePolicy>(initial_rate));
        }
        slowpath_->set_rss([this](const FlowKey& key) {
            return static_cast<CoreId>(FlowKeyHash{}(key) % cfg_.num_fastpath_cores);
        });
        slowpath_->set_core_attach(
            [this](CoreId c) -> CoreSchedState& { return cores_[c]->sched(); });
        populate_registry();

        for (CoreId c = 0; c < cfg.num_fastpath_cores; ++c) {
            cores_.push_back(std::make_unique<FastPathCore>(
                c, cfg.guests.size(), cfg.batch_size, cfg.mss, table_, budgets_, costs_,
                guest_ptrs, guest_stats_,
                [this](const Packet& p, Cycles at) {
                    if (auto arrival = link_.transmit(p, at, LinkDirection::ToRemote)) {
                        events_.push(*arrival, EventKind::PacketToRemote, 0, p);
                    }
                },
                [this](const Packet& p, Cycles at) {
                    if (p.proto != WireProto::TcpOverGre) {
                        slowpath_->enqueue_legacy(p, at);
                    } else {
                        slowpath_->enqueue_miss(p, at);
                    }
                }));
            cores_.back()->set_budget_gating(!ablate_no_budget);
            cores_.back()->set_drop_cost_fraction(cfg.drop_cost_fraction);
        }

        for (GuestId g = 0; g < cfg.guests.size(); ++g) {
            const auto& gc = cfg.guests[g];
            apps_.push_back(std::make_unique<GuestApp>(
                g, *guests_[g], *slowpath_, gc.workload, warmup_,
                [this, g, conns = gc.workload.connections](std::uint32_t conn,
                                                           std::uint32_t attempt) {
                    return make_connect_spec(g, conn, attempt, conns);
                }));
        }
    }

    void set_audit(ScheduleAudit* audit) {
        for (auto& core : cores_) {
            core->set_audit(audit);
        }
    }

    // Executes the event loop for the configured virtual duration and
    // returns the collected metrics. Throws InvariantViolation if the cycle
    // ledger fails to balance.
    RunRow run() {
        phase_on_.assign(apps_.size(), true);
        for (CoreId c = 0; c < cores_.size(); ++c) {
            events_.push(0, EventKind::CoreStep, c);
        }
        events_.push(alloc_cfg_.update_period, EventKind::AllocatorTick);
        const Cycles scan_period = std::max<Cycles>(1, remote_rto_ / 2);
        events_.push(scan_period, EventKind::RemoteRtoScan);
        for (GuestId g = 0; g < apps_.size(); ++g) {
            apps_[g]->start(0);
            if (apps_[g]->burst_mode()) {
                events_.push(apps_[g]->burst_on_cycles(cfg_.cpu_ghz), EventKind::WorkloadPhase, g);
            }
        }

        while (!events_.empty() && events_.top().time <= duration_) {
            const SimEvent ev = events_.pop();
            dispatch(ev);
        }

        check_ledger();
        return collect(duration_);
    }

    // --- accessors for tests and scenario drivers ---

    SlowPath& slowpath() { return *slowpath_; }
    BudgetTable& budgets() { return budgets_; }
    FlowTable& flow_table() { return table_; }
    RemoteHost& remote() { return *remote_; }
    FastPathCore& core(CoreId c) { return *cores_[c]; }
    std::size_t num_cores() const { return cores_.size(); }
    GuestApp& app(GuestId g) { return *apps_[g]; }
    const Link& link() const { return link_; }
    Cycles duration() const { return duration_; }

private:
    SlowPath::ConnectSpec make_connect_spec(GuestId g, std::uint32_t conn, std::uint32_t attempt,
                                            std::uint32_t connections) {
        SlowPath::ConnectSpec spec;
        spec.guest = g;
        spec.conn_index = conn;
        spec.local_ip = addrplan::guest_vip(g);
        spec.local_port = addrplan::local_port(conn, attempt, connections);
        spec.remote_vip = addrplan::remote_vip(g);
        spec.remote_port = addrplan::kEchoPort;
        spec.tenant = SlowPath::kTenantBase + g;
        spec.outer_src_ip = addrplan::kStackOuterIp;
        spec.outer_src_port = static_cast<std::uint16_t>(40000u + (g * 1361u + conn) % 25000u);
        spec.src_mac = addrplan::kStackMac;
        return spec;
    }

    void populate_registry() {
        auto& reg = slowpath_->registry();
        for (GuestId g = 0; g < cfg_.guests.size(); ++g) {
            TunnelInfo info;
            info.outer_dst_ip = addrplan::kRemoteOuterIp;
            info.outer_dst_port = addrplan::kRemoteOuterPort;
            info.gre_key = SlowPath::kTenantBase + g;
            info.dst_mac = addrplan::kRemoteMac;
            reg.add(SlowPath::kTenantBase + g, addrplan::remote_vip(g), info);
        }
        for (const auto& t : cfg_.tunnels) {
            TunnelInfo info;
            info.outer_dst_ip = t.outer_ip;
            info.outer_dst_port = t.outer_port;
            info.gre_key = t.gre_key;
            info.dst_mac = t.mac;
            info.local_guest = t.local_guest;
            reg.add(t.tenant, t.virtual_ip, info);
        }
    }

    void dispatch(const SimEvent& ev) {
        switch (ev.kind) {
        case EventKind::PacketToStack: {
            CoreId core = 0;
            if (const auto parsed = parse_packet(ev.packet)) {
                core = static_cast<CoreId>(FlowKeyHash{}(parsed->key) % cores_.size());
            }
            cores_[core]->nic_rx_queue().push_back(ev.packet);
            break;
        }
        case EventKind::PacketToRemote:
            remote_->on_packet(ev.packet, ev.time);
            break;
        case EventKind::ResolutionDone:
            slowpath_->on_resolution_done(ev.time);
            break;
        case EventKind::SlowPathStep:
            slowpath_->on_step(ev.time);
            break;
        case EventKind::AllocatorTick:
            slowpath_->tick(ev.time);
            events_.push(ev.time + alloc_cfg_.update_period, EventKind::AllocatorTick);
            break;
        case EventKind::WorkloadPhase: {
            const GuestId g = ev.arg;
            phase_on_[g] = !phase_on_[g];
            apps_[g]->on_phase(phase_on_[g], ev.time);
            const Cycles span = phase_on_[g] ? apps_[g]->burst_on_cycles(cfg_.cpu_ghz)
                                             : apps_[g]->burst_off_cycles(cfg_.cpu_ghz);
            events_.push(ev.time + span, EventKind::WorkloadPhase, g);
            break;
        }
        case EventKind::RemoteRtoScan:
            remote_->rto_scan(ev.time);
            events_.push(ev.time + std::max<Cycles>(1, remote_rto_ / 2),
                         EventKind::RemoteRtoScan);
            break;
        case EventKind::CoreStep: {
            const CoreId c = ev.arg;
            const Cycles consumed = cores_[c]->run_iteration(ev.time);
            events_.push(ev.time + std::max<Cycles>(1, consumed), EventKind::CoreStep, c);
            break;
        }
        }
    }

    // Exact conservation: every cycle a core consumed is either charged to a
    // guest or explicitly unaccounted overhead, per core and globally.
    void check_ledger() const {
        Cycles consumed = 0;
        Cycles charged = 0;
        Cycles unaccounted = 0;
        for (const auto& core : cores_) {
            const auto& s = core->stats();
            if (s.cycles_total != s.cycles_charged + s.cycles_unaccounted) {
                throw InvariantViolation("cycle ledger mismatch on core " +
                                         std::to_string(core->id()));
            }
            consumed += s.cycles_total;
            charged += s.cycles_charged;
            unaccounted += s.cycles_unaccounted;
        }
        const Cycles billed = budgets_.charged_total() - slowpath_->stats().charged_cycles;
        if (billed != charged) {
            throw InvariantViolation("budget table charges disagree with core charges");
        }
        if (consumed != charged + unaccounted) {
            throw InvariantViolation("global cycle ledger mismatch");
        }
    }

    RunRow collect(Cycles end_time) {
        RunRow row;
        const double window_s =
            end_time > warmup_ ? static_cast<double>(end_time - warmup_) / cycles_per_sec_ : 0.0;
        for (GuestId g = 0; g < apps_.size(); ++g) {
            GuestMetrics m;
            m.id = cfg_.guests[g].id;
            const auto& totals = apps_[g]->totals();
            m.requests_issued = totals.requests_issued;
            m.responses_completed = totals.responses_completed;
            m.connects_completed = totals.connects_completed;
            if (window_s > 0.0) {
                m.throughput_rps = static_cast<double>(totals.responses_in_window) / window_s;
                m.goodput_bps = m.throughput_rps *
                                static_cast<double>(cfg_.guests[g].workload.message_size);
            }
            auto& lat = apps_[g]->latencies();
            m.samples = lat.size();
            m.p50_us = us_from_cycles(static_cast<Cycles>(percentile(lat, 0.50)), cfg_.cpu_ghz);
            m.p99_us = us_from_cycles(static_cast<Cycles>(percentile(lat, 0.99)), cfg_.cpu_ghz);
            m.p999_us = us_from_cycles(static_cast<Cycles>(percentile(lat, 0.999)), cfg_.cpu_ghz);
            m.rx_drops = guest_stats_[g].rx_drops;
            m.slowpath_events = slowpath_->items_for_guest(g);
            row.guests.push_back(m);
        }
        GlobalMetrics& gl = row.global;
        for (const auto& core : cores_) {
            const auto& s = core->stats();
            gl.cycles_consumed += s.cycles_total;
            gl.cycles_charged += s.cycles_charged;
            gl.cycles_unaccounted += s.cycles_unaccounted;
            const double busy = s.cycles_total > 0
                                    ? 1.0 - static_cast<double>(s.cycles_idle_polls) /
                                                static_cast<double>(s.cycles_total)
                                    : 0.0;
            gl.core_utilization.push_back(busy);
        }
        gl.accounted_fraction =
            gl.cycles_consumed > 0
                ? static_cast<double>(gl.cycles_charged) / static_cast<double>(gl.cycles_consumed)
                : 0.0;
        gl.ledger_ok = gl.cycles_consumed == gl.cycles_charged + gl.cycles_unaccounted;
        gl.slowpath_items = slowpath_->stats().items_serviced;
        gl.rto_fires = slowpath_->stats().rto_fires;
        gl.link_losses = link_.stats().losses[0] + link_.stats().losses[1];
        check_metrics_invariants(row);
        return row;
    }

    SimConfig cfg_;
    double cycles_per_sec_;
    Cycles duration_;
    Cycles warmup_;
    CostModel costs_;
    AllocatorConfig alloc_cfg_;
    FlowTable table_;
    BudgetTable budgets_;
    std::vector<GuestStats> guest_stats_;
    Link link_;
    Cycles remote_rto_ = 0;
    std::vector<std::unique_ptr<GuestContext>> guests_;
    std::unique_ptr<RemoteHost> remote_;
    std::unique_ptr<SlowPath> slowpath_;
    std::vector<std::unique_ptr<FastPathCore>> cores_;
    std::vector<std::unique_ptr<GuestApp>> apps_;
    std::vector<bool> phase_on_;
    EventQueue events_;
};

} // namespace stacksim
