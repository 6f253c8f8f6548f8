#pragma once

#include "stacksim/allocator.hpp"
#include "stacksim/fastpath.hpp"
#include "stacksim/flow_table.hpp"
#include "stacksim/guest.hpp"
#include "stacksim/packet.hpp"
#include "stacksim/types.hpp"

#include <algorithm>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

namespace stacksim {

// Outcome of a virtualization lookup: everything needed to build the outer
// headers for one virtual destination.
struct TunnelInfo {
    std::uint32_t outer_dst_ip = 0;
    std::uint16_t outer_dst_port = 0;
    std::uint32_t gre_key = 0;
    std::uint64_t dst_mac = 0;
    std::optional<GuestId> local_guest; // set when the destination is a local tenant
};

// Stand-in for the vSwitch ports table: deterministic resolution from
// (tenant, virtual destination IP) to tunnelling state.
class TunnelRegistry {
public:
    void add(std::uint32_t tenant, std::uint32_t virtual_ip, TunnelInfo info) {
        entries_[key(tenant, virtual_ip)] = info;
    }

    std::optional<TunnelInfo> resolve(std::uint32_t tenant, std::uint32_t virtual_ip) const {
        auto it = entries_.find(key(tenant, virtual_ip));
        if (it == entries_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    std::size_t size() const { return entries_.size(); }

private:
    static std::uint64_t key(std::uint32_t tenant, std::uint32_t vip) {
        return (static_cast<std::uint64_t>(tenant) << 32) | vip;
    }

    std::unordered_map<std::uint64_t, TunnelInfo> entries_;
};

// Congestion-control stand-in. Writes only the flow's pacing rate; the fast
// path enforces it through next_send_time.
class RatePolicy {
public:
    virtual ~RatePolicy() = default;
    virtual double initial_rate() const = 0;
    virtual double on_timeout(double rate) const = 0;
    virtual double on_update(double rate) const = 0;
};

// Default policy: fixed configured rate, halved on timeout, recovering by
// 10% of the configured rate per update period up to the configured rate.
class AimdRatePolicy : public RatePolicy {
public:
    explicit AimdRatePolicy(double configured) : configured_(configured) {}
    double initial_rate() const override { return configured_; }
    double on_timeout(double rate) const override { return rate / 2.0; }
    double on_update(double rate) const override {
        return std::min(configured_, rate + 0.1 * configured_);
    }

private:
    double configured_;
};

class ConstantRatePolicy : public RatePolicy {
public:
    explicit ConstantRatePolicy(double configured) : configured_(configured) {}
    double initial_rate() const override { return configured_; }
    double on_timeout(double rate) const override { return rate; }
    double on_update(double rate) const override { return rate; }

private:
    double configured_;
};

struct SlowPathConfig {
    Cycles resolution_latency = 2000;
    Cycles rto = 420000;          // 200 us at 2.1 GHz
    Cycles service_delay = 2000;  // reaction latency between inbox arrival and servicing
    std::uint32_t flow_buffer_bytes = 64 * 1024;
    std::uint32_t max_handshake_retries = 8;
    bool charge_guests = false;   // experimental: bill slow-path work to budgets
    Cycles charge_per_item = 500;
};

struct SlowPathStats {
    std::uint64_t items_serviced = 0;
    std::uint64_t miss_packets = 0;
    std::uint64_t legacy_packets = 0;
    std::uint64_t orphan_packets = 0;
    std::uint64_t connects = 0;
    std::uint64_t installs = 0;
    std::uint64_t removes = 0;
    std::uint64_t duplicate_syns = 0;
    std::uint64_t resolutions = 0;
    std::uint64_t no_routes = 0;
    std::uint64_t rsts_sent = 0;
    std::uint64_t rto_fires = 0;
    std::uint64_t rate_changes = 0;
    std::uint64_t handshake_retransmits = 0;
    std::uint64_t handshake_failures = 0;
    std::uint64_t ticks = 0;
    Cycles last_event_time = 0;   // most recent non-tick slow-path action
    Cycles last_install_time = 0;
    Cycles charged_cycles = 0;    // only when charge_guests is set
};

// The control engine: connection lifecycle, simulated virtualization
// resolution, retransmission timeouts, rate updates, per-VM fair queuing of
// slow-path work, and the periodic allocator tick. Runs on its own
// dedicated core; its cycles are not billed to guests unless configured.
class SlowPath {
public:
    using PacketSink = std::function<void(const Packet&, Cycles)>; // toward the wire
    using EventHook = std::function<void(Cycles at, std::uint32_t kind)>;

    // Event kinds requested from the driver.
    static constexpr std::uint32_t kEvStep = 0;
    static constexpr std::uint32_t kEvResolution = 1;

    SlowPath(SlowPathConfig cfg, AllocatorConfig alloc_cfg, FlowTable& table, BudgetTable& budgets,
             std::vector<GuestContext*> guests, PacketSink wire_out, EventHook request_event)
        : cfg_(cfg), alloc_cfg_(std::move(alloc_cfg)), table_(table), budgets_(budgets),
          guests_(std::move(guests)), wire_out_(std::move(wire_out)),
          request_event_(std::move(request_event)), inboxes_(guests_.size() + 1),
          items_per_inbox_(guests_.size() + 1, 0), resolve_queues_(guests_.size()) {}

    TunnelRegistry& registry() { return registry_; }
    SlowPathStats& stats() { return stats_; }
    const SlowPathStats& stats() const { return stats_; }
    Cycles last_update() const { return last_update_; }

    void set_rate_policy(std::unique_ptr<RatePolicy> p) { rate_policy_ = std::move(p); }
    const RatePolicy& rate_policy() const { return *rate_policy_; }

    void add_listener(GuestId guest, std::uint16_t port) { listeners_.insert(pack(guest, port)); }

    void set_core_attach(std::function<CoreSchedState&(CoreId)> f) { core_sched_ = std::move(f); }
    void set_rss(std::function<CoreId(const FlowKey&)> f) { rss_ = std::move(f); }

    // --- work intake (fast path / guest applications) ---

    void enqueue_miss(const Packet& pkt, Cycles now) {
        WorkItem item;
        item.kind = WorkItem::Kind::MissPacket;
        item.pkt = pkt;
        const std::size_t inbox = inbox_for_tenant(pkt.gre_key);
        inboxes_[inbox].push_back(item);
        ++stats_.miss_packets;
        request_step(now);
    }

    void enqueue_legacy(const Packet& pkt, Cycles now) {
        WorkItem item;
        item.kind = WorkItem::Kind::LegacyPacket;
        item.pkt = pkt;
        inboxes_[inbox_for_tenant(pkt.gre_key)].push_back(item);
        ++stats_.legacy_packets;
        request_step(now);
    }

    struct ConnectSpec {
        GuestId guest = 0;
        std::uint32_t conn_index = 0;
        std::uint32_t local_ip = 0;
        std::uint16_t local_port = 0;
        std::uint32_t remote_vip = 0;
        std::uint16_t remote_port = 0;
        std::uint32_t tenant = 0;
        std::uint16_t outer_src_port = 0;
        std::uint32_t outer_src_ip = 0;
        std::uint64_t src_mac = 0;
        double rate_override = 0.0; // 0 = policy initial rate
    };

    void enqueue_connect(const ConnectSpec& spec, Cycles now) {
        WorkItem item;
        item.kind = WorkItem::Kind::Connect;
        item.connect = spec;
        inboxes_[spec.guest].push_back(item);
        request_step(now);
    }

    void enqueue_close(GuestId guest, std::uint32_t conn_index, Cycles now) {
        WorkItem item;
        item.kind = WorkItem::Kind::Close;
        item.close_guest = guest;
        item.close_conn = conn_index;
        inboxes_[guest].push_back(item);
        request_step(now);
    }

    // --- event handlers (driver) ---

    // Services the per-VM request queues in round-robin order: one item per
    // backlogged VM per round, so service counts differ by at most one.
    void on_step(Cycles now) {
        step_pending_ = false;
        bool any = true;
        while (any) {
            any = false;
            const std::size_t n = inboxes_.size();
            for (std::size_t k = 0; k < n; ++k) {
                const std::size_t idx = (rr_cursor_ + k) % n;
                if (inboxes_[idx].empty()) {
                    continue;
                }
                WorkItem item = inboxes_[idx].front();
                inboxes_[idx].pop_front();
                any = true;
                ++items_per_inbox_[idx];
                service(item, now);
            }
            rr_cursor_ = (rr_cursor_ + 1) % inboxes_.size();
        }
    }

    std::uint64_t items_for_guest(GuestId g) const {
        return g < items_per_inbox_.size() ? items_per_inbox_[g] : 0;
    }

    void on_resolution_done(Cycles now) {
        if (!resolver_busy_) {
            return;
        }
        resolver_busy_ = false;
        ResolutionRequest req = current_resolution_;
        ++stats_.resolutions;
        mark_event(now);
        start_next_resolution(now);
        complete_connect(req, now);
    }

    // The periodic 100 us slow-path tick: replenish budgets, fire timeouts,
    // update rates, and drain any backlogged request queues.
    void tick(Cycles now) {
        ++stats_.ticks;
        replenish_all(now, budgets_, alloc_cfg_, last_update_);
        handle_timeouts(now);
        update_flow_rates(now);
        on_step(now);
    }

    // Go-back-N: flows with unacknowledged data older than the timeout are
    // rewound to the last acknowledged byte and requeued for transmission.
    void handle_timeouts(Cycles now) {
        // Snapshot the per-guest lists first: servicing can remove flows.
        std::vector<std::vector<FlowPtr>> flows(guests_.size());
        for (GuestId g = 0; g < guests_.size(); ++g) {
            flows[g] = table_.guest_flows(g);
        }
        // Round-robin across guests so one VM's timeouts cannot starve
        // another's within a tick: at most one firing per VM per round.
        std::vector<std::size_t> pos(guests_.size(), 0);
        bool remaining = true;
        while (remaining) {
            remaining = false;
            for (GuestId g = 0; g < guests_.size(); ++g) {
                while (pos[g] < flows[g].size()) {
                    const FlowPtr& flow = flows[g][pos[g]++];
                    if (fire_timeout_if_due(flow, now)) {
                        break; // serviced one for this VM, move to the next VM
                    }
                }
                if (pos[g] < flows[g].size()) {
                    remaining = true;
                }
            }
        }
        retry_handshakes(now);
    }

    void update_flow_rates(Cycles now) {
        for (GuestId g = 0; g < guests_.size(); ++g) {
            for (const FlowPtr& flow : table_.guest_flows(g)) {
                const double updated = rate_policy_->on_update(flow->rate);
                if (updated != flow->rate) {
                    flow->rate = updated;
                    ++stats_.rate_changes;
                    mark_event(now);
                }
            }
        }
    }

private:
    struct WorkItem {
        enum class Kind { MissPacket, LegacyPacket, Connect, Close };
        Kind kind = Kind::MissPacket;
        Packet pkt;
        ConnectSpec connect;
        GuestId close_guest = 0;
        std::uint32_t close_conn = 0;
    };

    struct ResolutionRequest {
        ConnectSpec spec;
    };

    struct HalfOpen {
        enum class State { SynSent, SynReceived };
        State state = State::SynSent;
        HeaderTemplate tpl;
        GuestId guest = 0;
        std::uint32_t conn_index = 0;
        double rate = 0.0;
        std::uint32_t retries = 0;
        Cycles last_send = 0;
        bool outbound = true;
    };

    struct Closing {
        FlowPtr flow;
        bool fin_sent = false;
        std::uint32_t retries = 0;
        Cycles last_send = 0;
    };

    static std::uint64_t pack(GuestId g, std::uint16_t port) {
        return (static_cast<std::uint64_t>(g) << 16) | port;
    }

    std::size_t inbox_for_tenant(std::uint32_t gre_key) {
        for (GuestId g = 0; g < guests_.size(); ++g) {
            if (tenant_of(g) == gre_key) {
                return g;
            }
        }
        return inboxes_.size() - 1; // catch-all queue for unknown tenants
    }

    // Tenant id convention: one virtual network per guest.
    std::uint32_t tenant_of(GuestId g) const { return kTenantBase + g; }

public:
    static constexpr std::uint32_t kTenantBase = 1000;

private:
    void request_step(Cycles now) {
        if (!step_pending_) {
            step_pending_ = true;
            request_event_(now + cfg_.service_delay, kEvStep);
        }
    }

    void mark_event(Cycles now) { stats_.last_event_time = std::max(stats_.last_event_time, now); }

    void charge_item(GuestId g, Cycles now) {
        (void)now;
        if (cfg_.charge_guests && g < guests_.size()) {
            const CoreId core = static_cast<CoreId>(g % budgets_.num_cores());
            budgets_.charge_direct(core, g, cfg_.charge_per_item);
            stats_.charged_cycles += cfg_.charge_per_item;
        }
    }

    void service(const WorkItem& item, Cycles now) {
        ++stats_.items_serviced;
        switch (item.kind) {
        case WorkItem::Kind::MissPacket:
            mark_event(now);
            handle_miss_packet(item.pkt, now);
            break;
        case WorkItem::Kind::LegacyPacket:
            // Counted, not delivered: legacy traffic is outside the data path.
            mark_event(now);
            break;
        case WorkItem::Kind::Connect:
            mark_event(now);
            ++stats_.connects;
            charge_item(item.connect.guest, now);
            request_resolution(item.connect, now);
            break;
        case WorkItem::Kind::Close:
            mark_event(now);
            charge_item(item.close_guest, now);
            begin_close(item.close_guest, item.close_conn, now);
            break;
        }
    }

    // --- virtualization resolution (serial, per-VM round-robin) ---

    void request_resolution(const ConnectSpec& spec, Cycles now) {
        resolve_queues_[spec.guest].push_back(ResolutionRequest{spec});
        if (!resolver_busy_) {
            start_next_resolution(now);
        }
    }

    void start_next_resolution(Cycles now) {
        const std::size_t n = resolve_queues_.size();
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t idx = (resolve_cursor_ + k) % n;
            if (resolve_queues_[idx].empty()) {
                continue;
            }
            current_resolution_ = resolve_queues_[idx].front();
            resolve_queues_[idx].pop_front();
            resolve_cursor_ = (idx + 1) % n;
            resolver_busy_ = true;
            request_event_(now + cfg_.resolution_latency, kEvResolution);
            return;
        }
    }

    void complete_connect(const ResolutionRequest& req, Cycles now) {
        const ConnectSpec& spec = req.spec;
        const auto info = registry_.resolve(spec.tenant, spec.remote_vip);
        GuestContext& guest = *guests_[spec.guest];
        if (!info) {
            ++stats_.no_routes;
            mark_event(now);
            if (guest.app) {
                guest.app->on_connect_failed(spec.conn_index, now);
            }
            return;
        }
        HeaderTemplate tpl;
        tpl.outer_src_mac = spec.src_mac;
        tpl.outer_dst_mac = info->dst_mac;
        tpl.outer_src_ip = spec.outer_src_ip;
        tpl.outer_dst_ip = info->outer_dst_ip;
        tpl.outer_src_port = spec.outer_src_port;
        tpl.outer_dst_port = info->outer_dst_port;
        tpl.gre_key = info->gre_key;
        tpl.inner_src_ip = spec.local_ip;
        tpl.inner_dst_ip = spec.remote_vip;
        tpl.inner_src_port = spec.local_port;
        tpl.inner_dst_port = spec.remote_port;

        const FlowKey key = key_from_template(tpl);
        HalfOpen half;
        half.state = HalfOpen::State::SynSent;
        half.tpl = tpl;
        half.guest = spec.guest;
        half.conn_index = spec.conn_index;
        half.rate = spec.rate_override > 0.0 ? spec.rate_override : rate_policy_->initial_rate();
        half.last_send = now;
        half_open_[key] = half;
        half_open_order_.push_back(key);

        const Packet syn = assemble_packet(tpl, 0, 0, kFlagSyn, 0);
        wire_out_(syn, now);
        mark_event(now);
    }

    // --- handshake and teardown packet handling ---

    void handle_miss_packet(const Packet& pkt, Cycles now) {
        const auto parsed = parse_packet(pkt);
        if (!parsed) {
            ++stats_.legacy_packets;
            return;
        }
        const FlowKey& key = parsed->key;
        const bool syn = (parsed->flags & kFlagSyn) != 0;
        const bool ack = (parsed->flags & kFlagAck) != 0;
        const bool fin = (parsed->flags & kFlagFin) != 0;
        const bool rst = (parsed->flags & kFlagRst) != 0;

        if (rst) {
            abort_flow(key, now);
            return;
        }

        FlowPtr established = table_.lookup(key);
        if (established) {
            if (fin) {
                handle_peer_fin(established, *parsed, pkt, now);
            } else if (syn && !ack) {
                // Retransmitted SYN for an installed connection: keep the
                // existing state, replay the SYN-ACK.
                ++stats_.duplicate_syns;
                const Packet syn_ack =
                    assemble_packet(established->tpl, 0, established->rx_next_expected,
                                    kFlagSyn | kFlagAck, 0);
                wire_out_(syn_ack, now);
            }
            // Stray ACKs for an installed flow carry no slow-path work.
            return;
        }

        auto half_it = half_open_.find(key);
        if (syn && ack) {
            // SYN-ACK completing one of our outbound handshakes.
            if (half_it == half_open_.end() || half_it->second.state != HalfOpen::State::SynSent) {
                ++stats_.orphan_packets;
                return;
            }
            install_flow(half_it->second, key, now);
            erase_half_open(half_it);
            const Packet final_ack = make_ack(pkt, 1, 1);
            wire_out_(final_ack, now);
            return;
        }
        if (syn) {
            handle_inbound_syn(pkt, *parsed, half_it, now);
            return;
        }
        if (ack && half_it != half_open_.end() &&
            half_it->second.state == HalfOpen::State::SynReceived) {
            // Final ACK of an inbound handshake.
            install_flow(half_it->second, key, now);
            erase_half_open(half_it);
            return;
        }
        if (fin) {
            // FIN for a connection we no longer track: acknowledge to let
            // the peer finish.
            const Packet fin_ack = make_ack(pkt, parsed->ack, parsed->seq + 1);
            wire_out_(fin_ack, now);
            return;
        }
        ++stats_.orphan_packets;
    }

    void handle_inbound_syn(const Packet& pkt, const ParsedPacket& parsed,
                            std::unordered_map<FlowKey, HalfOpen, FlowKeyHash>::iterator half_it,
                            Cycles now) {
        if (half_it != half_open_.end()) {
            // Handshake already in progress: treat as retransmission.
            ++stats_.duplicate_syns;
            const Packet syn_ack = assemble_packet(half_it->second.tpl, 0, 1, kFlagSyn | kFlagAck, 0);
            wire_out_(syn_ack, now);
            return;
        }
        const GuestId guest = guest_for_tenant(parsed.key.tunnel_id);
        const bool has_listener = guest < guests_.size() &&
                                  listeners_.count(pack(guest, parsed.key.guest_local_port)) > 0;
        if (!has_listener) {
            Packet rst = make_ack(pkt, 0, parsed.seq + 1);
            rst.flags = kFlagRst | kFlagAck;
            wire_out_(rst, now);
            ++stats_.rsts_sent;
            return;
        }
        HalfOpen half;
        half.state = HalfOpen::State::SynReceived;
        half.tpl = template_from_swapped(pkt);
        half.guest = guest;
        half.conn_index = alloc_inbound_conn(guest);
        half.rate = rate_policy_->initial_rate();
        half.last_send = now;
        half.outbound = false;
        half_open_[parsed.key] = half;
        half_open_order_.push_back(parsed.key);
        const Packet syn_ack = assemble_packet(half.tpl, 0, parsed.seq + 1, kFlagSyn | kFlagAck, 0);
        wire_out_(syn_ack, now);
    }

    std::uint32_t alloc_inbound_conn(GuestId guest) {
        GuestContext& g = *guests_[guest];
        g.conn_flows.push_back(nullptr);
        return static_cast<std::uint32_t>(g.conn_flows.size() - 1);
    }

    GuestId guest_for_tenant(std::uint32_t tenant) const {
        return tenant >= kTenantBase ? tenant - kTenantBase
                                     : static_cast<GuestId>(guests_.size());
    }

    void install_flow(const HalfOpen& half, const FlowKey& key, Cycles now) {
        auto flow = std::make_shared<ConsolidatedFlowState>();
        flow->key = key;
        flow->guest = half.guest;
        flow->conn_index = half.conn_index;
        flow->tpl = half.tpl;
        // Both directions open at sequence 1: the SYN consumed one unit.
        flow->tx.acked = flow->tx.next = flow->tx.stream_end = flow->tx.high_water = 1;
        flow->tx.capacity = cfg_.flow_buffer_bytes;
        flow->rx_next_expected = 1;
        flow->rx_buffer.capacity = cfg_.flow_buffer_bytes;
        flow->rate = half.rate;
        flow->next_send_time = now;
        flow->flow_uid = next_flow_uid_++;
        flow->owner_core = rss_ ? rss_(key) : 0;
        if (table_.install(flow) == FlowTable::InstallResult::Duplicate) {
            return; // existing state retained
        }
        GuestContext& guest = *guests_[half.guest];
        if (half.conn_index >= guest.conn_flows.size()) {
            guest.conn_flows.resize(half.conn_index + 1);
        }
        guest.conn_flows[half.conn_index] = flow;
        ++stats_.installs;
        stats_.last_install_time = now;
        mark_event(now);
        if (guest.app) {
            guest.app->on_connected(half.conn_index, flow, now);
        }
    }

    void erase_half_open(std::unordered_map<FlowKey, HalfOpen, FlowKeyHash>::iterator it) {
        const FlowKey key = it->first;
        half_open_.erase(it);
        std::erase(half_open_order_, key);
    }

    void handle_peer_fin(const FlowPtr& flow, const ParsedPacket& parsed, const Packet& pkt,
                         Cycles now) {
        // Peer-initiated or reply FIN: acknowledge, and if we had not sent a
        // FIN yet this is a passive close (answered with our own FIN).
        auto closing_it = closing_.find(flow->key);
        if (closing_it != closing_.end()) {
            // Our FIN was answered: final ack, remove state.
            const Packet final_ack = make_ack(pkt, parsed.ack, parsed.seq + 1);
            wire_out_(final_ack, now);
            finish_close(flow, now);
            closing_.erase(closing_it);
            return;
        }
        Packet fin_ack = make_ack(pkt, flow->tx.next, parsed.seq + 1);
        fin_ack.flags = kFlagFin | kFlagAck;
        wire_out_(fin_ack, now);
        finish_close(flow, now);
    }

    void begin_close(GuestId guest, std::uint32_t conn_index, Cycles now) {
        GuestContext& g = *guests_[guest];
        FlowPtr flow = g.flow_for(conn_index);
        if (!flow || flow->closed) {
            return;
        }
        flow->closing = true;
        Closing c;
        c.flow = flow;
        closing_[flow->key] = c;
        try_send_fin(closing_[flow->key], now);
    }

    void try_send_fin(Closing& c, Cycles now) {
        // Defer the FIN until the send pipe is empty so teardown never races
        // in-flight data.
        if (c.flow->tx.unacked() > 0 || c.flow->pending_tx_bytes() > 0) {
            return;
        }
        const Packet fin = assemble_packet(c.flow->tpl, c.flow->tx.next, c.flow->rx_next_expected,
                                           kFlagFin | kFlagAck, 0);
        wire_out_(fin, now);
        c.fin_sent = true;
        c.last_send = now;
        mark_event(now);
    }

    void finish_close(const FlowPtr& flow, Cycles now) {
        const GuestId guest = flow->guest;
        const std::uint32_t conn = flow->conn_index;
        if (table_.remove(flow->key) == FlowTable::RemoveResult::Ok) {
            ++stats_.removes;
            mark_event(now);
        }
        GuestContext& g = *guests_[guest];
        if (conn < g.conn_flows.size() && g.conn_flows[conn] == flow) {
            g.conn_flows[conn] = nullptr;
        }
        if (g.app) {
            g.app->on_closed(conn, now);
        }
    }

    void abort_flow(const FlowKey& key, Cycles now) {
        auto half_it = half_open_.find(key);
        if (half_it != half_open_.end()) {
            GuestContext& g = *guests_[half_it->second.guest];
            if (g.app) {
                g.app->on_connect_failed(half_it->second.conn_index, now);
            }
            ++stats_.handshake_failures;
            erase_half_open(half_it);
            return;
        }
        FlowPtr flow = table_.lookup(key);
        if (flow) {
            closing_.erase(key);
            finish_close(flow, now);
        }
    }

    bool fire_timeout_if_due(const FlowPtr& flow, Cycles now) {
        if (flow->closed || !flow->rto_armed || flow->tx.unacked() == 0) {
            maybe_send_deferred_fin(flow, now);
            return false;
        }
        if (now - flow->unacked_since < cfg_.rto) {
            return false;
        }
        flow->tx.rewind();
        flow->unacked_since = now;
        flow->rate = rate_policy_->on_timeout(flow->rate);
        ++stats_.rto_fires;
        mark_event(now);
        if (core_sched_) {
            core_sched_(flow->owner_core).requeue_flow_immediate(flow, now);
        }
        return true;
    }

    void maybe_send_deferred_fin(const FlowPtr& flow, Cycles now) {
        if (!flow->closing) {
            return;
        }
        auto it = closing_.find(flow->key);
        if (it == closing_.end()) {
            return;
        }
        Closing& c = it->second;
        if (!c.fin_sent) {
            try_send_fin(c, now);
        } else if (now - c.last_send >= cfg_.rto) {
            if (++c.retries > cfg_.max_handshake_retries) {
                // Peer unreachable: drop the state unilaterally.
                FlowPtr flow_ptr = c.flow;
                closing_.erase(it);
                finish_close(flow_ptr, now);
                return;
            }
            const Packet fin = assemble_packet(c.flow->tpl, c.flow->tx.next,
                                               c.flow->rx_next_expected, kFlagFin | kFlagAck, 0);
            wire_out_(fin, now);
            c.last_send = now;
            ++stats_.handshake_retransmits;
            mark_event(now);
        }
    }

    void retry_handshakes(Cycles now) {
        std::vector<FlowKey> failed;
        for (const FlowKey& key : half_open_order_) {
            auto it = half_open_.find(key);
            if (it == half_open_.end()) {
                continue;
            }
            HalfOpen& half = it->second;
            if (now - half.last_send < cfg_.rto) {
                continue;
            }
            if (++half.retries > cfg_.max_handshake_retries) {
                failed.push_back(key);
                continue;
            }
            Packet resend;
            if (half.state == HalfOpen::State::SynSent) {
                resend = assemble_packet(half.tpl, 0, 0, kFlagSyn, 0);
            } else {
                resend = assemble_packet(half.tpl, 0, 1, kFlagSyn | kFlagAck, 0);
            }
            wire_out_(resend, now);
            half.last_send = now;
            ++stats_.handshake_retransmits;
            mark_event(now);
        }
        for (const FlowKey& key : failed) {
            auto it = half_open_.find(key);
            if (it == half_open_.end()) {
                continue;
            }
            GuestContext& g = *guests_[it->second.guest];
            if (g.app) {
                g.app->on_connect_failed(it->second.conn_index, now);
            }
            ++stats_.handshake_failures;
            mark_event(now);
            erase_half_open(it);
        }
    }

    SlowPathConfig cfg_;
    AllocatorConfig alloc_cfg_;
    FlowTable& table_;
    BudgetTable& budgets_;
    std::vector<GuestContext*> guests_;
    PacketSink wire_out_;
    EventHook request_event_;
    TunnelRegistry registry_;
    std::set<std::uint64_t> listeners_;
    std::unique_ptr<RatePolicy> rate_policy_ = std::make_unique<ConstantRatePolicy>(0.6);

    std::vector<std::deque<WorkItem>> inboxes_; // one per guest + catch-all
    std::vector<std::uint64_t> items_per_inbox_;
    std::size_t rr_cursor_ = 0;
    bool step_pending_ = false;

    std::vector<std::deque<ResolutionRequest>> resolve_queues_;
    std::size_t resolve_cursor_ = 0;
    bool resolver_busy_ = false;
    ResolutionRequest current_resolution_;

    std::unordered_map<FlowKey, HalfOpen, FlowKeyHash> half_open_;
    std::vector<FlowKey> half_open_order_;
    std::unordered_map<FlowKey, Closing, FlowKeyHash> closing_;

    std::function<CoreSchedState&(CoreId)> core_sched_;
    std::function<CoreId(const FlowKey&)> rss_;

    Cycles last_update_ = 0;
    std::uint64_t next_flow_uid_ = 1;
    SlowPathStats stats_;
};

} // namespace stacksim
