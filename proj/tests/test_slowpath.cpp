#include "stacksim/slowpath.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <memory>
#include <vector>

using namespace stacksim;

namespace {

// Minimal AppHooks recorder.
struct RecordingApp : AppHooks {
    std::vector<std::uint32_t> connected;
    std::vector<std::uint32_t> failed;
    std::vector<std::uint32_t> closed;
    void on_connected(std::uint32_t conn, const FlowPtr&, Cycles) override {
        connected.push_back(conn);
    }
    void on_connect_failed(std::uint32_t conn, Cycles) override { failed.push_back(conn); }
    void on_closed(std::uint32_t conn, Cycles) override { closed.push_back(conn); }
    void on_data(std::uint32_t, std::uint32_t, Cycles) override {}
};

struct ScheduledEvent {
    Cycles at;
    std::uint32_t kind;
};

struct SlowFixture {
    explicit SlowFixture(std::size_t num_guests, SlowPathConfig cfg = {})
        : table(num_guests), budgets(2, num_guests, 210000, 210000) {
        AllocatorConfig acfg;
        acfg.cap = 210000;
        acfg.update_period = 210000;
        for (std::size_t g = 0; g < num_guests; ++g) {
            acfg.weights.push_back(1.0);
            guests.push_back(std::make_unique<GuestContext>(static_cast<GuestId>(g), 1.0, 1));
            apps.push_back(std::make_unique<RecordingApp>());
            guests.back()->app = apps.back().get();
            ptrs.push_back(guests.back().get());
        }
        sp = std::make_unique<SlowPath>(
            cfg, acfg, table, budgets, ptrs,
            [this](const Packet& p, Cycles) { wire.push_back(p); },
            [this](Cycles at, std::uint32_t kind) { events.push_back({at, kind}); });
        sp->set_rate_policy(std::make_unique<AimdRatePolicy>(0.6));
        for (GuestId g = 0; g < num_guests; ++g) {
            TunnelInfo info;
            info.outer_dst_ip = 0x0a000002;
            info.outer_dst_port = 4754;
            info.gre_key = SlowPath::kTenantBase + g;
            info.dst_mac = 0x02;
            sp->registry().add(SlowPath::kTenantBase + g, 0xc0a80001u | (g << 8), info);
        }
    }

    SlowPath::ConnectSpec spec(GuestId g, std::uint32_t conn, std::uint16_t port) {
        SlowPath::ConnectSpec s;
        s.guest = g;
        s.conn_index = conn;
        s.local_ip = 0xc0a80002u | (g << 8);
        s.local_port = port;
        s.remote_vip = 0xc0a80001u | (g << 8);
        s.remote_port = 7;
        s.tenant = SlowPath::kTenantBase + g;
        s.outer_src_ip = 0x0a000001;
        s.outer_src_port = 40000;
        s.src_mac = 0x01;
        return s;
    }

    // Runs pending slow-path events up to and including `until`.
    void pump(Cycles until) {
        while (!events.empty()) {
            auto it = std::min_element(events.begin(), events.end(),
                                       [](const ScheduledEvent& a, const ScheduledEvent& b) {
                                           return a.at < b.at;
                                       });
            if (it->at > until) {
                return;
            }
            const ScheduledEvent ev = *it;
            events.erase(it);
            if (ev.kind == SlowPath::kEvStep) {
                sp->on_step(ev.at);
            } else {
                sp->on_resolution_done(ev.at);
            }
        }
    }

    FlowTable table;
    BudgetTable budgets;
    std::vector<std::unique_ptr<GuestContext>> guests;
    std::vector<GuestContext*> ptrs;
    std::vector<std::unique_ptr<RecordingApp>> apps;
    std::vector<Packet> wire;
    std::vector<ScheduledEvent> events;
    std::unique_ptr<SlowPath> sp;
};

} // namespace

TEST_CASE("registered destination resolves after the configured latency", "[slowpath]") {
    SlowPathConfig cfg;
    cfg.resolution_latency = 2000;
    cfg.service_delay = 100;
    SlowFixture fx(1, cfg);
    fx.sp->enqueue_connect(fx.spec(0, 0, 10000), 0);
    REQUIRE(fx.events.size() == 1);
    CHECK(fx.events[0].kind == SlowPath::kEvStep);
    CHECK(fx.events[0].at == 100);
    fx.pump(100); // service the connect; a resolution event appears
    REQUIRE(fx.events.size() == 1);
    CHECK(fx.events[0].kind == SlowPath::kEvResolution);
    CHECK(fx.events[0].at == 100 + 2000);
    fx.pump(2100);
    // resolution completed: the SYN is on the wire
    REQUIRE(fx.wire.size() == 1);
    CHECK(fx.wire[0].flags == kFlagSyn);
    CHECK(fx.wire[0].gre_key == SlowPath::kTenantBase);
    CHECK(fx.wire[0].outer_dst_ip == 0x0a000002);
}

TEST_CASE("unregistered destination is rejected", "[slowpath]") {
    SlowFixture fx(1);
    auto s = fx.spec(0, 0, 10000);
    s.remote_vip = 0xdeadbeef;
    fx.sp->enqueue_connect(s, 0);
    fx.pump(1u << 20);
    CHECK(fx.wire.empty());
    CHECK(fx.apps[0]->failed == std::vector<std::uint32_t>{0});
    CHECK(fx.sp->stats().no_routes == 1);
}

TEST_CASE("concurrent resolutions for different VMs complete round-robin", "[slowpath]") {
    SlowPathConfig cfg;
    cfg.resolution_latency = 1000;
    cfg.service_delay = 10;
    SlowFixture fx(2, cfg);
    // enqueued at the same instant
    fx.sp->enqueue_connect(fx.spec(0, 0, 10000), 0);
    fx.sp->enqueue_connect(fx.spec(1, 0, 10000), 0);
    fx.pump(10);
    // serial resolver: guest 0 finishes at 1010, guest 1 at 2010
    fx.pump(1010);
    REQUIRE(fx.wire.size() == 1);
    CHECK(fx.wire[0].gre_key == SlowPath::kTenantBase + 0);
    fx.pump(2010);
    REQUIRE(fx.wire.size() == 2);
    CHECK(fx.wire[1].gre_key == SlowPath::kTenantBase + 1);
}

TEST_CASE("handshake installs one-shot state exactly once", "[slowpath]") {
    SlowFixture fx(1);
    fx.sp->enqueue_connect(fx.spec(0, 0, 10000), 0);
    fx.pump(1u << 20);
    REQUIRE(fx.wire.size() == 1); // SYN
    const Packet syn = fx.wire[0];

    // peer answers SYN-ACK; it reaches the slow path as a flow-table miss
    Packet syn_ack = make_ack(syn, 0, 1);
    syn_ack.flags = kFlagSyn | kFlagAck;
    fx.sp->enqueue_miss(syn_ack, 5000);
    fx.pump(1u << 20);

    REQUIRE(fx.wire.size() == 2); // final ACK
    CHECK(fx.wire[1].flags == kFlagAck);
    CHECK(fx.wire[1].seq == 1);
    CHECK(fx.wire[1].ack == 1);
    CHECK(fx.sp->stats().installs == 1);
    CHECK(fx.apps[0]->connected == std::vector<std::uint32_t>{0});

    const auto parsed = parse_packet(syn_ack);
    const FlowPtr flow = fx.table.lookup(parsed->key);
    REQUIRE(flow != nullptr);
    CHECK(flow->tx.next == 1);
    CHECK(flow->rx_next_expected == 1);
    CHECK(flow->rate > 0.0);
    CHECK(fx.guests[0]->conn_flows[0] == flow);

    // retransmitted SYN-ACK must not install a second flow
    fx.sp->enqueue_miss(syn_ack, 6000);
    fx.pump(1u << 20);
    CHECK(fx.sp->stats().installs == 1);
    CHECK(fx.table.size() == 1);
}

TEST_CASE("inbound SYN without a listener draws a reset", "[slowpath]") {
    SlowFixture fx(1);
    // build an inbound SYN: remote peer connecting to guest port 80
    HeaderTemplate remote_side;
    remote_side.outer_src_ip = 0x0a000002;
    remote_side.outer_dst_ip = 0x0a000001;
    remote_side.outer_src_port = 4754;
    remote_side.outer_dst_port = 40000;
    remote_side.gre_key = SlowPath::kTenantBase;
    remote_side.inner_src_ip = 0xc0a80001;
    remote_side.inner_dst_ip = 0xc0a80002;
    remote_side.inner_src_port = 5555;
    remote_side.inner_dst_port = 80;
    const Packet syn = assemble_packet(remote_side, 0, 0, kFlagSyn, 0);

    fx.sp->enqueue_miss(syn, 0);
    fx.pump(1u << 20);
    REQUIRE(fx.wire.size() == 1);
    CHECK((fx.wire[0].flags & kFlagRst) != 0);
    CHECK(fx.sp->stats().rsts_sent == 1);

    // with a listener, the same SYN is answered with SYN-ACK
    fx.sp->add_listener(0, 80);
    fx.sp->enqueue_miss(syn, 100);
    fx.pump(1u << 20);
    REQUIRE(fx.wire.size() == 2);
    CHECK(fx.wire[1].flags == (kFlagSyn | kFlagAck));

    // final ACK installs the server-side flow
    Packet final_ack = make_ack(fx.wire[1], 1, 1);
    fx.sp->enqueue_miss(final_ack, 200);
    fx.pump(1u << 20);
    CHECK(fx.sp->stats().installs == 1);
    const auto parsed = parse_packet(final_ack);
    CHECK(fx.table.lookup(parsed->key) != nullptr);
}

TEST_CASE("duplicate inbound SYN does not create a second half-open entry", "[slowpath]") {
    SlowFixture fx(1);
    fx.sp->add_listener(0, 80);
    HeaderTemplate remote_side;
    remote_side.gre_key = SlowPath::kTenantBase;
    remote_side.inner_src_ip = 0xc0a80001;
    remote_side.inner_dst_ip = 0xc0a80002;
    remote_side.inner_src_port = 5555;
    remote_side.inner_dst_port = 80;
    const Packet syn = assemble_packet(remote_side, 0, 0, kFlagSyn, 0);
    fx.sp->enqueue_miss(syn, 0);
    fx.sp->enqueue_miss(syn, 10);
    fx.pump(1u << 20);
    CHECK(fx.wire.size() == 2); // two SYN-ACKs, one handshake
    CHECK(fx.sp->stats().duplicate_syns == 1);
    CHECK(fx.sp->stats().installs == 0);
}

namespace {

FlowPtr install_established(SlowFixture& fx, GuestId g, std::uint16_t port) {
    fx.sp->enqueue_connect(fx.spec(g, 0, port), 0);
    fx.pump(1u << 20);
    const Packet syn = fx.wire.back();
    Packet syn_ack = make_ack(syn, 0, 1);
    syn_ack.flags = kFlagSyn | kFlagAck;
    fx.sp->enqueue_miss(syn_ack, 5000);
    fx.pump(1u << 20);
    return fx.guests[g]->conn_flows[0];
}

} // namespace

TEST_CASE("timeout rewinds the send stream and halves the rate", "[slowpath]") {
    SlowPathConfig cfg;
    cfg.rto = 420000;
    SlowFixture fx(1, cfg);
    FlowPtr flow = install_established(fx, 0, 10000);
    REQUIRE(flow != nullptr);
    const double configured = fx.sp->rate_policy().initial_rate();
    CHECK(flow->rate == configured);

    // single-loss trace: 1460 bytes sent, never acked
    flow->tx.deposit(1460);
    flow->tx.mark_sent(1460);
    flow->rto_armed = true;
    flow->unacked_since = 10000;

    fx.sp->handle_timeouts(10000 + 420000 - 1); // not yet due
    CHECK(flow->tx.unacked() == 1460);
    CHECK(fx.sp->stats().rto_fires == 0);

    fx.sp->handle_timeouts(10000 + 420000);
    CHECK(flow->tx.unacked() == 0);
    CHECK(flow->pending_tx_bytes() == 1460);
    CHECK(flow->rate == configured / 2.0);
    CHECK(fx.sp->stats().rto_fires == 1);

    // acked flows stay untouched
    flow->tx.mark_sent(1460);
    flow->tx.on_ack(flow->tx.next);
    flow->rto_armed = false;
    fx.sp->handle_timeouts(10 << 20);
    CHECK(fx.sp->stats().rto_fires == 1);
}

TEST_CASE("rate recovers additively to the configured ceiling", "[slowpath]") {
    SlowFixture fx(1);
    FlowPtr flow = install_established(fx, 0, 10000);
    const double configured = fx.sp->rate_policy().initial_rate();

    // closed-form trajectory: after one halving, +10% of configured per
    // update period, capped at configured: 0.5, 0.6, ..., 1.0.
    flow->rate = fx.sp->rate_policy().on_timeout(flow->rate);
    for (int period = 1; period <= 7; ++period) {
        fx.sp->update_flow_rates(period);
        const double expected = std::min(1.0, 0.5 + 0.1 * period) * configured;
        REQUIRE(flow->rate == Catch::Approx(expected).epsilon(1e-12));
    }
    // no timeouts afterwards: the rate stays pinned at the configured value
    fx.sp->update_flow_rates(100);
    CHECK(flow->rate == configured);
}

TEST_CASE("constant policy never changes the rate", "[slowpath]") {
    SlowFixture fx(1);
    fx.sp->set_rate_policy(std::make_unique<ConstantRatePolicy>(0.25));
    FlowPtr flow = install_established(fx, 0, 10000);
    CHECK(flow->rate == 0.25);
    flow->rate = fx.sp->rate_policy().on_timeout(flow->rate);
    CHECK(flow->rate == 0.25);
    fx.sp->update_flow_rates(1000);
    CHECK(flow->rate == 0.25);
    CHECK(fx.sp->stats().rate_changes == 0);
}

TEST_CASE("skewed slow-path load is serviced round-robin", "[slowpath]") {
    SlowPathConfig cfg;
    cfg.service_delay = 10;
    SlowFixture fx(2, cfg);
    // VM 0 floods 100 requests; VM 1 submits a single one at the same time.
    for (int i = 0; i < 100; ++i) {
        auto s = fx.spec(0, static_cast<std::uint32_t>(i), static_cast<std::uint16_t>(20000 + i));
        s.remote_vip = 0xdeadbeef; // unroutable: serviced then rejected
        fx.sp->enqueue_connect(s, 0);
    }
    auto s1 = fx.spec(1, 0, 10000);
    s1.remote_vip = 0xdeadbeef;
    fx.sp->enqueue_connect(s1, 0);
    fx.pump(1u << 24);
    // both inboxes fully drained; RR means VM 1 was served in round one,
    // i.e. it was not starved behind VM 0's backlog
    CHECK(fx.sp->items_for_guest(0) == 100);
    CHECK(fx.sp->items_for_guest(1) == 1);
    CHECK(fx.sp->stats().no_routes == 101);
}

TEST_CASE("teardown removes state symmetrically", "[slowpath]") {
    SlowFixture fx(1);
    FlowPtr flow = install_established(fx, 0, 10000);
    REQUIRE(fx.table.size() == 1);
    const std::size_t wire_before = fx.wire.size();

    fx.sp->enqueue_close(0, 0, 10000);
    fx.pump(1u << 20);
    REQUIRE(fx.wire.size() == wire_before + 1); // our FIN
    const Packet fin = fx.wire.back();
    CHECK((fin.flags & kFlagFin) != 0);

    // peer's FIN-ACK arrives as a miss-path control packet
    Packet fin_ack = make_ack(fin, 1, fin.seq + 1);
    fin_ack.flags = kFlagFin | kFlagAck;
    fx.sp->enqueue_miss(fin_ack, 20000);
    fx.pump(1u << 20);
    CHECK(fx.table.size() == 0);
    CHECK(fx.sp->stats().removes == 1);
    CHECK(fx.apps[0]->closed == std::vector<std::uint32_t>{0});
    // final ack left for the peer
    CHECK((fx.wire.back().flags & kFlagAck) != 0);
    CHECK((fx.wire.back().flags & kFlagFin) == 0);
}

TEST_CASE("tick replenishes deficits via the allocator", "[slowpath]") {
    SlowFixture fx(2);
    fx.budgets.charge_direct(0, 0, 210000 + 98700); // deficit -98,700 on core 0
    fx.sp->tick(210000);
    CHECK(fx.sp->stats().ticks == 1);
    CHECK(fx.budgets.balance(0, 0) == 0);
    CHECK(fx.budgets.balance(1, 0) == 210000);
    CHECK(fx.sp->last_update() == 210000);
}
