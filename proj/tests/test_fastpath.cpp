#include "stacksim/fastpath.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <memory>
#include <random>

using namespace stacksim;

namespace {

struct CoreFixture {
    explicit CoreFixture(std::size_t num_guests, SignedCycles initial_budget)
        : table(num_guests), budgets(1, num_guests, 1 << 20, initial_budget),
          guest_stats(num_guests) {
        for (GuestId g = 0; g < num_guests; ++g) {
            guests.push_back(std::make_unique<GuestContext>(g, 1.0, 1));
            ptrs.push_back(guests.back().get());
        }
        core = std::make_unique<FastPathCore>(
            0, num_guests, 16, 1460, table, budgets, costs, ptrs, guest_stats,
            [this](const Packet& p, Cycles) { wire.push_back(p); },
            [this](const Packet& p, Cycles) { slow.push_back(p); });
        core->set_drop_cost_fraction(0.25);
    }

    FlowPtr install_flow(GuestId g, std::uint32_t conn, std::uint16_t port, double rate = 10.0) {
        auto f = std::make_shared<ConsolidatedFlowState>();
        f->key = FlowKey{0xc0a80002u | (g << 8), port, 0xc0a80001u | (g << 8), 7, 1000 + g};
        f->guest = g;
        f->conn_index = conn;
        f->tpl.outer_src_mac = 0x02;
        f->tpl.outer_dst_mac = 0x03;
        f->tpl.outer_src_ip = 0x0a000001;
        f->tpl.outer_dst_ip = 0x0a000002;
        f->tpl.outer_src_port = 40000;
        f->tpl.outer_dst_port = 4754;
        f->tpl.gre_key = f->key.tunnel_id;
        f->tpl.inner_src_ip = f->key.guest_local_ip;
        f->tpl.inner_dst_ip = f->key.remote_ip;
        f->tpl.inner_src_port = f->key.guest_local_port;
        f->tpl.inner_dst_port = f->key.remote_port;
        f->tx.acked = f->tx.next = f->tx.stream_end = f->tx.high_water = 1;
        f->tx.capacity = 64 * 1024;
        f->rx_next_expected = 1;
        f->rx_buffer.capacity = 64 * 1024;
        f->rate = rate;
        f->flow_uid = next_uid++;
        REQUIRE(table.install(f) == FlowTable::InstallResult::Ok);
        GuestContext& ctx = *guests[g];
        if (ctx.conn_flows.size() <= conn) {
            ctx.conn_flows.resize(conn + 1);
        }
        ctx.conn_flows[conn] = f;
        return f;
    }

    Packet from_remote(const FlowPtr& f, std::uint32_t seq, std::uint32_t ack, TcpFlags flags,
                       std::uint32_t len) {
        HeaderTemplate remote_tpl;
        remote_tpl.outer_src_mac = f->tpl.outer_dst_mac;
        remote_tpl.outer_dst_mac = f->tpl.outer_src_mac;
        remote_tpl.outer_src_ip = f->tpl.outer_dst_ip;
        remote_tpl.outer_dst_ip = f->tpl.outer_src_ip;
        remote_tpl.outer_src_port = f->tpl.outer_dst_port;
        remote_tpl.outer_dst_port = f->tpl.outer_src_port;
        remote_tpl.gre_key = f->tpl.gre_key;
        remote_tpl.inner_src_ip = f->tpl.inner_dst_ip;
        remote_tpl.inner_dst_ip = f->tpl.inner_src_ip;
        remote_tpl.inner_src_port = f->tpl.inner_dst_port;
        remote_tpl.inner_dst_port = f->tpl.inner_src_port;
        return assemble_packet(remote_tpl, seq, ack, flags, len);
    }

    FlowTable table;
    BudgetTable budgets;
    CostModel costs;
    std::vector<std::unique_ptr<GuestContext>> guests;
    std::vector<GuestContext*> ptrs;
    std::vector<GuestStats> guest_stats;
    std::vector<Packet> wire;
    std::vector<Packet> slow;
    std::unique_ptr<FastPathCore> core;
    std::uint64_t next_uid = 1;
};

} // namespace

TEST_CASE("idle iteration costs only empty-poll overhead", "[fastpath]") {
    CoreFixture fx(1, 1000);
    const Cycles consumed = fx.core->run_iteration(0);
    CHECK(consumed == 3 * fx.costs.poll_empty_cycles);
    CHECK(fx.core->stats().cycles_unaccounted == consumed);
    CHECK(fx.core->stats().cycles_charged == 0);
    CHECK(fx.core->stats().cycles_total == consumed);
}

TEST_CASE("a full in-order RX batch deposits, acks, and charges", "[fastpath]") {
    CoreFixture fx(1, 1 << 20);
    auto f = fx.install_flow(0, 0, 10000);
    std::uint32_t seq = 1;
    for (int i = 0; i < 16; ++i) {
        fx.core->nic_rx_queue().push_back(fx.from_remote(f, seq, 1, kFlagAck, 64));
        seq += 64;
    }
    const SignedCycles before = fx.budgets.balance(0, 0);
    const Cycles consumed = fx.core->run_rx_batch(0);

    // cost-model oracle: sixteen RX tasks of a 64-byte payload
    const Cycles expected = 16 * fx.costs.task_cost(TaskKind::Rx, 64);
    CHECK(consumed == expected);
    CHECK(fx.budgets.balance(0, 0) == before - static_cast<SignedCycles>(expected));
    CHECK(fx.guest_stats[0].deposits == 16);
    CHECK(fx.core->stats().acks_emitted == 16);
    CHECK(fx.wire.size() == 16);
    for (const auto& p : fx.wire) {
        CHECK(p.payload_len == 0);
        CHECK(p.flags == kFlagAck);
    }
    CHECK(f->rx_next_expected == 1 + 16 * 64);
    // application has not read yet
    CHECK(f->rx_buffer.occupancy == 16 * 64);
}

TEST_CASE("unknown keys route to the slow path without charging guests", "[fastpath]") {
    CoreFixture fx(1, 1 << 20);
    auto f = fx.install_flow(0, 0, 10000);
    Packet stray = fx.from_remote(f, 1, 1, kFlagAck, 64);
    stray.gre_key = 9999; // different tunnel, same 4-tuple: distinct flow
    fx.core->nic_rx_queue().push_back(stray);
    const SignedCycles before = fx.budgets.balance(0, 0);
    const Cycles consumed = fx.core->run_rx_batch(0);
    CHECK(fx.slow.size() == 1);
    CHECK(fx.budgets.balance(0, 0) == before);
    CHECK(fx.core->stats().rx_misses == 1);
    CHECK(fx.core->stats().cycles_unaccounted == consumed);
}

TEST_CASE("control and legacy packets are punted", "[fastpath]") {
    CoreFixture fx(1, 1 << 20);
    auto f = fx.install_flow(0, 0, 10000);
    fx.core->nic_rx_queue().push_back(fx.from_remote(f, 1, 1, kFlagFin | kFlagAck, 0));
    Packet legacy = fx.from_remote(f, 1, 1, kFlagAck, 9);
    legacy.proto = WireProto::Other;
    fx.core->nic_rx_queue().push_back(legacy);
    fx.core->run_rx_batch(0);
    CHECK(fx.slow.size() == 2);
    CHECK(fx.core->stats().rx_control == 1);
    CHECK(fx.core->stats().rx_legacy == 1);
}

TEST_CASE("budget is evaluated per batch composition, deficit carried", "[fastpath]") {
    CoreFixture fx(1, 0);
    fx.budgets.replenish_entry(0, 0, 100); // tiny budget
    auto f = fx.install_flow(0, 0, 10000);
    std::uint32_t seq = 1;
    for (int i = 0; i < 16; ++i) {
        fx.core->nic_rx_queue().push_back(fx.from_remote(f, seq, 1, kFlagAck, 64));
        seq += 64;
    }
    fx.core->run_rx_batch(0);
    // all sixteen admitted against the positive balance, deficit accrued
    CHECK(fx.guest_stats[0].deposits == 16);
    CHECK(fx.budgets.balance(0, 0) == 100 - 16 * 219);

    // next batch: the guest is in deficit, every packet is dropped
    for (int i = 0; i < 4; ++i) {
        fx.core->nic_rx_queue().push_back(fx.from_remote(f, seq, 1, kFlagAck, 64));
        seq += 64;
    }
    const SignedCycles before = fx.budgets.balance(0, 0);
    const Cycles consumed = fx.core->run_rx_batch(1000);
    CHECK(fx.guest_stats[0].deposits == 16);
    CHECK(fx.guest_stats[0].rx_drops == 4);
    // dropped packets cost a quarter of the base task each
    CHECK(consumed == 4 * 50);
    CHECK(fx.budgets.balance(0, 0) == before - 200);
}

TEST_CASE("poll deposits bytes and schedules the flow", "[fastpath]") {
    CoreFixture fx(1, 1 << 20);
    auto f = fx.install_flow(0, 0, 10000);
    fx.guests[0]->tx_queues[0].push_back(SendRequest{0, 4096});
    const Cycles consumed = fx.core->run_poll_batch(0);
    CHECK(consumed == fx.costs.task_cost(TaskKind::Poll, 0));
    CHECK(f->pending_tx_bytes() == 4096);
    CHECK(f->in_tx_queue);
    CHECK(fx.guest_stats[0].poll_requests == 1);
}

TEST_CASE("requests for unknown flows are discarded and counted", "[fastpath]") {
    CoreFixture fx(1, 1 << 20);
    fx.guests[0]->tx_queues[0].push_back(SendRequest{57, 100});
    fx.core->run_poll_batch(0);
    CHECK(fx.guest_stats[0].malformed_requests == 1);
    CHECK(fx.guests[0]->tx_queues[0].empty());
}

TEST_CASE("tx emits one-shot packets and charges the batch", "[fastpath]") {
    CoreFixture fx(1, 1 << 20);
    auto f = fx.install_flow(0, 0, 10000, /*rate=*/1000.0);
    f->tx.deposit(3000);
    fx.core->sched().enqueue_flow(f, 0);
    const SignedCycles before = fx.budgets.balance(0, 0);
    Cycles consumed = 0;
    for (Cycles now = 0; fx.wire.size() < 3 && now < 100; now += 10) {
        consumed += fx.core->run_tx_batch(now);
    }
    // segmentation oracle: 3000 = 1460 + 1460 + 80, paced across iterations
    REQUIRE(fx.wire.size() == 3);
    CHECK(fx.wire[0].payload_len == 1460);
    CHECK(fx.wire[1].payload_len == 1460);
    CHECK(fx.wire[2].payload_len == 80);
    CHECK(fx.wire[0].seq == 1);
    CHECK(fx.wire[1].seq == 1461);
    CHECK(fx.wire[2].seq == 2921);
    CHECK(f->pending_tx_bytes() == 0);
    CHECK(f->tx.unacked() == 3000);
    const Cycles expected = 2 * fx.costs.task_cost(TaskKind::Tx, 1460) +
                            fx.costs.task_cost(TaskKind::Tx, 80);
    CHECK(consumed == expected);
    CHECK(fx.budgets.balance(0, 0) == before - static_cast<SignedCycles>(expected));
    // assembled straight from the template
    CHECK(fx.wire[0].gre_key == f->tpl.gre_key);
    CHECK(fx.wire[0].inner_src_port == f->tpl.inner_src_port);
    CHECK(fx.wire[0].wire_len == 90 + 1460);
}

TEST_CASE("a guest in deficit keeps its flows queued untouched", "[fastpath]") {
    CoreFixture fx(1, 0);
    fx.budgets.charge_direct(0, 0, 500);
    auto f = fx.install_flow(0, 0, 10000);
    f->tx.deposit(100);
    fx.core->sched().enqueue_flow(f, 0);
    const Cycles before_nst = f->next_send_time;
    fx.core->run_tx_batch(10);
    CHECK(fx.wire.empty());
    CHECK(f->in_tx_queue);
    CHECK(f->next_send_time == before_nst);
    CHECK(f->pending_tx_bytes() == 100);
}

TEST_CASE("iteration cycles equal the sum of the three batches", "[fastpath]") {
    CoreFixture fx(1, 1 << 20);
    auto f = fx.install_flow(0, 0, 10000);
    fx.core->nic_rx_queue().push_back(fx.from_remote(f, 1, 1, kFlagAck, 64));
    fx.guests[0]->tx_queues[0].push_back(SendRequest{0, 64});
    const Cycles consumed = fx.core->run_iteration(0);
    // RX(64) + POLL + TX(64); the polled request is sent in the same pass
    const Cycles expected = fx.costs.task_cost(TaskKind::Rx, 64) +
                            fx.costs.task_cost(TaskKind::Poll, 0) +
                            fx.costs.task_cost(TaskKind::Tx, 64);
    CHECK(consumed == expected);
    CHECK(fx.core->stats().cycles_total ==
          fx.core->stats().cycles_charged + fx.core->stats().cycles_unaccounted);
}

TEST_CASE("acks advance the send stream and free the pipe", "[fastpath]") {
    CoreFixture fx(1, 1 << 20);
    auto f = fx.install_flow(0, 0, 10000, 1000.0);
    f->tx.deposit(128);
    fx.core->sched().enqueue_flow(f, 0);
    fx.core->run_tx_batch(0);
    REQUIRE(f->tx.unacked() == 128);
    REQUIRE(f->rto_armed);
    fx.core->nic_rx_queue().push_back(fx.from_remote(f, 1, 129, kFlagAck, 0));
    fx.core->run_rx_batch(10);
    CHECK(f->tx.unacked() == 0);
    CHECK_FALSE(f->rto_armed);
    // pure acks generate no response
    CHECK(fx.core->stats().acks_emitted == 0);
}

TEST_CASE("per-core ledger balances under mixed random traffic", "[fastpath]") {
    CoreFixture fx(2, 1000);
    auto f0 = fx.install_flow(0, 0, 10000);
    auto f1 = fx.install_flow(1, 0, 10001);
    std::mt19937_64 rng(99);
    std::uint32_t seq0 = 1;
    std::uint32_t seq1 = 1;
    for (int iter = 0; iter < 300; ++iter) {
        const int n = static_cast<int>(rng() % 20);
        for (int i = 0; i < n; ++i) {
            if (rng() & 1) {
                fx.core->nic_rx_queue().push_back(fx.from_remote(f0, seq0, 1, kFlagAck, 64));
                seq0 += 64;
            } else {
                fx.core->nic_rx_queue().push_back(fx.from_remote(f1, seq1, 1, kFlagAck, 256));
                seq1 += 256;
            }
        }
        if (rng() % 3 == 0) {
            fx.guests[rng() % 2]->tx_queues[0].push_back(
                SendRequest{0, static_cast<std::uint32_t>(1 + rng() % 2000)});
        }
        if (rng() % 7 == 0) {
            fx.budgets.replenish_entry(0, rng() % 2, rng() % 5000);
        }
        fx.core->run_iteration(iter * 1000);
        f0->rx_buffer.occupancy = 0; // application reads everything
        f1->rx_buffer.occupancy = 0;
        const auto& s = fx.core->stats();
        REQUIRE(s.cycles_total == s.cycles_charged + s.cycles_unaccounted);
    }
}
