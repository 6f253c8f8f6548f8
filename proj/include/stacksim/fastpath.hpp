#pragma once

#include "stacksim/accounting.hpp"
#include "stacksim/audit.hpp"
#include "stacksim/flow_table.hpp"
#include "stacksim/guest.hpp"
#include "stacksim/packet.hpp"
#include "stacksim/scheduler.hpp"
#include "stacksim/types.hpp"

#include <deque>
#include <functional>
#include <vector>

namespace stacksim {

// Per-guest counters shared by all cores (single-threaded driver).
struct GuestStats {
    std::uint64_t rx_packets = 0;
    std::uint64_t rx_drops = 0;
    std::uint64_t tx_packets = 0;
    std::uint64_t poll_requests = 0;
    std::uint64_t deposits = 0;
    std::uint64_t deposited_bytes = 0;
    std::uint64_t malformed_requests = 0;
};

struct CoreStats {
    Cycles cycles_total = 0;
    Cycles cycles_charged = 0;
    Cycles cycles_unaccounted = 0;
    Cycles cycles_idle_polls = 0; // subset of unaccounted: empty-batch overhead
    std::uint64_t iterations = 0;
    std::uint64_t rx_packets = 0;
    std::uint64_t rx_misses = 0;
    std::uint64_t rx_control = 0;
    std::uint64_t rx_legacy = 0;
    std::uint64_t rx_drops = 0;
    std::uint64_t acks_emitted = 0;
    std::uint64_t tx_packets = 0;
    std::uint64_t poll_requests = 0;
};

// One fast-path core: each iteration runs RX, POLL, and TX as batched tasks,
// measures their cost through the cost model, and charges the per-guest
// budgets. Packets for unknown or control cases route to the slow path.
class FastPathCore {
public:
    using PacketSink = std::function<void(const Packet&, Cycles)>;

    FastPathCore(CoreId id, std::size_t num_guests, std::uint32_t batch_size, std::uint32_t mss,
                 FlowTable& table, BudgetTable& budgets, const CostModel& costs,
                 std::vector<GuestContext*> guests, std::vector<GuestStats>& guest_stats,
                 PacketSink nic_tx, PacketSink to_slowpath)
        : core_id_(id), sched_(id, num_guests, batch_size, mss), table_(table), budgets_(budgets),
          costs_(costs), guests_(std::move(guests)), guest_stats_(guest_stats),
          nic_tx_(std::move(nic_tx)), to_slowpath_(std::move(to_slowpath)) {}

    CoreId id() const { return core_id_; }
    CoreSchedState& sched() { return sched_; }
    CoreStats& stats() { return stats_; }
    const CoreStats& stats() const { return stats_; }
    std::deque<Packet>& nic_rx_queue() { return nic_rx_; }

    void set_audit(ScheduleAudit* audit) { audit_ = audit; }
    void set_budget_gating(bool enabled) { gating_ = enabled; }
    void set_drop_cost_fraction(double f) {
        drop_cost_ = static_cast<Cycles>(f * static_cast<double>(costs_.base_cycles_per_task) + 0.5);
    }

    Cycles run_iteration(Cycles now) {
        const Cycles rx = run_rx_batch(now);
        const Cycles poll = run_poll_batch(now);
        const Cycles tx = run_tx_batch(now);
        const Cycles total = rx + poll + tx;
        stats_.cycles_total += total;
        ++stats_.iterations;
#ifdef STACKSIM_ITER_TRACE
        iter_log_.emplace_back(now, total);
#endif
        return total;
    }

#ifdef STACKSIM_ITER_TRACE
    const std::vector<std::pair<Cycles, Cycles>>& iter_log() const { return iter_log_; }
#endif

    Cycles run_rx_batch(Cycles now) {
        if (nic_rx_.empty()) {
            return idle_poll();
        }
        Cycles consumed = 0;
        Cycles measured = 0;
        std::vector<std::uint64_t> counts(guests_.size(), 0);
        const std::uint32_t batch = sched_.batch_size();
        for (std::uint32_t i = 0; i < batch && !nic_rx_.empty(); ++i) {
            Packet pkt = nic_rx_.front();
            nic_rx_.pop_front();
            const auto parsed = parse_packet(pkt);
            if (!parsed) {
                // Not TCP-over-GRE: legacy slow-path handling.
                consumed += charge_unaccounted(costs_.task_cost(TaskKind::Rx, 0));
                ++stats_.rx_legacy;
                to_slowpath_(pkt, now);
                continue;
            }
            if ((pkt.flags & (kFlagSyn | kFlagFin | kFlagRst)) != 0) {
                consumed += charge_unaccounted(costs_.task_cost(TaskKind::Rx, 0));
                ++stats_.rx_control;
                to_slowpath_(pkt, now);
                continue;
            }
            FlowPtr flow = table_.lookup(parsed->key);
            if (!flow) {
                consumed += charge_unaccounted(costs_.task_cost(TaskKind::Rx, 0));
                ++stats_.rx_misses;
                to_slowpath_(pkt, now);
                continue;
            }
            const GuestId g = flow->guest;
            const SignedCycles balance = budgets_.balance(core_id_, g);
            const bool admitted = rx_admit(budgets_, core_id_, g, gating_);
            if (audit_) {
                audit_->rx_packet(core_id_, g, balance, !admitted, now);
            }
            if (!admitted) {
                budgets_.charge_direct(core_id_, g, drop_cost_);
                stats_.cycles_charged += drop_cost_;
                consumed += drop_cost_;
                ++stats_.rx_drops;
                ++guest_stats_[g].rx_drops;
                continue;
            }
            const Cycles cost = costs_.task_cost(TaskKind::Rx, parsed->payload_len);
            ++counts[g];
            measured += cost;
            consumed += cost;
            ++stats_.rx_packets;
            ++guest_stats_[g].rx_packets;
            process_admitted(flow, pkt, *parsed, now);
        }
        if (measured > 0) {
            budgets_.charge_batch(core_id_, counts, measured);
            stats_.cycles_charged += measured;
        }
        deliver_notifications(now);
        return consumed;
    }

    Cycles run_poll_batch(Cycles now) {
        const auto plan = sched_.schedule_poll(guests_, budgets_, costs_, gating_);
        if (plan.empty()) {
            return idle_poll();
        }
        Cycles consumed = 0;
        Cycles measured = 0;
        std::vector<std::uint64_t> counts(guests_.size(), 0);
        for (const auto& item : plan) {
            GuestContext& guest = *guests_[item.guest];
            auto& queue = guest.tx_queues[item.queue];
            for (std::uint32_t i = 0; i < item.max_items && !queue.empty(); ++i) {
                const SendRequest req = queue.front();
                FlowPtr flow = guest.flow_for(req.conn_index);
                if (!flow || flow->closed) {
                    // Unknown flow id: discard the request.
                    queue.pop_front();
                    ++guest_stats_[item.guest].malformed_requests;
                    account_poll_item(item, counts, measured, consumed, now);
                    continue;
                }
                if (!flow->tx.can_deposit(req.bytes)) {
                    break; // buffer full: leave the request queued
                }
                queue.pop_front();
                flow->tx.deposit(req.bytes);
                sched_.enqueue_flow(flow, now);
                ++guest_stats_[item.guest].poll_requests;
                ++stats_.poll_requests;
                account_poll_item(item, counts, measured, consumed, now);
            }
        }
        if (measured > 0) {
            budgets_.charge_batch(core_id_, counts, measured);
            stats_.cycles_charged += measured;
        } else {
            return idle_poll() + consumed;
        }
        return consumed;
    }

    Cycles run_tx_batch(Cycles now) {
        const auto plan = sched_.schedule_tx(guests_, budgets_, now, gating_);
        if (plan.empty()) {
            return idle_poll();
        }
        Cycles consumed = 0;
        Cycles measured = 0;
        std::vector<std::uint64_t> counts(guests_.size(), 0);
        for (const auto& item : plan) {
            ConsolidatedFlowState& flow = *item.flow;
            const Packet pkt = assemble_packet(flow.tpl, flow.tx.next, flow.rx_next_expected,
                                               kFlagAck, item.segment_len);
            const bool pipe_was_empty = flow.tx.unacked() == 0;
            flow.tx.mark_sent(item.segment_len);
            if (pipe_was_empty) {
                flow.unacked_since = now;
                flow.rto_armed = true;
            }
            nic_tx_(pkt, now);
            const Cycles cost = costs_.task_cost(TaskKind::Tx, item.segment_len);
            ++counts[flow.guest];
            measured += cost;
            consumed += cost;
            ++stats_.tx_packets;
            ++guest_stats_[flow.guest].tx_packets;
            if (audit_) {
                audit_->work_item(TaskKind::Tx, core_id_, flow.guest, item.balance_at_sched, now);
            }
        }
        budgets_.charge_batch(core_id_, counts, measured);
        stats_.cycles_charged += measured;
        return consumed;
    }

private:
    Cycles idle_poll() {
        const Cycles c = costs_.poll_empty_cycles;
        stats_.cycles_unaccounted += c;
        stats_.cycles_idle_polls += c;
        return c;
    }

    Cycles charge_unaccounted(Cycles c) {
        stats_.cycles_unaccounted += c;
        return c;
    }

    void account_poll_item(const PollPlanItem& item, std::vector<std::uint64_t>& counts,
                           Cycles& measured, Cycles& consumed, Cycles now) {
        const Cycles cost = costs_.task_cost(TaskKind::Poll, 0);
        ++counts[item.guest];
        measured += cost;
        consumed += cost;
        if (audit_) {
            audit_->work_item(TaskKind::Poll, core_id_, item.guest, item.balance_at_sched, now);
        }
    }

    void process_admitted(const FlowPtr& flow_ptr, const Packet& pkt, const ParsedPacket& parsed,
                          Cycles now) {
        ConsolidatedFlowState& flow = *flow_ptr;
        if ((parsed.flags & kFlagAck) != 0) {
            const std::uint32_t freed = flow.tx.on_ack(parsed.ack);
            if (freed > 0) {
                if (flow.tx.unacked() == 0) {
                    flow.rto_armed = false;
                } else {
                    flow.unacked_since = now;
                }
                if (flow.pending_tx_bytes() > 0) {
                    sched_.enqueue_flow(flow_ptr, now);
                }
            }
        }
        if (parsed.payload_len == 0) {
            return;
        }
        const DepositResult r = validate_and_deposit(flow, parsed.seq, parsed.payload_len);
        if (r == DepositResult::Accepted) {
            GuestContext& guest = *guests_[flow.guest];
            guest.notify_queue.push_back(RxNotification{flow.conn_index, parsed.payload_len});
            ++guest_stats_[flow.guest].deposits;
            guest_stats_[flow.guest].deposited_bytes += parsed.payload_len;
        }
        // Every data packet is answered, including duplicates and
        // out-of-window arrivals (the latter re-advertise the expected
        // sequence). Pure acknowledgements bypass pacing entirely.
        const Packet ack = make_ack(pkt, flow.tx.next, flow.rx_next_expected);
        nic_tx_(ack, now);
        ++stats_.acks_emitted;
    }

    void deliver_notifications(Cycles now) {
        for (GuestContext* guest : guests_) {
            while (!guest->notify_queue.empty()) {
                const RxNotification n = guest->notify_queue.front();
                guest->notify_queue.pop_front();
                if (guest->app) {
                    guest->app->on_data(n.conn_index, n.bytes, now);
                }
            }
        }
    }

    CoreId core_id_;
    CoreSchedState sched_;
    FlowTable& table_;
    BudgetTable& budgets_;
    const CostModel& costs_;
    std::vector<GuestContext*> guests_;
    std::vector<GuestStats>& guest_stats_;
    PacketSink nic_tx_;
    PacketSink to_slowpath_;
    std::deque<Packet> nic_rx_;
    ScheduleAudit* audit_ = nullptr;
    bool gating_ = true;
    Cycles drop_cost_ = 50;
    CoreStats stats_;
#ifdef STACKSIM_ITER_TRACE
    std::vector<std::pair<Cycles, Cycles>> iter_log_;
#endif
};

} // namespace stacksim
