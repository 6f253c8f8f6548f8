#pragma once

#include "stacksim/accounting.hpp"
#include "stacksim/flow.hpp"
#include "stacksim/flow_table.hpp"
#include "stacksim/guest.hpp"
#include "stacksim/types.hpp"

#include <cmath>
#include <cstdint>
#include <queue>
#include <unordered_map>
#include <vector>

namespace stacksim {

struct PollPlanItem {
    GuestId guest = 0;
    std::uint32_t queue = 0;
    std::uint32_t max_items = 0;
    SignedCycles balance_at_sched = 0;
};

struct TxPlanItem {
    FlowPtr flow;
    std::uint32_t segment_len = 0;
    SignedCycles balance_at_sched = 0;
};

// Two-level hierarchical scheduling state for one fast-path core: a
// round-robin cursor over guests for POLL, an independent one for TX, and a
// per-guest priority queue ordering flows by the earliest time each should
// send next. Strictly core-local.
class CoreSchedState {
public:
    CoreSchedState(CoreId core, std::size_t num_guests, std::uint32_t batch_size,
                   std::uint32_t mss)
        : core_(core), batch_size_(batch_size), mss_(mss), flow_queues_(num_guests),
          poll_cursor_(num_guests ? core % num_guests : 0),
          tx_cursor_(num_guests ? core % num_guests : 0) {}

    std::uint32_t batch_size() const { return batch_size_; }

    // Registers a flow as ready to transmit. A flow re-entering from idle is
    // clamped to `now` so pacing cannot accumulate an unbounded send burst;
    // a flow already queued keeps its pacing timestamp.
    void enqueue_flow(const FlowPtr& flow, Cycles now) {
        if (flow->in_tx_queue) {
            return;
        }
        if (flow->next_send_time < now) {
            flow->next_send_time = now;
        }
        flow->in_tx_queue = true;
        flow_queues_[flow->guest].push(Entry{flow->next_send_time, flow->flow_uid, flow});
    }

    // Retransmission path: make the flow eligible immediately, overriding
    // its pacing timestamp. A stale queue entry is skipped at pop.
    void requeue_flow_immediate(const FlowPtr& flow, Cycles now) {
        if (flow->in_tx_queue && flow->next_send_time <= now) {
            return;
        }
        flow->next_send_time = now;
        flow->in_tx_queue = true;
        flow_queues_[flow->guest].push(Entry{now, flow->flow_uid, flow});
    }

    // Batched round-robin POLL plan. Starting at the cursor, each budgeted
    // guest's transmit queues are drained until the batch is full, the
    // guest's queues are empty, or its budget is exhausted mid-poll
    // (estimated at one base task cost per request). The cursor advances
    // past the guest that filled the batch.
    std::vector<PollPlanItem> schedule_poll(const std::vector<GuestContext*>& guests,
                                            const BudgetTable& budgets, const CostModel& costs,
                                            bool gating_enabled) {
        std::vector<PollPlanItem> plan;
        const std::size_t n = guests.size();
        if (n == 0) {
            return plan;
        }
        std::uint32_t remaining = batch_size_;
        const Cycles item_cost = costs.task_cost(TaskKind::Poll, 0);
        for (std::size_t k = 0; k < n && remaining > 0; ++k) {
            const std::size_t gi = (poll_cursor_ + k) % n;
            const GuestContext& guest = *guests[gi];
            const SignedCycles balance = budgets.balance(core_, guest.id);
            if (gating_enabled && balance <= 0) {
                continue;
            }
            // Budget allows starting a task while positive, so the last
            // permitted item is the one that crosses zero.
            std::uint64_t budget_items = remaining;
            if (gating_enabled) {
                budget_items = (static_cast<std::uint64_t>(balance) + item_cost - 1) / item_cost;
            }
            for (std::uint32_t q = 0; q < guest.tx_queues.size() && remaining > 0 && budget_items > 0;
                 ++q) {
                const std::uint64_t backlog = guest.tx_queues[q].size();
                if (backlog == 0) {
                    continue;
                }
                const std::uint32_t take = static_cast<std::uint32_t>(
                    std::min<std::uint64_t>({backlog, remaining, budget_items}));
                plan.push_back(PollPlanItem{guest.id, q, take, balance});
                remaining -= take;
                budget_items -= take;
            }
            if (remaining == 0) {
                poll_cursor_ = (gi + 1) % n;
                return plan;
            }
        }
        return plan;
    }

    // TX plan: the outer loop round-robins over guests, skipping those
    // without budget; the inner loop pops the guest's flow priority queue
    // while flows are eligible to send (next_send_time <= now) and batch
    // capacity remains. Each pop emits one segment of min(pending, MSS) and
    // re-inserts the flow at next_send_time += segment_len / rate.
    std::vector<TxPlanItem> schedule_tx(const std::vector<GuestContext*>& guests,
                                        const BudgetTable& budgets, Cycles now,
                                        bool gating_enabled) {
        std::vector<TxPlanItem> plan;
        const std::size_t n = guests.size();
        if (n == 0) {
            return plan;
        }
        std::uint32_t remaining = batch_size_;
        std::unordered_map<const ConsolidatedFlowState*, std::uint32_t> planned_bytes;
        for (std::size_t k = 0; k < n && remaining > 0; ++k) {
            const std::size_t gi = (tx_cursor_ + k) % n;
            const GuestContext& guest = *guests[gi];
            const SignedCycles balance = budgets.balance(core_, guest.id);
            if (gating_enabled && balance <= 0) {
                continue;
            }
            auto& pq = flow_queues_[guest.id];
            while (!pq.empty() && remaining > 0) {
                const Entry top = pq.top();
                if (top.flow->closed || !top.flow->in_tx_queue ||
                    top.time != top.flow->next_send_time) {
                    pq.pop(); // dead or stale entry
                    continue;
                }
                if (top.time > now) {
                    break; // pacing gate: earliest flow not yet eligible
                }
                pq.pop();
                FlowPtr flow = top.flow;
                std::uint32_t& already = planned_bytes[flow.get()];
                const std::uint32_t available = flow->pending_tx_bytes() - already;
                if (available == 0) {
                    flow->in_tx_queue = false;
                    continue;
                }
                const std::uint32_t seg = std::min(available, mss_);
                plan.push_back(TxPlanItem{flow, seg, balance});
                already += seg;
                --remaining;
                const double rate = flow->rate;
                const Cycles delta =
                    rate > 0.0 ? static_cast<Cycles>(std::ceil(static_cast<double>(seg) / rate))
                               : 1;
                flow->next_send_time += delta;
                if (available - seg > 0) {
                    pq.push(Entry{flow->next_send_time, flow->flow_uid, flow});
                } else {
                    flow->in_tx_queue = false;
                }
            }
            if (remaining == 0) {
                tx_cursor_ = (gi + 1) % n;
                return plan;
            }
        }
        return plan;
    }

    bool guest_has_ready_flow(GuestId g, Cycles now) {
        auto& pq = flow_queues_[g];
        while (!pq.empty()) {
            const Entry& top = pq.top();
            if (top.flow->closed || !top.flow->in_tx_queue || top.time != top.flow->next_send_time) {
                pq.pop();
                continue;
            }
            return top.time <= now;
        }
        return false;
    }

private:
    struct Entry {
        Cycles time;
        std::uint64_t uid;
        FlowPtr flow;

        bool operator>(const Entry& o) const {
            if (time != o.time) {
                return time > o.time;
            }
            return uid > o.uid;
        }
    };

    using FlowQueue = std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>>;

    CoreId core_;
    std::uint32_t batch_size_;
    std::uint32_t mss_;
    std::vector<FlowQueue> flow_queues_;
    std::size_t poll_cursor_ = 0;
    std::size_t tx_cursor_ = 0;
};

// RX admission gate: a packet for a guest out of budget on this core is
// dropped before any transport processing.
inline bool rx_admit(const BudgetTable& budgets, CoreId core, GuestId guest,
                     bool gating_enabled) {
    return !gating_enabled || budgets.has_budget(core, guest);
}

} // namespace stacksim
