#pragma once

#include "stacksim/flow.hpp"
#include "stacksim/types.hpp"

#include <cstdint>
#include <deque>
#include <vector>

namespace stacksim {

// A transmission request posted by the guest application: send `bytes` on
// connection slot `conn_index`.
struct SendRequest {
    std::uint32_t conn_index = 0;
    std::uint32_t bytes = 0;
};

// Payload-arrival notification delivered to the guest.
struct RxNotification {
    std::uint32_t conn_index = 0;
    std::uint32_t bytes = 0;
};

// Callbacks from the stack into the guest application.
struct AppHooks {
    virtual ~AppHooks() = default;
    virtual void on_connected(std::uint32_t conn_index, const FlowPtr& flow, Cycles now) = 0;
    virtual void on_connect_failed(std::uint32_t conn_index, Cycles now) = 0;
    virtual void on_closed(std::uint32_t conn_index, Cycles now) = 0;
    virtual void on_data(std::uint32_t conn_index, std::uint32_t bytes, Cycles now) = 0;
};

// One tenant attached to the shared stack: its weight, transmit queues,
// established flows, and the receive notification queue.
struct GuestContext {
    GuestId id = 0;
    double weight = 1.0;
    std::vector<std::deque<SendRequest>> tx_queues;
    std::deque<RxNotification> notify_queue;
    std::vector<FlowPtr> conn_flows; // indexed by conn slot; null until established
    AppHooks* app = nullptr;

    explicit GuestContext(GuestId gid = 0, double w = 1.0, std::size_t num_tx_queues = 1)
        : id(gid), weight(w), tx_queues(num_tx_queues) {}

    std::size_t total_tx_backlog() const {
        std::size_t n = 0;
        for (const auto& q : tx_queues) {
            n += q.size();
        }
        return n;
    }

    FlowPtr flow_for(std::uint32_t conn_index) const {
        if (conn_index >= conn_flows.size()) {
            return nullptr;
        }
        return conn_flows[conn_index];
    }
};

} // namespace stacksim
