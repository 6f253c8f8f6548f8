#pragma once

#include "stacksim/config.hpp"
#include "stacksim/guest.hpp"
#include "stacksim/slowpath.hpp"
#include "stacksim/types.hpp"

#include <functional>
#include <vector>

namespace stacksim {

// Synthetic RPC echo client for one guest: closed-loop request/response per
// connection, optionally gated by a burst duty cycle, optionally
// connection-per-batch-of-messages (short-lived mode). The guest application
// is not CPU-budgeted; it reacts instantly to notifications.
class GuestApp : public AppHooks {
public:
    // Builds the connect spec for (conn slot, attempt number); the attempt
    // rotates local ports so reconnects never collide with lingering state.
    using ConnectFactory =
        std::function<SlowPath::ConnectSpec(std::uint32_t conn, std::uint32_t attempt)>;

    struct Totals {
        std::uint64_t requests_issued = 0;
        std::uint64_t responses_completed = 0;
        std::uint64_t responses_in_window = 0;
        std::uint64_t connects_started = 0;
        std::uint64_t connects_completed = 0;
        std::uint64_t connect_failures = 0;
        std::uint64_t closes = 0;
    };

    GuestApp(GuestId id, GuestContext& ctx, SlowPath& sp, WorkloadConfig wl, Cycles warmup,
             ConnectFactory factory)
        : id_(id), ctx_(ctx), slowpath_(sp), wl_(std::move(wl)), warmup_(warmup),
          factory_(std::move(factory)) {
        ctx_.app = this;
    }

    void start(Cycles now) {
        if (wl_.type == "idle") {
            return;
        }
        conns_.resize(wl_.connections);
        if (ctx_.conn_flows.size() < wl_.connections) {
            ctx_.conn_flows.resize(wl_.connections);
        }
        for (std::uint32_t c = 0; c < wl_.connections; ++c) {
            connect(c, now);
        }
    }

    bool burst_mode() const { return wl_.mode == "burst"; }
    Cycles burst_on_cycles(double cpu_ghz) const {
        return cycles_from_us(wl_.burst_on_ms * 1000.0, cpu_ghz);
    }
    Cycles burst_off_cycles(double cpu_ghz) const {
        return cycles_from_us(wl_.burst_off_ms * 1000.0, cpu_ghz);
    }

    // Burst duty-cycle edge; `on` opens the sending gate.
    void on_phase(bool on, Cycles now) {
        phase_on_ = on;
        if (!on) {
            return;
        }
        for (std::uint32_t c = 0; c < conns_.size(); ++c) {
            if (conns_[c].state == ConnState::Held) {
                issue(c, now);
            }
        }
    }

    // --- AppHooks ---

    void on_connected(std::uint32_t conn, const FlowPtr& flow, Cycles now) override {
        if (conn >= conns_.size()) {
            return; // inbound connection outside this workload's slots
        }
        conns_[conn].flow = flow;
        conns_[conn].state = ConnState::Idle;
        ++totals_.connects_completed;
        if (sending_allowed()) {
            issue(conn, now);
        } else {
            conns_[conn].state = ConnState::Held;
        }
    }

    void on_connect_failed(std::uint32_t conn, Cycles now) override {
        (void)now;
        if (conn >= conns_.size()) {
            return;
        }
        conns_[conn].state = ConnState::Failed;
        ++totals_.connect_failures;
    }

    void on_closed(std::uint32_t conn, Cycles now) override {
        if (conn >= conns_.size()) {
            return;
        }
        conns_[conn].state = ConnState::Closed;
        conns_[conn].flow = nullptr;
        ++totals_.closes;
        if (wl_.type == "short_lived") {
            conns_[conn].messages_done = 0;
            connect(conn, now);
        }
    }

    void on_data(std::uint32_t conn, std::uint32_t bytes, Cycles now) override {
        if (conn >= conns_.size()) {
            return;
        }
        Conn& c = conns_[conn];
        if (c.flow) {
            c.flow->rx_buffer.consume(bytes); // application reads immediately
        }
        if (c.state != ConnState::Waiting) {
            return;
        }
        c.received += bytes;
        if (c.received < wl_.message_size) {
            return;
        }
        c.received -= wl_.message_size;
        ++totals_.responses_completed;
        ++c.messages_done;
        if (now >= warmup_) {
            ++totals_.responses_in_window;
            latencies_.push_back(now - c.issued_at);
        }
        if (wl_.type == "short_lived" && c.messages_done >= wl_.messages_per_connection) {
            c.state = ConnState::Closing;
            slowpath_.enqueue_close(id_, conn, now);
            return;
        }
        if (sending_allowed()) {
            issue(conn, now);
        } else {
            c.state = ConnState::Held;
        }
    }

    const Totals& totals() const { return totals_; }
    std::vector<std::uint64_t>& latencies() { return latencies_; }

    // Optional observation hook: records the timestamp of every request.
    void set_issue_log(std::vector<Cycles>* log) { issue_log_ = log; }

    std::uint64_t in_flight() const {
        std::uint64_t n = 0;
        for (const auto& c : conns_) {
            n += (c.state == ConnState::Waiting) ? 1 : 0;
        }
        return n;
    }

private:
    enum class ConnState { Disconnected, Connecting, Idle, Waiting, Held, Closing, Closed, Failed };

    struct Conn {
        ConnState state = ConnState::Disconnected;
        FlowPtr flow;
        Cycles issued_at = 0;
        std::uint32_t received = 0;
        std::uint32_t messages_done = 0;
        std::uint32_t attempts = 0;
    };

    bool sending_allowed() const { return !burst_mode() || phase_on_; }

    void connect(std::uint32_t conn, Cycles now) {
        conns_[conn].state = ConnState::Connecting;
        ++totals_.connects_started;
        slowpath_.enqueue_connect(factory_(conn, conns_[conn].attempts++), now);
    }

    void issue(std::uint32_t conn, Cycles now) {
        Conn& c = conns_[conn];
        c.state = ConnState::Waiting;
        c.issued_at = now;
        ++totals_.requests_issued;
        if (issue_log_) {
            issue_log_->push_back(now);
        }
        auto& queue = ctx_.tx_queues[conn % ctx_.tx_queues.size()];
        queue.push_back(SendRequest{conn, wl_.message_size});
    }

    GuestId id_;
    GuestContext& ctx_;
    SlowPath& slowpath_;
    WorkloadConfig wl_;
    Cycles warmup_;
    ConnectFactory factory_;
    std::vector<Conn> conns_;
    std::vector<std::uint64_t> latencies_;
    std::vector<Cycles>* issue_log_ = nullptr;
    Totals totals_;
    bool phase_on_ = true;
};

} // namespace stacksim
