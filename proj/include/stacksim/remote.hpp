#pragma once

#include "stacksim/flow.hpp"
#include "stacksim/packet.hpp"
#include "stacksim/types.hpp"

#include <algorithm>
#include <functional>
#include <unordered_map>
#include <vector>

namespace stacksim {

// Idealized far-end host: accepts any connection and echoes every in-order
// payload byte back to the sender. It is not CPU-budgeted (it stands in for
// the load-generating peer machine), but it does keep minimal reliability
// state so drops at the stack's RX gate are eventually retransmitted.
class RemoteHost {
public:
    struct Config {
        Cycles processing_delay = 2100; // per-packet turnaround, ~1 us at 2.1 GHz
        Cycles rto = 420000;            // go-back-N retransmit timeout, 200 us
        std::uint32_t mss = 1460;
    };

    struct Stats {
        std::uint64_t packets_in = 0;
        std::uint64_t data_in = 0;
        std::uint64_t echoed_bytes = 0;
        std::uint64_t dup_acks = 0;
        std::uint64_t rewinds = 0;
        std::uint64_t conns_accepted = 0;
        std::uint64_t conns_closed = 0;
    };

    // Sink toward the stack; the simulation wires this to the link.
    using PacketSink = std::function<void(const Packet&, Cycles)>;

    RemoteHost(Config cfg, PacketSink out) : cfg_(cfg), out_(std::move(out)) {}

    void on_packet(const Packet& pkt, Cycles now) {
        ++stats_.packets_in;
        const auto parsed = parse_packet(pkt);
        if (!parsed) {
            return;
        }
        const Cycles reply_at = now + cfg_.processing_delay;
        auto it = flows_.find(parsed->key);
        if ((parsed->flags & kFlagSyn) != 0 && (parsed->flags & kFlagAck) == 0) {
            if (it == flows_.end()) {
                Flow flow;
                flow.reply_tpl = template_from_swapped(pkt);
                flow.rx_next = parsed->seq + 1; // SYN occupies one sequence unit
                flow.tx.capacity = 1u << 20;
                flow.state = State::SynReceived;
                flow.order = next_order_++;
                it = flows_.emplace(parsed->key, flow).first;
                ++stats_.conns_accepted;
            }
            // SYN-ACK consumes one unit of our sequence space.
            Packet syn_ack = assemble_packet(it->second.reply_tpl, 0, it->second.rx_next,
                                             kFlagSyn | kFlagAck, 0);
            out_(syn_ack, reply_at);
            return;
        }
        if (it == flows_.end()) {
            return; // stray segment for an unknown connection
        }
        Flow& flow = it->second;
        if ((parsed->flags & kFlagRst) != 0) {
            flows_.erase(it);
            return;
        }
        if ((parsed->flags & kFlagAck) != 0) {
            if (flow.state == State::SynReceived && parsed->ack >= 1) {
                flow.state = State::Established;
                // Data starts after the SYN-ACK's sequence unit.
                flow.tx.acked = flow.tx.next = flow.tx.stream_end = flow.tx.high_water = 1;
            }
            const std::uint32_t freed = flow.tx.on_ack(parsed->ack);
            if (freed > 0) {
                flow.unacked_since = now;
            }
            if (flow.state == State::FinWait && flow.tx.unacked() == 0) {
                flows_.erase(it);
                ++stats_.conns_closed;
                return;
            }
        }
        if ((parsed->flags & kFlagFin) != 0) {
            // Symmetric teardown: acknowledge the FIN and send our own.
            flow.state = State::FinWait;
            flow.unacked_since = now;
            Packet fin_ack =
                assemble_packet(flow.reply_tpl, flow.tx.next, parsed->seq + 1, kFlagFin | kFlagAck, 0);
            flow.fin_seq = flow.tx.next;
            out_(fin_ack, reply_at);
            return;
        }
        if (parsed->payload_len == 0) {
            return;
        }
        ++stats_.data_in;
        if (parsed->seq == flow.rx_next) {
            flow.rx_next += parsed->payload_len;
            flow.tx.deposit(parsed->payload_len);
            send_pending(flow, reply_at);
        } else {
            // Out-of-order: re-advertise the expected sequence.
            Packet dup = assemble_packet(flow.reply_tpl, flow.tx.next, flow.rx_next, kFlagAck, 0);
            out_(dup, reply_at);
            ++stats_.dup_acks;
        }
    }

    // Periodic scan: rewind and retransmit flows whose oldest unacked echo
    // byte is older than the timeout.
    void rto_scan(Cycles now) {
        std::vector<FlowKey> expired;
        for (auto& [key, flow] : scan_order()) {
            Flow& f = *flow;
            if (f.state == State::FinWait) {
                // Lost final ack: the connection is already dead on the
                // other side, collect it after a grace period.
                if (now - f.unacked_since >= 4 * cfg_.rto) {
                    expired.push_back(key);
                    ++stats_.conns_closed;
                }
                continue;
            }
            if (f.state != State::Established || f.tx.unacked() == 0) {
                continue;
            }
            if (now - f.unacked_since < cfg_.rto) {
                continue;
            }
            f.tx.rewind();
            f.unacked_since = now;
            ++stats_.rewinds;
            send_pending(f, now + cfg_.processing_delay);
        }
        for (const auto& key : expired) {
            flows_.erase(key);
        }
    }

    const Stats& stats() const { return stats_; }
    std::size_t open_flows() const { return flows_.size(); }

private:
    enum class State { SynReceived, Established, FinWait };

    struct Flow {
        HeaderTemplate reply_tpl;
        SendStream tx;
        std::uint32_t rx_next = 0;
        std::uint32_t fin_seq = 0;
        Cycles unacked_since = 0;
        State state = State::SynReceived;
        std::uint64_t order = 0;
    };

    void send_pending(Flow& flow, Cycles at) {
        const bool pipe_was_empty = flow.tx.unacked() == 0;
        while (flow.tx.pending() > 0) {
            const std::uint32_t seg = std::min(flow.tx.pending(), cfg_.mss);
            Packet data = assemble_packet(flow.reply_tpl, flow.tx.next, flow.rx_next, kFlagAck, seg);
            flow.tx.mark_sent(seg);
            out_(data, at);
            stats_.echoed_bytes += seg;
        }
        if (pipe_was_empty && flow.tx.unacked() > 0) {
            flow.unacked_since = at;
        }
    }

    // Deterministic iteration order for the timeout scan (the hash map's
    // order is not stable across inserts).
    std::vector<std::pair<FlowKey, Flow*>> scan_order() {
        std::vector<std::pair<FlowKey, Flow*>> flows;
        flows.reserve(flows_.size());
        for (auto& [key, flow] : flows_) {
            flows.emplace_back(key, &flow);
        }
        std::sort(flows.begin(), flows.end(),
                  [](const auto& a, const auto& b) { return a.second->order < b.second->order; });
        return flows;
    }

    Config cfg_;
    PacketSink out_;
    std::unordered_map<FlowKey, Flow, FlowKeyHash> flows_;
    std::uint64_t next_order_ = 0;
    Stats stats_;
};

} // namespace stacksim
