#pragma once

#include "stacksim/packet.hpp"
#include "stacksim/types.hpp"

#include <cstdint>

namespace stacksim {

// Reliable byte-stream sender state with go-back-N semantics. All sequence
// arithmetic is modulo 2^32. The circular buffer tracks byte counts only;
// payload content is irrelevant to everything under test.
//
// Layout of the sequence space, oldest to newest:
//   acked ... next ... stream_end
// occupancy() bytes are held in the buffer (unacked + not yet sent);
// high_water marks the furthest byte ever transmitted, so acknowledgements
// arriving after a rewind can still be validated.
struct SendStream {
    std::uint32_t acked = 0;
    std::uint32_t next = 0;
    std::uint32_t stream_end = 0;
    std::uint32_t high_water = 0;
    std::uint32_t capacity = 0;

    std::uint32_t unacked() const { return next - acked; }
    std::uint32_t pending() const { return stream_end - next; }
    std::uint32_t occupancy() const { return stream_end - acked; }
    std::uint32_t free_space() const { return capacity - occupancy(); }

    bool can_deposit(std::uint32_t n) const { return free_space() >= n; }

    void deposit(std::uint32_t n) { stream_end += n; }

    void mark_sent(std::uint32_t n) {
        next += n;
        if (static_cast<std::uint32_t>(next - acked) > static_cast<std::uint32_t>(high_water - acked)) {
            high_water = next;
        }
    }

    // Returns bytes newly acknowledged (0 if the ack is stale or invalid).
    std::uint32_t on_ack(std::uint32_t ack_seq) {
        const std::uint32_t d = ack_seq - acked;
        if (d == 0 || d > static_cast<std::uint32_t>(high_water - acked)) {
            return 0;
        }
        acked = ack_seq;
        // An ack may overtake `next` after a rewind: skip the acknowledged
        // prefix instead of retransmitting it.
        if (static_cast<std::uint32_t>(stream_end - next) > static_cast<std::uint32_t>(stream_end - acked)) {
            next = acked;
        }
        return d;
    }

    // Go-back-N: everything unacknowledged becomes pending again.
    std::uint32_t rewind() {
        const std::uint32_t rewound = unacked();
        next = acked;
        return rewound;
    }
};

// Receive-side byte accounting for one flow.
struct RecvBuffer {
    std::uint32_t capacity = 0;
    std::uint32_t occupancy = 0;

    std::uint32_t free_space() const { return capacity - occupancy; }

    void consume(std::uint32_t n) {
        if (n > occupancy) {
            throw InvariantViolation("RecvBuffer: consuming more bytes than deposited");
        }
        occupancy -= n;
    }
};

// One-shot per-connection record: transport state plus the precomputed
// virtualization header template, everything a data packet needs in a
// single lookup.
struct ConsolidatedFlowState {
    FlowKey key;
    GuestId guest = 0;
    std::uint32_t conn_index = 0; // guest-application connection slot
    HeaderTemplate tpl;

    SendStream tx;
    std::uint32_t rx_next_expected = 0;
    RecvBuffer rx_buffer;

    Cycles next_send_time = 0;
    double rate = 0.0; // pacing rate, bytes per cycle
    CoreId owner_core = 0;

    std::uint64_t flow_uid = 0; // deterministic tiebreak in priority queues
    bool in_tx_queue = false;
    bool closed = false;
    bool closing = false;

    // Retransmission bookkeeping (slow-path owned).
    bool rto_armed = false;
    Cycles unacked_since = 0;
    std::uint32_t handshake_retries = 0;

    std::uint32_t tx_next_seq() const { return tx.next; }
    std::uint32_t tx_acked_seq() const { return tx.acked; }
    std::uint32_t pending_tx_bytes() const { return tx.pending(); }
};

enum class DepositResult {
    Accepted,
    Duplicate,
    OutOfWindow,
};

// Validates an in-order data segment against the flow and deposits it.
// Only the exactly-expected segment is accepted: the fast path punts
// exceptions, and this simulator drops rather than buffers out-of-order
// data. A duplicate (segment entirely before rx_next_expected) triggers an
// acknowledgement but no deposit.
inline DepositResult validate_and_deposit(ConsolidatedFlowState& flow, std::uint32_t seq,
                                          std::uint32_t payload_len) {
    const std::uint32_t d = seq - flow.rx_next_expected;
    if (d == 0) {
        if (flow.rx_buffer.free_space() < payload_len) {
            return DepositResult::OutOfWindow;
        }
        flow.rx_next_expected += payload_len;
        flow.rx_buffer.occupancy += payload_len;
        return DepositResult::Accepted;
    }
    if (d >= 0x80000000u) { // seq precedes the expected point: retransmission
        return DepositResult::Duplicate;
    }
    return DepositResult::OutOfWindow;
}

} // namespace stacksim
