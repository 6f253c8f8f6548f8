#pragma once

#include "stacksim/packet.hpp"
#include "stacksim/types.hpp"

#include <cstdint>
#include <queue>
#include <vector>

namespace stacksim {

// Event kinds, in tie-break priority order at equal timestamps: packets land
// before control work, control work before core steps, so a core stepping at
// time t observes everything that "happened" at t.
enum class EventKind : std::uint8_t {
    PacketToStack = 0,
    PacketToRemote = 1,
    ResolutionDone = 2,
    SlowPathStep = 3,
    AllocatorTick = 4,
    WorkloadPhase = 5,
    RemoteRtoScan = 6,
    CoreStep = 7,
};

struct SimEvent {
    Cycles time = 0;
    EventKind kind = EventKind::CoreStep;
    std::uint64_t seq = 0; // insertion order, final tie-break
    std::uint32_t arg = 0; // core id / guest id / phase flag, kind-specific
    Packet packet;         // valid for packet events only
};

// Discrete-event substrate: a total order over events by
// (time, kind priority, insertion sequence).
class EventQueue {
public:
    void push(Cycles time, EventKind kind, std::uint32_t arg = 0, const Packet& pkt = Packet{}) {
        events_.push(SimEvent{time, kind, next_seq_++, arg, pkt});
    }

    bool empty() const { return events_.empty(); }
    std::size_t size() const { return events_.size(); }

    const SimEvent& top() const { return events_.top(); }

    SimEvent pop() {
        SimEvent e = events_.top();
        events_.pop();
        return e;
    }

private:
    struct Later {
        bool operator()(const SimEvent& a, const SimEvent& b) const {
            if (a.time != b.time) {
                return a.time > b.time;
            }
            if (a.kind != b.kind) {
                return static_cast<std::uint8_t>(a.kind) > static_cast<std::uint8_t>(b.kind);
            }
            return a.seq > b.seq;
        }
    };

    std::priority_queue<SimEvent, std::vector<SimEvent>, Later> events_;
    std::uint64_t next_seq_ = 0;
};

} // namespace stacksim
