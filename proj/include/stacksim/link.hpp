#pragma once

#include "stacksim/packet.hpp"
#include "stacksim/types.hpp"

#include <cstdint>
#include <random>

namespace stacksim {

enum class LinkDirection : std::uint8_t { ToRemote = 0, ToStack = 1 };

// Single full-duplex bottleneck link between the stack host and the remote
// peer: per-direction serialization (one packet at a time) plus fixed
// propagation delay. Loss, when configured, is an independent seeded draw
// per packet, used to exercise the timeout machinery.
class Link {
public:
    struct Stats {
        std::uint64_t packets[2] = {0, 0};
        std::uint64_t losses[2] = {0, 0};
    };

    Link(std::uint64_t bandwidth_bps, Cycles propagation, double cycles_per_second,
         double loss_rate, std::uint64_t loss_seed)
        : bandwidth_bps_(bandwidth_bps), propagation_(propagation),
          cycles_per_second_(cycles_per_second), loss_rate_(loss_rate), rng_(loss_seed) {}

    Cycles serialization_cycles(std::uint32_t wire_len) const {
        const std::uint64_t bits = static_cast<std::uint64_t>(wire_len) * 8;
        const double cycles = static_cast<double>(bits) * cycles_per_second_ /
                              static_cast<double>(bandwidth_bps_);
        return static_cast<Cycles>(std::ceil(cycles));
    }

    // Returns the arrival time at the far end, or nullopt if the packet was
    // lost. The caller schedules the delivery event.
    std::optional<Cycles> transmit(const Packet& p, Cycles now, LinkDirection dir) {
        const auto d = static_cast<std::size_t>(dir);
        if (loss_rate_ > 0.0) {
            std::uniform_real_distribution<double> u(0.0, 1.0);
            if (u(rng_) < loss_rate_) {
                ++stats_.losses[d];
                return std::nullopt;
            }
        }
        const Cycles start = std::max(now, busy_until_[d]);
        const Cycles ser = serialization_cycles(p.wire_len);
        busy_until_[d] = start + ser;
        ++stats_.packets[d];
        return busy_until_[d] + propagation_;
    }

    const Stats& stats() const { return stats_; }

private:
    std::uint64_t bandwidth_bps_;
    Cycles propagation_;
    double cycles_per_second_;
    double loss_rate_;
    std::mt19937_64 rng_;
    Cycles busy_until_[2] = {0, 0};
    Stats stats_;
};

} // namespace stacksim
