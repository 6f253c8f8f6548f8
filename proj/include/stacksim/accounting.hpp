#pragma once

#include "stacksim/types.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

namespace stacksim {

enum class TaskKind : std::uint8_t { Rx, Poll, Tx };

// Splits `total` into integer shares proportional to `weights`, conserving
// the total exactly. Remainder units go to the largest fractional parts,
// ties broken by ascending index.
inline std::vector<std::uint64_t> apportion_largest_remainder(std::uint64_t total,
                                                              std::span<const std::uint64_t> weights) {
    const std::size_t n = weights.size();
    std::vector<std::uint64_t> shares(n, 0);
    unsigned __int128 sum = 0;
    for (auto w : weights) {
        sum += w;
    }
    if (sum == 0 || total == 0) {
        return shares;
    }
    std::vector<unsigned __int128> rem(n, 0);
    std::uint64_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned __int128 num = static_cast<unsigned __int128>(total) * weights[i];
        shares[i] = static_cast<std::uint64_t>(num / sum);
        rem[i] = num % sum;
        assigned += shares[i];
    }
    std::uint64_t leftover = total - assigned;
    if (leftover > 0) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (rem[a] != rem[b]) {
                return rem[a] > rem[b];
            }
            return a < b;
        });
        for (std::size_t i = 0; i < leftover; ++i) {
            ++shares[order[i]];
        }
    }
    return shares;
}

// Deterministic per-task cycle cost standing in for the hardware timestamp
// counter. Costs are integral; the per-byte rate is fixed-point
// (milli-cycles per byte) so rounding is exact and platform-independent.
struct CostModel {
    Cycles base_cycles_per_task = 200;
    std::uint32_t milli_cycles_per_payload_byte = 300; // 0.3 cycles/byte
    Cycles poll_empty_cycles = 50;
    std::uint32_t jitter_pct = 0; // optional +/- percentage noise, seeded

    Cycles task_cost(TaskKind /*kind*/, std::uint32_t payload_len) const {
        const std::uint64_t milli =
            static_cast<std::uint64_t>(payload_len) * milli_cycles_per_payload_byte;
        Cycles c = base_cycles_per_task + (milli + 500) / 1000;
        if (jitter_pct > 0) {
            std::uniform_int_distribution<int> d(-static_cast<int>(jitter_pct),
                                                 static_cast<int>(jitter_pct));
            const int pct = d(jitter_rng_);
            c = static_cast<Cycles>(static_cast<std::int64_t>(c) +
                                    static_cast<std::int64_t>(c) * pct / 100);
        }
        return c;
    }

    void seed_jitter(std::uint64_t seed) { jitter_rng_.seed(seed); }

private:
    mutable std::mt19937_64 jitter_rng_{0};
};

// Signed per-(core,guest) cycle balances with a cap. Charging may drive a
// balance negative (deficit round-robin); replenishment saturates at the cap.
class BudgetTable {
public:
    BudgetTable(std::size_t num_cores, std::size_t num_guests, SignedCycles cap,
                SignedCycles initial = 0)
        : num_cores_(num_cores), num_guests_(num_guests), cap_(cap),
          balances_(num_cores * num_guests, initial) {}

    std::size_t num_cores() const { return num_cores_; }
    std::size_t num_guests() const { return num_guests_; }
    SignedCycles cap() const { return cap_; }

    SignedCycles balance(CoreId c, GuestId g) const { return balances_[c * num_guests_ + g]; }

    bool has_budget(CoreId c, GuestId g) const { return balance(c, g) > 0; }

    SignedCycles replenish_entry(CoreId c, GuestId g, Cycles credit) {
        SignedCycles& b = balances_[c * num_guests_ + g];
        const SignedCycles updated = b + static_cast<SignedCycles>(credit);
        b = std::min(cap_, updated);
        return b;
    }

    void charge_direct(CoreId c, GuestId g, Cycles amount) {
        balances_[c * num_guests_ + g] -= static_cast<SignedCycles>(amount);
        charged_total_ += amount;
        charged_by_guest_[g] += amount;
    }

    // Breaks a measured batch total down to guests proportionally to their
    // packet counts and decrements each balance. Conserves the total
    // exactly; ties go to the lower guest id.
    std::vector<std::uint64_t> charge_batch(CoreId core,
                                            std::span<const std::uint64_t> per_guest_counts,
                                            Cycles measured_cycles) {
        auto charges = apportion_largest_remainder(measured_cycles, per_guest_counts);
        for (GuestId g = 0; g < charges.size(); ++g) {
            if (charges[g] > 0) {
                charge_direct(core, g, charges[g]);
            }
        }
        return charges;
    }

    // Ledger counters: every cycle ever charged to a guest, by any path.
    Cycles charged_total() const { return charged_total_; }
    Cycles charged_to(GuestId g) const {
        auto it = charged_by_guest_.find(g);
        return it == charged_by_guest_.end() ? 0 : it->second;
    }

private:
    std::size_t num_cores_;
    std::size_t num_guests_;
    SignedCycles cap_;
    std::vector<SignedCycles> balances_;
    Cycles charged_total_ = 0;
    std::unordered_map<GuestId, Cycles> charged_by_guest_;
};

} // namespace stacksim
