#pragma once

#include "stacksim/accounting.hpp"
#include "stacksim/types.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace stacksim {

// Central allocator parameters. Weights are dense by guest index.
struct AllocatorConfig {
    double boost = 0.94;                 // fraction of elapsed cycles handed out
    SignedCycles cap = 210000;           // per-(core,guest) balance ceiling, kUnboundedCap disables
    Cycles update_period = 210000;       // 100 us at 2.1 GHz
    std::vector<double> weights;         // one positive weight per guest

    bool unbounded_cap() const { return cap == kUnboundedCap; }
    // b_max for the deficit computation; the cap doubles as the reference
    // point since a fully replenished guest sits exactly at the cap.
    SignedCycles b_max() const { return cap; }
};

// Update credits per guest for one replenish interval:
// e_g = boost * (now - last_update) * w_g / sum(w), rounded to nearest cycle.
inline std::vector<Cycles> compute_update_credits(Cycles now, Cycles last_update,
                                                  const AllocatorConfig& cfg) {
    std::vector<Cycles> credits(cfg.weights.size(), 0);
    if (cfg.weights.empty()) {
        return credits;
    }
    double weight_sum = 0.0;
    for (double w : cfg.weights) {
        weight_sum += w;
    }
    const double elapsed = static_cast<double>(now - last_update);
    for (std::size_t g = 0; g < cfg.weights.size(); ++g) {
        credits[g] = static_cast<Cycles>(
            std::llround(cfg.boost * elapsed * cfg.weights[g] / weight_sum));
    }
    return credits;
}

// Work-conserving redistribution: a guest's credits go to the cores where it
// actually consumed budget, proportionally to each core's deficit
// (b_max - b_gc). Conserves e_g exactly whenever any deficit is positive; a
// guest with zero deficit everywhere forfeits the interval's credit.
inline std::vector<Cycles> distribute_to_cores(Cycles e_g, std::span<const SignedCycles> balances,
                                               SignedCycles b_max) {
    std::vector<std::uint64_t> deficits(balances.size(), 0);
    for (std::size_t c = 0; c < balances.size(); ++c) {
        if (balances[c] > b_max) {
            throw InvariantViolation("distribute_to_cores: balance above b_max");
        }
        deficits[c] = static_cast<std::uint64_t>(b_max - balances[c]);
    }
    return apportion_largest_remainder(e_g, deficits);
}

// One full replenish pass over the budget table. With an unbounded cap the
// deficit reference point does not exist, so credits are split equally
// across cores and balances accumulate without saturation.
inline void replenish_all(Cycles now, BudgetTable& table, const AllocatorConfig& cfg,
                          Cycles& last_update) {
    const auto credits = compute_update_credits(now, last_update, cfg);
    const std::size_t m = table.num_cores();
    std::vector<SignedCycles> balances(m);
    for (GuestId g = 0; g < credits.size(); ++g) {
        std::vector<Cycles> per_core;
        if (cfg.unbounded_cap()) {
            std::vector<std::uint64_t> ones(m, 1);
            per_core = apportion_largest_remainder(credits[g], ones);
        } else {
            for (CoreId c = 0; c < m; ++c) {
                balances[c] = table.balance(c, g);
            }
            per_core = distribute_to_cores(credits[g], balances, cfg.b_max());
        }
        for (CoreId c = 0; c < m; ++c) {
            if (per_core[c] > 0) {
                table.replenish_entry(c, g, per_core[c]);
            }
        }
    }
    last_update = now;
}

} // namespace stacksim
