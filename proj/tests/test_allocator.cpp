#include "stacksim/allocator.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace stacksim;

namespace {

AllocatorConfig make_cfg(std::vector<double> weights, double boost = 0.94,
                         SignedCycles cap = 210000, Cycles period = 210000) {
    AllocatorConfig cfg;
    cfg.boost = boost;
    cfg.cap = cap;
    cfg.update_period = period;
    cfg.weights = std::move(weights);
    return cfg;
}

} // namespace

TEST_CASE("update credits for the default parameters", "[allocator]") {
    // boost 0.94 over a 100 us period at 2.1 GHz (210,000 cycles), two
    // equal-weight guests: 0.94 * 210000 / 2 = 98,700 each.
    const auto credits = compute_update_credits(210000, 0, make_cfg({1.0, 1.0}));
    REQUIRE(credits.size() == 2);
    CHECK(credits[0] == 98700);
    CHECK(credits[1] == 98700);
}

TEST_CASE("weights cancel for a single guest with full boost", "[allocator]") {
    const auto credits = compute_update_credits(1000, 0, make_cfg({5.0}, 1.0));
    REQUIRE(credits.size() == 1);
    CHECK(credits[0] == 1000);
}

TEST_CASE("2:1 weights give a 2:1 credit split", "[allocator]") {
    const auto credits = compute_update_credits(210000, 0, make_cfg({2.0, 1.0}));
    CHECK(credits[0] == 131600);
    CHECK(credits[1] == 65800);
}

TEST_CASE("empty guest set yields an empty map", "[allocator]") {
    CHECK(compute_update_credits(210000, 0, make_cfg({})).empty());
}

TEST_CASE("credit is proportional to weight within rounding", "[allocator]") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> w(0.1, 16.0);
    for (int iter = 0; iter < 2000; ++iter) {
        const std::size_t n = 1 + rng() % 6;
        std::vector<double> weights(n);
        double sum = 0.0;
        for (auto& x : weights) {
            x = w(rng);
            sum += x;
        }
        const Cycles elapsed = 1 + rng() % 4000000;
        const auto credits = compute_update_credits(elapsed, 0, make_cfg(weights));
        for (std::size_t g = 0; g < n; ++g) {
            const double exact = 0.94 * static_cast<double>(elapsed) * weights[g] / sum;
            REQUIRE(std::abs(static_cast<double>(credits[g]) - exact) <= 0.5 + 1e-6);
        }
    }
}

TEST_CASE("all deficit on one core routes all credit there", "[allocator]") {
    const SignedCycles b_max = 210000;
    std::vector<SignedCycles> balances = {b_max, b_max - 400};
    const auto u = distribute_to_cores(1000, balances, b_max);
    CHECK(u[0] == 0);
    CHECK(u[1] == 1000);
}

TEST_CASE("credits split proportionally to deficit", "[allocator]") {
    const SignedCycles b_max = 210000;
    std::vector<SignedCycles> balances = {b_max - 100, b_max - 200};
    const auto u = distribute_to_cores(900, balances, b_max);
    CHECK(u[0] == 300);
    CHECK(u[1] == 600);
}

TEST_CASE("fully idle guest forfeits the interval's credit", "[allocator]") {
    const SignedCycles b_max = 210000;
    std::vector<SignedCycles> balances = {b_max, b_max};
    const auto u = distribute_to_cores(500, balances, b_max);
    CHECK(u[0] == 0);
    CHECK(u[1] == 0);
}

TEST_CASE("work conservation holds for randomized deficit vectors", "[allocator]") {
    std::mt19937_64 rng(404);
    for (int iter = 0; iter < 10000; ++iter) {
        const std::size_t m = 1 + rng() % 12;
        const SignedCycles b_max = 210000;
        std::vector<SignedCycles> balances(m);
        bool any_deficit = false;
        for (auto& b : balances) {
            // balances range from deep deficit to exactly b_max
            b = b_max - static_cast<SignedCycles>(rng() % 500000);
            any_deficit |= (b < b_max);
        }
        if (!any_deficit) {
            balances[rng() % m] = b_max - 1;
        }
        const Cycles e_g = rng() % 1000000;
        const auto u = distribute_to_cores(e_g, balances, b_max);
        Cycles total = 0;
        for (std::size_t c = 0; c < m; ++c) {
            total += u[c];
            if (balances[c] == b_max) {
                REQUIRE(u[c] == 0); // activity targeting
            }
        }
        REQUIRE(total == e_g); // exact conservation
    }
}

TEST_CASE("replenish_all restores a deficit on the sole active core", "[allocator]") {
    // Guest 0 ran a 98,700-cycle deficit on core 0 and is idle (at cap)
    // elsewhere; with defaults its whole credit lands on core 0.
    auto cfg = make_cfg({1.0, 1.0});
    BudgetTable table(2, 2, cfg.cap, cfg.cap);
    table.charge_direct(0, 0, static_cast<Cycles>(cfg.cap) + 98700);
    REQUIRE(table.balance(0, 0) == -98700);
    Cycles last_update = 0;
    replenish_all(210000, table, cfg, last_update);
    CHECK(last_update == 210000);
    CHECK(table.balance(0, 0) == 0);
    CHECK(table.balance(1, 0) == cfg.cap);
    CHECK(table.balance(0, 1) == cfg.cap);
    CHECK(table.balance(1, 1) == cfg.cap);
}

TEST_CASE("replenish never lifts a balance above the cap", "[allocator]") {
    std::mt19937_64 rng(5);
    auto cfg = make_cfg({1.0, 3.0, 2.0});
    BudgetTable table(3, 3, cfg.cap, cfg.cap);
    Cycles last_update = 0;
    Cycles now = 0;
    for (int round = 0; round < 200; ++round) {
        for (int i = 0; i < 20; ++i) {
            table.charge_direct(rng() % 3, rng() % 3, rng() % 40000);
        }
        now += cfg.update_period;
        replenish_all(now, table, cfg, last_update);
        for (CoreId c = 0; c < 3; ++c) {
            for (GuestId g = 0; g < 3; ++g) {
                REQUIRE(table.balance(c, g) <= cfg.cap);
            }
        }
    }
}

TEST_CASE("unbounded cap accumulates credit while idle", "[allocator]") {
    auto cfg = make_cfg({1.0, 1.0}, 0.94, kUnboundedCap);
    BudgetTable table(2, 2, kUnboundedCap, 0);
    Cycles last_update = 0;
    for (int round = 1; round <= 10; ++round) {
        replenish_all(static_cast<Cycles>(round) * cfg.update_period, table, cfg, last_update);
    }
    // 10 rounds of 98,700 split evenly across 2 cores.
    CHECK(table.balance(0, 0) == 10 * 49350);
    CHECK(table.balance(1, 0) == 10 * 49350);
    CHECK(table.balance(0, 0) + table.balance(1, 0) == 10 * 98700);
}
