#pragma once

#include "stacksim/flow.hpp"
#include "stacksim/packet.hpp"

#include <algorithm>
#include <memory>
#include <unordered_map>
#include <vector>

namespace stacksim {

using FlowPtr = std::shared_ptr<ConsolidatedFlowState>;

// The single combined lookup replacing layered vSwitch + TCP lookups.
// Exact-match on the full FlowKey including the tunnel id. Keeps a
// per-guest index (insertion-ordered, so iteration is deterministic).
class FlowTable {
public:
    explicit FlowTable(std::size_t num_guests) : by_guest_(num_guests) {}

    enum class InstallResult { Ok, Duplicate };
    enum class RemoveResult { Ok, Absent };

    FlowPtr lookup(const FlowKey& key) const {
        auto it = flows_.find(key);
        return it == flows_.end() ? nullptr : it->second;
    }

    InstallResult install(FlowPtr flow) {
        auto [it, inserted] = flows_.try_emplace(flow->key, flow);
        if (!inserted) {
            return InstallResult::Duplicate;
        }
        by_guest_[flow->guest].push_back(std::move(flow));
        return InstallResult::Ok;
    }

    RemoveResult remove(const FlowKey& key) {
        auto it = flows_.find(key);
        if (it == flows_.end()) {
            return RemoveResult::Absent;
        }
        FlowPtr flow = it->second;
        flow->closed = true;
        flows_.erase(it);
        auto& vec = by_guest_[flow->guest];
        vec.erase(std::remove(vec.begin(), vec.end(), flow), vec.end());
        return RemoveResult::Ok;
    }

    const std::vector<FlowPtr>& guest_flows(GuestId g) const { return by_guest_[g]; }

    std::size_t size() const { return flows_.size(); }

private:
    std::unordered_map<FlowKey, FlowPtr, FlowKeyHash> flows_;
    std::vector<std::vector<FlowPtr>> by_guest_;
};

} // namespace stacksim
