#pragma once

#include "stacksim/accounting.hpp"
#include "stacksim/types.hpp"

namespace stacksim {

// Observation hook for scheduling decisions. Tests install a sink to audit
// budget gating: every POLL/TX work item reports the guest's balance at its
// scheduling instant, every RX packet reports whether it was dropped.
struct ScheduleAudit {
    virtual ~ScheduleAudit() = default;
    virtual void work_item(TaskKind /*kind*/, CoreId /*core*/, GuestId /*guest*/,
                           SignedCycles /*balance*/, Cycles /*now*/) {}
    virtual void rx_packet(CoreId /*core*/, GuestId /*guest*/, SignedCycles /*balance*/,
                           bool /*dropped*/, Cycles /*now*/) {}
};

} // namespace stacksim
