#pragma once

#include "fidelity/belief_mdp.hpp"
#include "fidelity/workload_model.hpp"

namespace fidelity::presets {

/// Two-state dual-task workload model. Accuracy under N drops with workload while H holds
/// up, normal workload produces no false alarms, reaction times are slower and noisier under
/// high workload, and H makes the onset of high workload less likely than N does.
WorkloadModel dual_task_model();

/// Queue for the dual-task scenario: default durations and capacity, 0.11 tasks per second.
/// At the 1/12 default rate the solved policy is nearly always H and ties that baseline.
QueueParams dual_task_queue();

} // namespace fidelity::presets
