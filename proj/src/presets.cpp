#include "fidelity/presets.hpp"

namespace fidelity::presets {

WorkloadModel dual_task_model() {
    WorkloadModel m = WorkloadModel::with_states(2);
    m.initial << 0.662, 0.338;
    m.transition[index_of(ActionId::N)] << 0.732, 0.268,
                                           0.199, 0.801;
    m.transition[index_of(ActionId::H)] << 0.829, 0.171,
                                           0.201, 0.799;
    using C = EmissionChannel;
    auto& n = m.emissions[index_of(ActionId::N)];
    n[0] = {C::gaussian(0.922, 0.07), C::point_mass(0.0), C::gaussian(550.0, 90.0)};
    n[1] = {C::gaussian(0.697, 0.10), C::gaussian(1.2, 0.4), C::gaussian(800.0, 160.0)};
    auto& h = m.emissions[index_of(ActionId::H)];
    h[0] = {C::gaussian(0.812, 0.06), C::point_mass(0.0), C::gaussian(600.0, 90.0)};
    h[1] = {C::gaussian(0.807, 0.07), C::gaussian(0.9, 0.35), C::gaussian(780.0, 150.0)};
    return m;
}

QueueParams dual_task_queue() {
    QueueParams q;
    q.arrival_rate = 0.11;
    return q;
}

} // namespace fidelity::presets
