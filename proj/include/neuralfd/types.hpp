#pragma once

#include <cstdint>
#include <vector>

namespace neuralfd {

/// One probe vehicle sampled on a uniform time grid.
struct Trajectory {
    std::int64_t vehicle_id = 0;
    double t0 = 0.0;
    double dt = 1.0;
    std::vector<double> positions;  // [ft]
    std::vector<double> speeds;     // [ft/s]

    std::size_t size() const { return positions.size(); }
    double time_at(std::size_t k) const { return t0 + dt * static_cast<double>(k); }
    /// Transit time covered by the samples.
    double duration() const {
        return positions.empty() ? 0.0 : dt * static_cast<double>(positions.size() - 1);
    }
};

/// A fixed point sensor and the sorted times at which vehicles crossed it.
struct DetectorLog {
    double position = 0.0;  // [ft]
    std::vector<double> crossing_times;
};

/**
 * Density experienced along a trajectory, on the trajectory's own grid.
 * Drives the trajectory ODE as its control input.
 */
struct ControlSeries {
    double t0 = 0.0;
    double dt = 1.0;
    std::vector<double> values;  // [veh/ft]

    std::size_t size() const { return values.size(); }
    double t_end() const { return t0 + dt * static_cast<double>(values.size() - 1); }
    void validate() const;
};

using DensitySeries = ControlSeries;

}  // namespace neuralfd
