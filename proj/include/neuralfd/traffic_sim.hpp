#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "neuralfd/fd_models.hpp"
#include "neuralfd/types.hpp"

namespace neuralfd::sim {

/// Upstream demand knot; demand is linear between knots and constant outside.
struct InflowKnot {
    double t = 0.0;     // [s]
    double rate = 0.0;  // [veh/s]
};

/// Periodic downstream signal: green for `green` s, then red for `red` s.
struct SignalPlan {
    double green = 30.0;
    double red = 20.0;
    double offset = 0.0;

    bool is_red(double t) const;
};

/// A temporary capacity drop over [x_start, x_end] during [t_start, t_end).
struct Blockage {
    double x_start = 0.0;
    double x_end = 0.0;
    double t_start = 0.0;
    double t_end = 0.0;
    double capacity_factor = 1.0;
};

/// Seeded generator for many short blockages (double parking events).
struct RandomBlockages {
    int count = 0;
    double x_min = 0.0;
    double x_max = 0.0;
    double length = 20.0;        // [ft]
    double min_duration = 10.0;  // [s]
    double max_duration = 30.0;  // [s]
    double capacity_factor = 0.3;
};

struct ScenarioConfig {
    double roadway_length = 350.0;  // [ft]
    double cell_width = 3.5;        // [ft]
    double sim_dt = 0.05;           // [s]
    double horizon = 3600.0;        // [s]
    double sample_dt = 1.0;         // trajectory / field record interval [s]
    fd::GreenshieldsParams true_fd{44.0, 0.05};
    std::vector<InflowKnot> inflow;
    double inflow_jitter = 0.0;     // relative demand fluctuation in [0, 1)
    double jitter_period = 30.0;    // [s]
    std::optional<SignalPlan> signal;
    std::vector<Blockage> blockages;
    std::optional<RandomBlockages> random_blockages;
    double detector_spacing = 3.0;  // [ft]
    int probe_count = 0;            // trajectories to emit; 0 emits every vehicle
    std::uint64_t seed = 1;
    bool closed_boundaries = false;
    std::vector<double> initial_density;  // empty: empty road; 1 value: uniform; else per cell

    /// Throws ConfigError on CFL violation or any out-of-range field.
    void validate() const;
    std::size_t cell_count() const;
    std::size_t steps() const;
    std::size_t steps_per_sample() const;
    double demand_at(double t) const;  // without jitter
    /// Explicit blockages plus the seeded random ones.
    std::vector<Blockage> resolved_blockages() const;
};

/// Density snapshots rho(cell, record) every `record_dt` seconds starting at t = 0.
struct DensityField {
    std::size_t cells = 0;
    double cell_width = 0.0;
    double record_dt = 1.0;
    std::vector<double> values;  // record-major

    std::size_t records() const { return cells == 0 ? 0 : values.size() / cells; }
    double at(std::size_t cell, std::size_t record) const { return values[record * cells + cell]; }
    std::span<const double> record(std::size_t r) const {
        return {values.data() + r * cells, cells};
    }
    /// Bilinear sample in (x, t); clamped to the stored span.
    double sample(double x, double t) const;
};

struct StepInfo {
    std::size_t step;
    double t;                      // time at the end of the step
    std::span<const double> rho;   // state after the update
    double inflow;                 // upstream boundary flux during the step [veh/s]
    double outflow;                // downstream boundary flux [veh/s]
};

using StepObserver = std::function<void(const StepInfo&)>;

struct ScenarioResult {
    DensityField field;
    std::vector<Trajectory> trajectories;
    std::vector<DetectorLog> detectors;
    double vehicles_entered = 0.0;
    double vehicles_exited = 0.0;
};

/// Demand-supply interface flux scaled by a capacity factor.
double godunov_flux(const fd::GreenshieldsParams& fd, double rho_left, double rho_right,
                    double capacity_factor = 1.0);

/// Capacity factor of each of the `cells + 1` interfaces at time t (1 when unblocked).
std::vector<double> apply_blockage(std::span<const Blockage> blockages, double t,
                                   std::size_t cells, double cell_width);

ScenarioResult run_scenario(const ScenarioConfig& cfg, const StepObserver& observer = {});

}  // namespace neuralfd::sim
