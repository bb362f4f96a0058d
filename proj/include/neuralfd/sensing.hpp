#pragma once

#include <span>
#include <string>
#include <vector>

#include "neuralfd/fd_models.hpp"
#include "neuralfd/types.hpp"

namespace neuralfd::sensing {

/// Piecewise-linear cumulative count at a detector; knot i is (times[i], i + 1).
struct CumulativeCount {
    double position = 0.0;
    std::vector<double> times;

    std::size_t knots() const { return times.size(); }
};

/// Throws DataError if the log is not strictly increasing.
CumulativeCount cumulative_count(const DetectorLog& log);

/**
 * Slope of the count curve at t [veh/s]. At a knot the left-hand slope is
 * used; outside the knot span (or with fewer than two knots) the flux is 0.
 */
double estimate_flux(const CumulativeCount& cc, double t);

struct SensingOptions {
    double u_floor = 0.1;                 // speeds below this count as stopped [ft/s]
    double rho_cap = fd::kDefaultRhoJRef; // density assigned to stopped vehicles, and the cap
    double coverage_radius = 0.0;         // 0: use the largest detector gap
};

/// Detector counts sorted by position, ready for repeated lookups.
class DetectorBank {
public:
    explicit DetectorBank(std::span<const DetectorLog> logs);

    std::size_t size() const { return counts_.size(); }
    const std::vector<CumulativeCount>& counts() const { return counts_; }
    /// Flux at (x, t), blending the two detectors that bracket x.
    double flux_at(double x, double t, double coverage_radius) const;
    double max_gap() const { return max_gap_; }

private:
    std::vector<CumulativeCount> counts_;
    double max_gap_ = 0.0;
};

/// rho(t_k) = Q(x_k, t_k) / u_k along the trajectory, stopped samples capped.
DensitySeries estimate_density_along(const Trajectory& traj, const DetectorBank& bank,
                                     const SensingOptions& opts = {});

DensitySeries estimate_density_along(const Trajectory& traj, std::span<const DetectorLog> logs,
                                     const SensingOptions& opts = {});

/// Co-located training rows: vehicle_id,t,x,v,rho.
std::string colocated_csv(std::span<const Trajectory> trajs, std::span<const DensitySeries> rhos);

}  // namespace neuralfd::sensing
