#include "neuralfd/sensing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "neuralfd/errors.hpp"

namespace neuralfd::sensing {

CumulativeCount cumulative_count(const DetectorLog& log) {
    for (std::size_t i = 1; i < log.crossing_times.size(); ++i) {
        if (!(log.crossing_times[i] > log.crossing_times[i - 1])) {
            throw DataError("detector log at x=" + std::to_string(log.position) +
                            " is not strictly increasing at index " + std::to_string(i));
        }
    }
    return CumulativeCount{log.position, log.crossing_times};
}

double estimate_flux(const CumulativeCount& cc, double t) {
    const auto& ts = cc.times;
    if (ts.size() < 2 || t <= ts.front() || t > ts.back()) return 0.0;
    // First knot at or after t; the interval ending there gives the left-hand slope.
    const auto it = std::lower_bound(ts.begin(), ts.end(), t);
    const auto i = static_cast<std::size_t>(it - ts.begin());
    return 1.0 / (ts[i] - ts[i - 1]);
}

DetectorBank::DetectorBank(std::span<const DetectorLog> logs) {
    counts_.reserve(logs.size());
    for (const auto& log : logs) counts_.push_back(cumulative_count(log));
    std::sort(counts_.begin(), counts_.end(),
              [](const CumulativeCount& a, const CumulativeCount& b) { return a.position < b.position; });
    for (std::size_t i = 1; i < counts_.size(); ++i) {
        max_gap_ = std::max(max_gap_, counts_[i].position - counts_[i - 1].position);
    }
}

double DetectorBank::flux_at(double x, double t, double coverage_radius) const {
    if (counts_.empty()) throw CoverageError("no detectors available");
    const double radius = coverage_radius > 0.0 ? coverage_radius : max_gap_;
    const auto it = std::lower_bound(counts_.begin(), counts_.end(), x,
                                     [](const CumulativeCount& c, double v) { return c.position < v; });
    if (it == counts_.begin() || it == counts_.end()) {
        const auto& nearest = it == counts_.end() ? counts_.back() : counts_.front();
        if (std::abs(nearest.position - x) > radius) {
            throw CoverageError("no detector within " + std::to_string(radius) + " ft of x=" +
                                std::to_string(x));
        }
        return estimate_flux(nearest, t);
    }
    const auto& hi = *it;
    const auto& lo = *(it - 1);
    if (x - lo.position > radius && hi.position - x > radius) {
        throw CoverageError("detector gap around x=" + std::to_string(x) + " exceeds coverage");
    }
    const double a = (x - lo.position) / (hi.position - lo.position);
    return (1.0 - a) * estimate_flux(lo, t) + a * estimate_flux(hi, t);
}

DensitySeries estimate_density_along(const Trajectory& traj, const DetectorBank& bank,
                                     const SensingOptions& opts) {
    if (traj.speeds.size() != traj.positions.size()) {
        throw DataError("trajectory speeds and positions differ in length");
    }
    DensitySeries out;
    out.t0 = traj.t0;
    out.dt = traj.dt;
    out.values.reserve(traj.size());
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const double u = traj.speeds[k];
        const double q = bank.flux_at(traj.positions[k], traj.time_at(k), opts.coverage_radius);
        double rho = opts.rho_cap;
        if (u >= opts.u_floor) rho = std::min(q / u, opts.rho_cap);
        out.values.push_back(std::max(rho, 0.0));
    }
    return out;
}

DensitySeries estimate_density_along(const Trajectory& traj, std::span<const DetectorLog> logs,
                                     const SensingOptions& opts) {
    return estimate_density_along(traj, DetectorBank(logs), opts);
}

std::string colocated_csv(std::span<const Trajectory> trajs, std::span<const DensitySeries> rhos) {
    if (trajs.size() != rhos.size()) throw DataError("trajectory/density count mismatch");
    std::ostringstream os;
    os.precision(std::numeric_limits<double>::max_digits10);
    os << "vehicle_id,t,x,v,rho\n";
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        const auto& tr = trajs[i];
        if (rhos[i].size() != tr.size()) throw DataError("density series length mismatch");
        for (std::size_t k = 0; k < tr.size(); ++k) {
            os << tr.vehicle_id << ',' << tr.time_at(k) << ',' << tr.positions[k] << ','
               << tr.speeds[k] << ',' << rhos[i].values[k] << '\n';
        }
    }
    return os.str();
}

}  // namespace neuralfd::sensing
