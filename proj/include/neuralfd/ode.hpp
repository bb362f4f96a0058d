#pragma once

#include <cstddef>
#include <vector>

#include "neuralfd/fd_models.hpp"
#include "neuralfd/types.hpp"

namespace neuralfd::ode {

/// Model trajectory on the control's time grid.
struct SimTrajectory {
    double t0 = 0.0;
    double dt = 1.0;
    std::vector<double> positions;
};

/// Linear interpolation of the control; clamps queries within a small tolerance of the span.
double control_at(const ControlSeries& c, double t);

/// One classical RK4 step of dx/dt = rhs(t, x).
template <typename Rhs>
double rk4_step(Rhs&& rhs, double t, double x, double h) {
    const double k1 = rhs(t, x);
    const double k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1);
    const double k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2);
    const double k4 = rhs(t + h, x + h * k3);
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Integrate dx/dt = rhs(t, x) over `steps` RK4 steps; returns steps + 1 states.
template <typename Rhs>
std::vector<double> rk4_integrate(Rhs&& rhs, double x0, double t0, double h, std::size_t steps) {
    std::vector<double> xs;
    xs.reserve(steps + 1);
    xs.push_back(x0);
    double x = x0;
    for (std::size_t n = 0; n < steps; ++n) {
        x = rk4_step(rhs, t0 + h * static_cast<double>(n), x, h);
        xs.push_back(x);
    }
    return xs;
}

/**
 * Integrate dx/dt = f(x, rho_c(t)) with RK4 at the control's own step.
 * Throws NumericalFailure if the model produces a non-finite speed.
 */
SimTrajectory integrate_trajectory(const fd::FdModel& model, double x0,
                                   const ControlSeries& control);

struct BackpropResult {
    double sq_error = 0.0;     // sum_k (x_k - xhat_k)^2
    std::vector<double> grad;  // d sq_error / d theta
};

/**
 * Forward pass from reference.positions[0], then reverse-mode sweep through
 * every RK4 stage (including the position feedback of NN(rho, x)).
 */
BackpropResult backprop_trajectory(const fd::FdModel& model, const ControlSeries& control,
                                   const Trajectory& reference);

}  // namespace neuralfd::ode
