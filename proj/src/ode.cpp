#include "neuralfd/ode.hpp"

#include <cmath>
#include <string>

#include "neuralfd/errors.hpp"

namespace neuralfd {

void ControlSeries::validate() const {
    if (!(dt > 0.0)) throw ContractViolation("control series needs dt > 0");
    if (values.size() < 2) throw ContractViolation("control series needs at least 2 samples");
    for (double v : values) {
        if (!(v >= 0.0)) throw ContractViolation("control densities must be non-negative");
    }
}

namespace ode {

double control_at(const ControlSeries& c, double t) {
    const double tol = 1e-9 * c.dt;
    const double span = c.t_end();
    if (t < c.t0 - tol || t > span + tol) {
        throw RangeError("control queried at t=" + std::to_string(t) + " outside [" +
                         std::to_string(c.t0) + ", " + std::to_string(span) + "]");
    }
    if (t <= c.t0) return c.values.front();
    if (t >= span) return c.values.back();
    const double u = (t - c.t0) / c.dt;
    auto i = static_cast<std::size_t>(std::floor(u));
    if (i >= c.values.size() - 1) i = c.values.size() - 2;
    const double frac = u - static_cast<double>(i);
    return c.values[i] + frac * (c.values[i + 1] - c.values[i]);
}

namespace {

// Controls seen by the four stages of step n. Sample points and midpoints
// are taken directly from the data so they are exact.
struct StageControls {
    double start, mid, end;
};

StageControls stage_controls(const ControlSeries& c, std::size_t n) {
    const double a = c.values[n];
    const double b = c.values[n + 1];
    return {a, 0.5 * (a + b), b};
}

double model_rhs(const fd::FdModel& m, double rho, double x, std::size_t step) {
    const double u = m.speed(rho, x);
    if (!std::isfinite(u)) throw NumericalFailure("model produced a non-finite speed", step);
    return u;
}

// Forward sweep recording the state at the start of each step.
std::vector<double> forward_states(const fd::FdModel& m, double x0, const ControlSeries& c) {
    std::vector<double> xs;
    xs.reserve(c.size());
    xs.push_back(x0);
    const double h = c.dt;
    double x = x0;
    for (std::size_t n = 0; n + 1 < c.size(); ++n) {
        const auto rc = stage_controls(c, n);
        const double k1 = model_rhs(m, rc.start, x, n);
        const double k2 = model_rhs(m, rc.mid, x + 0.5 * h * k1, n);
        const double k3 = model_rhs(m, rc.mid, x + 0.5 * h * k2, n);
        const double k4 = model_rhs(m, rc.end, x + h * k3, n);
        x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!std::isfinite(x)) throw NumericalFailure("trajectory state became non-finite", n);
        xs.push_back(x);
    }
    return xs;
}

}  // namespace

SimTrajectory integrate_trajectory(const fd::FdModel& model, double x0,
                                   const ControlSeries& control) {
    control.validate();
    return SimTrajectory{control.t0, control.dt, forward_states(model, x0, control)};
}

BackpropResult backprop_trajectory(const fd::FdModel& model, const ControlSeries& control,
                                   const Trajectory& reference) {
    control.validate();
    if (reference.size() != control.size() ||
        std::abs(reference.dt - control.dt) > 1e-12 * control.dt ||
        std::abs(reference.t0 - control.t0) > 1e-9 * control.dt) {
        throw ContractViolation("reference trajectory and control series grids differ");
    }

    const auto xs = forward_states(model, reference.positions.front(), control);
    const std::size_t n_samples = xs.size();

    BackpropResult out;
    out.grad.assign(model.parameter_count(), 0.0);
    for (std::size_t k = 0; k < n_samples; ++k) {
        const double r = reference.positions[k] - xs[k];
        out.sq_error += r * r;
    }

    const double h = control.dt;
    // adj = d sq_error / d xhat_{n+1}, accumulated backwards.
    double adj = -2.0 * (reference.positions[n_samples - 1] - xs[n_samples - 1]);
    for (std::size_t n = n_samples - 1; n-- > 0;) {
        const auto rc = stage_controls(control, n);
        const double x = xs[n];

        // Recompute the stage states of this step.
        const double k1 = model.speed(rc.start, x);
        const double s2 = x + 0.5 * h * k1;
        const double k2 = model.speed(rc.mid, s2);
        const double s3 = x + 0.5 * h * k2;
        const double k3 = model.speed(rc.mid, s3);
        const double s4 = x + h * k3;

        double x_bar = adj;
        double k1_bar = adj * h / 6.0;
        double k2_bar = adj * h / 3.0;
        double k3_bar = adj * h / 3.0;
        const double k4_bar = adj * h / 6.0;

        double s_bar = 0.0;
        model.speed_vjp(rc.end, s4, k4_bar, out.grad, s_bar);
        x_bar += s_bar;
        k3_bar += h * s_bar;

        model.speed_vjp(rc.mid, s3, k3_bar, out.grad, s_bar);
        x_bar += s_bar;
        k2_bar += 0.5 * h * s_bar;

        model.speed_vjp(rc.mid, s2, k2_bar, out.grad, s_bar);
        x_bar += s_bar;
        k1_bar += 0.5 * h * s_bar;

        model.speed_vjp(rc.start, x, k1_bar, out.grad, s_bar);
        x_bar += s_bar;

        // x_n also enters the loss directly (k = 0 residual is zero by construction).
        adj = x_bar - 2.0 * (reference.positions[n] - x);
    }
    return out;
}

}  // namespace ode
}  // namespace neuralfd
